#include "missvae/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "missvae/checkpoint.hpp"
#include "missvae/errors.hpp"

namespace missvae {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

std::string header(double w, double h, const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" viewBox=\"0 0 "
    << num(w) << " " << num(h) << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << num(w / 2) << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  return s.str();
}

std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel, bool xticks = true) {
  std::ostringstream s;
  const double l = kLeft, r = kWidth - kRight, t = kTop, b = kHeight - kBottom;
  s << "<rect x=\"" << num(l) << "\" y=\"" << num(t) << "\" width=\"" << num(r - l) << "\" height=\"" << num(b - t)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << num(l - 6) << "\" y=\"" << num(f.py(yv) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(yv) << "</text>\n";
    if (xticks) {
      const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
      s << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(b + 14)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << num(xv) << "</text>\n";
    }
  }
  s << "<text x=\"" << num((l + r) / 2) << "\" y=\"" << num(kHeight - 10)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
  s << "<text x=\"16\" y=\"" << num((t + b) / 2) << "\" transform=\"rotate(-90 16 " << num((t + b) / 2)
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(ylabel) << "</text>\n";
  return s.str();
}

void require_inputs(const std::vector<fs::path>& paths) {
  std::string missing;
  for (const auto& p : paths)
    if (!fs::exists(p)) missing += (missing.empty() ? "" : ", ") + p.string();
  if (!missing.empty()) throw IngestionError("missing plot inputs: " + missing);
  if (paths.empty()) throw IngestionError("no plot inputs given");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

} // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw ParameterError("box_stats: no values");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  b.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.q1;
  b.whisker_hi = b.q3;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      b.outliers.push_back(v);
      continue;
    }
    b.whisker_lo = std::min(b.whisker_lo, v);
    b.whisker_hi = std::max(b.whisker_hi, v);
  }
  return b;
}

std::string svg_lines(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, bool markers) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  pad_range(x0, x1);
  pad_range(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::ostringstream s;
  s << header(kWidth, kHeight, title) << axes(f, xlabel, ylabel);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % 8];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i)
      if (std::isfinite(series[k].y[i])) s << num(f.px(series[k].x[i])) << "," << num(f.py(series[k].y[i])) << " ";
    s << "\"/>\n";
    if (markers)
      for (std::size_t i = 0; i < series[k].x.size(); ++i)
        if (std::isfinite(series[k].y[i]))
          s << "<circle cx=\"" << num(f.px(series[k].x[i])) << "\" cy=\"" << num(f.py(series[k].y[i])) << "\" r=\"3\" fill=\""
            << color << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(k) + 8;
    s << "<line x1=\"" << num(kWidth - kRight + 10) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kWidth - kRight + 28)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << num(kWidth - kRight + 32) << "\" y=\"" << num(ly + 4)
      << "\" font-family=\"sans-serif\" font-size=\"10\">" << escape(series[k].label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_boxes(const std::map<std::string, std::vector<double>>& groups, const std::string& title,
                      const std::string& ylabel) {
  std::vector<std::pair<std::string, BoxStats>> stats;
  double y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
  for (const auto& [name, v] : groups) {
    BoxStats b = box_stats(v);
    y0 = std::min({y0, b.whisker_lo, b.outliers.empty() ? y0 : *std::min_element(b.outliers.begin(), b.outliers.end())});
    y1 = std::max({y1, b.whisker_hi, b.outliers.empty() ? y1 : *std::max_element(b.outliers.begin(), b.outliers.end())});
    stats.emplace_back(name, std::move(b));
  }
  pad_range(y0, y1);
  const Frame f{0.0, static_cast<double>(stats.size()), y0, y1};
  std::ostringstream s;
  s << header(kWidth, kHeight, title) << axes(f, "", ylabel, false);
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto& [name, b] = stats[k];
    const double cx = f.px(static_cast<double>(k) + 0.5);
    const double hw = 0.3 * (f.px(1.0) - f.px(0.0));
    const char* color = kPalette[k % 8];
    s << "<line x1=\"" << num(cx) << "\" y1=\"" << num(f.py(b.whisker_lo)) << "\" x2=\"" << num(cx) << "\" y2=\""
      << num(f.py(b.q1)) << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << num(cx) << "\" y1=\"" << num(f.py(b.q3)) << "\" x2=\"" << num(cx) << "\" y2=\""
      << num(f.py(b.whisker_hi)) << "\" stroke=\"black\"/>\n";
    for (double w : {b.whisker_lo, b.whisker_hi})
      s << "<line x1=\"" << num(cx - hw / 2) << "\" y1=\"" << num(f.py(w)) << "\" x2=\"" << num(cx + hw / 2) << "\" y2=\""
        << num(f.py(w)) << "\" stroke=\"black\"/>\n";
    s << "<rect x=\"" << num(cx - hw) << "\" y=\"" << num(f.py(b.q3)) << "\" width=\"" << num(2 * hw) << "\" height=\""
      << num(f.py(b.q1) - f.py(b.q3)) << "\" fill=\"" << color << "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n";
    s << "<line class=\"median\" x1=\"" << num(cx - hw) << "\" y1=\"" << num(f.py(b.median)) << "\" x2=\"" << num(cx + hw)
      << "\" y2=\"" << num(f.py(b.median)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    s << "<path class=\"mean\" d=\"M" << num(cx) << " " << num(f.py(b.mean) - 4) << " L" << num(cx + 4) << " "
      << num(f.py(b.mean)) << " L" << num(cx) << " " << num(f.py(b.mean) + 4) << " L" << num(cx - 4) << " "
      << num(f.py(b.mean)) << " Z\" fill=\"white\" stroke=\"black\"/>\n";
    for (double o : b.outliers)
      s << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(f.py(o)) << "\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>\n";
    s << "<text x=\"" << num(cx) << "\" y=\"" << num(kHeight - kBottom + 14)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << escape(name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_heatmaps(const std::vector<std::string>& names, const std::vector<std::vector<double>>& fields, int nx, int ny,
                         const std::string& title) {
  const double panel = 220, gap = 20;
  const double w = gap + static_cast<double>(fields.size()) * (panel + gap), h = panel + 70;
  std::ostringstream s;
  s << header(w, h, title);
  const double cw = panel / nx, ch = panel / ny;
  for (std::size_t p = 0; p < fields.size(); ++p) {
    const auto& v = fields[p];
    const double vmax = std::max(*std::max_element(v.begin(), v.end()), 1e-300);
    const double ox = gap + static_cast<double>(p) * (panel + gap), oy = 40;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const double t = std::clamp(v[static_cast<std::size_t>(j * nx + i)] / vmax, 0.0, 1.0);
        if (t < 1e-3) continue;
        const int shade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
        s << "<rect x=\"" << num(ox + i * cw) << "\" y=\"" << num(oy + (ny - 1 - j) * ch) << "\" width=\"" << num(cw + 0.05)
          << "\" height=\"" << num(ch + 0.05) << "\" fill=\"rgb(" << shade << "," << shade << ",255)\"/>\n";
      }
    s << "<rect x=\"" << num(ox) << "\" y=\"" << num(oy) << "\" width=\"" << num(panel) << "\" height=\"" << num(panel)
      << "\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"" << num(ox + panel / 2) << "\" y=\"" << num(oy + panel + 18)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape(names[p]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

FigureKind figure_from_string(const std::string& s) {
  if (s == "curves") return FigureKind::curves;
  if (s == "box") return FigureKind::box;
  if (s == "heatmap") return FigureKind::heatmap;
  if (s == "control") return FigureKind::control;
  throw ConfigError("unknown figure kind '" + s + "'");
}

void plot(FigureKind kind, const std::vector<fs::path>& inputs, const fs::path& out, const std::string& metric) {
  switch (kind) {
    case FigureKind::curves: {
      std::vector<fs::path> files;
      for (const auto& d : inputs) files.push_back(d / "metrics.jsonl");
      require_inputs(files);
      const std::string m = metric.empty() ? "train_objective" : metric;
      std::vector<Series> series;
      for (std::size_t i = 0; i < files.size(); ++i) {
        Series s;
        s.label = inputs[i].filename().string();
        std::ifstream in(files[i]);
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const auto r = nlohmann::json::parse(line);
          if (r.at("metric") != m) continue;
          if (s.x.empty() && r.contains("run_id") && !r["run_id"].get<std::string>().empty())
            s.label = r["run_id"].get<std::string>();
          s.x.push_back(r.at("epoch").get<double>());
          s.y.push_back(r.at("value").is_null() ? std::numeric_limits<double>::quiet_NaN() : r.at("value").get<double>());
        }
        series.push_back(std::move(s));
      }
      write_file_atomic(out, svg_lines(series, m, "epoch", m));
      return;
    }
    case FigureKind::box: {
      std::vector<fs::path> files;
      for (const auto& d : inputs) files.push_back(d / "summary.json");
      require_inputs(files);
      const std::string m = metric.empty() ? "grid_loglik" : metric;
      std::map<std::string, std::vector<double>> groups;
      for (const auto& f : files) {
        std::ifstream in(f);
        const auto doc = nlohmann::json::parse(in);
        if (!doc.contains(m) || doc[m].is_null()) throw IngestionError(f.string() + " has no metric " + m);
        groups[doc.value("method", std::string("run"))].push_back(doc[m].get<double>());
      }
      write_file_atomic(out, svg_boxes(groups, m, m));
      return;
    }
    case FigureKind::heatmap: {
      require_inputs(inputs);
      std::vector<std::string> names;
      std::vector<std::vector<double>> fields;
      int nx = 0, ny = 0;
      for (const auto& f : inputs) {
        std::ifstream in(f);
        std::string line;
        std::getline(in, line);
        const auto cols = split_csv(line);
        if (cols.size() < 3 || cols[0] != "z1" || cols[1] != "z2") throw IngestionError(f.string() + ": not a 2D grid file");
        const std::size_t base = fields.size();
        for (std::size_t c = 2; c < cols.size(); ++c) {
          names.push_back(f.stem().string() + ": " + cols[c]);
          fields.emplace_back();
        }
        std::vector<double> z1;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const auto cells = split_csv(line);
          z1.push_back(std::stod(cells[0]));
          for (std::size_t c = 2; c < cells.size(); ++c) fields[base + c - 2].push_back(std::stod(cells[c]));
        }
        int n1 = 0;
        while (n1 < static_cast<int>(z1.size()) && (n1 == 0 || z1[static_cast<std::size_t>(n1)] != z1[0])) ++n1;
        nx = n1;
        ny = nx ? static_cast<int>(z1.size()) / nx : 0;
      }
      if (nx == 0 || ny == 0) throw IngestionError("empty grid file");
      write_file_atomic(out, svg_heatmaps(names, fields, nx, ny, metric.empty() ? "posterior densities" : metric));
      return;
    }
    case FigureKind::control: {
      require_inputs(inputs);
      std::map<std::string, std::map<double, std::vector<double>>> lines;
      for (const auto& f : inputs) {
        std::ifstream in(f);
        std::string line;
        std::getline(in, line);
        if (line.rfind("method,sweep,alpha,beta,seed,js,grid_loglik", 0) != 0)
          throw IngestionError(f.string() + ": not a control-study results file");
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const auto c = split_csv(line);
          if (c.size() < 7 || c[5].empty()) continue;
          const double js = std::stod(c[5]), ll = std::stod(c[6]);
          if (c[1] == "exact") {
            lines[c[0] + " (alpha)"][js].push_back(ll);
            lines[c[0] + " (beta)"][js].push_back(ll);
          } else {
            lines[c[0] + " (" + c[1] + ")"][js].push_back(ll);
          }
        }
      }
      std::vector<Series> series;
      for (const auto& [name, pts] : lines) {
        Series s;
        s.label = name;
        for (const auto& [js, vals] : pts) {
          s.x.push_back(js);
          s.y.push_back(box_stats(vals).median);
        }
        series.push_back(std::move(s));
      }
      write_file_atomic(out, svg_lines(series, "control study", "JS(imputations, exact conditional)",
                                       metric.empty() ? "median grid_loglik" : metric, true));
      return;
    }
  }
}

} // namespace missvae
