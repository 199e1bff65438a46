#include "missvae/dataset.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "missvae/errors.hpp"

namespace missvae {

namespace fs = std::filesystem;

void IncompleteDataset::validate(bool allow_empty_rows) const {
  if (mask.rows() != values.rows() || mask.cols() != values.cols())
    throw ParameterError("IncompleteDataset: mask and values shapes differ");
  if (static_cast<Index>(kinds.size()) != values.rows())
    throw ParameterError("IncompleteDataset: feature kind count differs from dimension");
  for (Index i = 0; i < size(); ++i) {
    if (!allow_empty_rows && !mask.col(i).any())
      throw ParameterError("IncompleteDataset: row " + std::to_string(i) + " has no observed entry");
    for (Index d = 0; d < dim(); ++d)
      if (mask(d, i) && !std::isfinite(values(d, i)))
        throw ParameterError("IncompleteDataset: non-finite observed value at row " + std::to_string(i) +
                             ", column " + std::to_string(d));
  }
}

IncompleteDataset make_complete(const Eigen::MatrixXd& data, FeatureKind kind) {
  IncompleteDataset out;
  out.values = data;
  out.mask = MaskMatrix::Constant(data.rows(), data.cols(), true);
  out.kinds.assign(static_cast<std::size_t>(data.rows()), kind);
  return out;
}

IncompleteDataset apply_uniform_mcar(const Eigen::MatrixXd& data, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("apply_uniform_mcar: rate must lie in [0, 1)");
  IncompleteDataset out = make_complete(data);
  for (Index i = 0; i < out.size(); ++i) {
    do {
      for (Index d = 0; d < out.dim(); ++d) out.mask(d, i) = !(rng.uniform() < rate);
    } while (!out.mask.col(i).any());
    for (Index d = 0; d < out.dim(); ++d)
      if (!out.mask(d, i)) out.values(d, i) = 0.0;
  }
  return out;
}

IncompleteDataset apply_quadrant_missingness(const Eigen::MatrixXd& images, Index height, Index width, Rng& rng) {
  if (height < 2 || width < 2 || height % 2 != 0 || width % 2 != 0)
    throw ParameterError("apply_quadrant_missingness: height and width must be even");
  if (images.rows() != height * width) throw ParameterError("apply_quadrant_missingness: pixel count mismatch");
  IncompleteDataset out = make_complete(images, FeatureKind::binary);
  const Index hh = height / 2;
  const Index hw = width / 2;
  for (Index i = 0; i < out.size(); ++i) {
    std::array<Index, 4> quads{0, 1, 2, 3};
    // Partial Fisher-Yates: first two entries form the masked pair.
    for (Index j = 0; j < 2; ++j) std::swap(quads[static_cast<std::size_t>(j)],
                                            quads[static_cast<std::size_t>(j + rng.uniform_index(4 - j))]);
    for (Index j = 0; j < 2; ++j) {
      const Index q = quads[static_cast<std::size_t>(j)];
      const Index r0 = (q / 2) * hh;
      const Index c0 = (q % 2) * hw;
      for (Index r = r0; r < r0 + hh; ++r)
        for (Index c = c0; c < c0 + hw; ++c) {
          out.mask(r * width + c, i) = false;
          out.values(r * width + c, i) = 0.0;
        }
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  if (line.empty()) cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::vector<std::string>> read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() && line.find(',') == std::string::npos) continue;
    rows.push_back(split_cells(line));
  }
  return rows;
}

double parse_double(const std::string& cell, std::size_t row, std::size_t col, const fs::path& path) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw IngestionError(path.string() + ": non-numeric cell '" + cell + "' at row " + std::to_string(row + 1) +
                         ", column " + std::to_string(col + 1));
  return v;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_matrix_csv(const Eigen::MatrixXd& columns_are_rows, const MaskMatrix* mask, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (Index i = 0; i < columns_are_rows.cols(); ++i) {
    for (Index d = 0; d < columns_are_rows.rows(); ++d) {
      if (d > 0) out << ',';
      if (!mask || (*mask)(d, i)) out << format_double(columns_are_rows(d, i));
    }
    out << '\n';
  }
  if (!out) throw IngestionError("failed writing " + path.string());
}

} // namespace

IncompleteDataset load_csv(const fs::path& path, const std::string& missing_token) {
  const auto table = read_table(path);
  if (table.empty()) throw IngestionError(path.string() + ": no rows");
  const std::size_t cols = table[0].size();
  IncompleteDataset out;
  out.values = Eigen::MatrixXd::Zero(static_cast<Index>(cols), static_cast<Index>(table.size()));
  out.mask = MaskMatrix::Constant(static_cast<Index>(cols), static_cast<Index>(table.size()), false);
  out.kinds.assign(cols, FeatureKind::continuous);
  for (std::size_t r = 0; r < table.size(); ++r) {
    if (table[r].size() != cols)
      throw IngestionError(path.string() + ": row " + std::to_string(r + 1) + " has " +
                           std::to_string(table[r].size()) + " cells, expected " + std::to_string(cols));
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string cell = trim(table[r][c]);
      if (cell.empty() || (!missing_token.empty() && cell == missing_token)) continue;
      out.values(static_cast<Index>(c), static_cast<Index>(r)) = parse_double(cell, r, c, path);
      out.mask(static_cast<Index>(c), static_cast<Index>(r)) = true;
    }
  }
  return out;
}

void write_csv(const IncompleteDataset& data, const fs::path& path) {
  write_matrix_csv(data.values, &data.mask, path);
}

Eigen::VectorXd zero_mask_encode(const Eigen::Ref<const Eigen::VectorXd>& values, const Eigen::Ref<const Mask>& mask) {
  if (values.size() != mask.size()) throw ParameterError("zero_mask_encode: length mismatch");
  const Index d = values.size();
  Eigen::VectorXd out(2 * d);
  for (Index i = 0; i < d; ++i) {
    out[i] = mask[i] ? values[i] : 0.0;
    out[d + i] = mask[i] ? 1.0 : 0.0;
  }
  return out;
}

Eigen::MatrixXd zero_mask_encode_batch(const IncompleteDataset& data, const std::vector<Index>& indices) {
  Eigen::MatrixXd out(2 * data.dim(), static_cast<Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Index i = indices[j];
    out.col(static_cast<Index>(j)) = zero_mask_encode(data.values.col(i), data.mask.col(i));
  }
  return out;
}

nlohmann::json StandardizationRecord::to_json() const {
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"std", std::vector<double>(std.data(), std.data() + std.size())}};
}

StandardizationRecord StandardizationRecord::from_json(const nlohmann::json& doc) {
  const auto m = doc.at("mean").get<std::vector<double>>();
  const auto s = doc.at("std").get<std::vector<double>>();
  if (m.size() != s.size()) throw IngestionError("standardization record: length mismatch");
  StandardizationRecord r;
  r.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Index>(m.size()));
  r.std = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Index>(s.size()));
  return r;
}

std::pair<IncompleteDataset, StandardizationRecord> standardize_observed(const IncompleteDataset& data) {
  StandardizationRecord rec;
  rec.mean.resize(data.dim());
  rec.std.resize(data.dim());
  for (Index d = 0; d < data.dim(); ++d) {
    double n = 0.0, sum = 0.0;
    for (Index i = 0; i < data.size(); ++i)
      if (data.mask(d, i)) { n += 1.0; sum += data.values(d, i); }
    if (n < 2.0) throw ParameterError("standardize_observed: column " + std::to_string(d) + " has fewer than 2 observed entries");
    const double mean = sum / n;
    double ss = 0.0;
    for (Index i = 0; i < data.size(); ++i)
      if (data.mask(d, i)) ss += (data.values(d, i) - mean) * (data.values(d, i) - mean);
    const double sd = std::sqrt(ss / n);
    if (!(sd > 1e-12 * (1.0 + std::abs(mean))))
      throw ParameterError("standardize_observed: column " + std::to_string(d) + " is constant");
    rec.mean[d] = mean;
    rec.std[d] = sd;
  }
  IncompleteDataset out = data;
  for (Index i = 0; i < out.size(); ++i)
    for (Index d = 0; d < out.dim(); ++d)
      out.values(d, i) = out.mask(d, i) ? (data.values(d, i) - rec.mean[d]) / rec.std[d] : 0.0;
  return {std::move(out), rec};
}

IncompleteDataset invert_standardization(const IncompleteDataset& data, const StandardizationRecord& record) {
  if (record.mean.size() != data.dim()) throw ParameterError("invert_standardization: dimension mismatch");
  IncompleteDataset out = data;
  for (Index i = 0; i < out.size(); ++i)
    for (Index d = 0; d < out.dim(); ++d)
      out.values(d, i) = out.mask(d, i) ? data.values(d, i) * record.std[d] + record.mean[d] : 0.0;
  return out;
}

void save_bundle(const DatasetBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& data = bundle.data;
  write_matrix_csv(data.values, &data.mask, dir / "values.csv");
  Eigen::MatrixXd m = data.mask.cast<double>();
  write_matrix_csv(m, nullptr, dir / "masks.csv");
  if (bundle.complete) write_matrix_csv(*bundle.complete, nullptr, dir / "complete.csv");
  nlohmann::json meta;
  std::vector<std::string> kinds;
  for (auto k : data.kinds) kinds.push_back(k == FeatureKind::binary ? "binary" : "continuous");
  meta["feature_kinds"] = kinds;
  meta["rows"] = data.size();
  meta["dim"] = data.dim();
  meta["standardization"] = bundle.standardization ? bundle.standardization->to_json() : nlohmann::json(nullptr);
  meta["provenance"] = bundle.provenance;
  meta["has_complete"] = bundle.complete.has_value();
  std::ofstream out(dir / "meta.json");
  out << meta.dump(2) << '\n';
  if (!out) throw IngestionError("failed writing " + (dir / "meta.json").string());
}

DatasetBundle load_bundle(const fs::path& dir) {
  std::vector<std::string> absent;
  for (const char* name : {"values.csv", "masks.csv", "meta.json"})
    if (!fs::exists(dir / name)) absent.push_back(name);
  if (!absent.empty()) {
    std::string msg = dir.string() + ": missing";
    for (const auto& a : absent) msg += " " + a;
    throw IngestionError(msg);
  }
  nlohmann::json meta;
  try {
    std::ifstream in(dir / "meta.json");
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError((dir / "meta.json").string() + ": " + e.what());
  }
  DatasetBundle b;
  IncompleteDataset values = load_csv(dir / "values.csv");
  const IncompleteDataset masks = load_csv(dir / "masks.csv");
  if (masks.values.rows() != values.values.rows() || masks.values.cols() != values.values.cols())
    throw IngestionError(dir.string() + ": values.csv and masks.csv shapes differ");
  for (Index i = 0; i < values.size(); ++i)
    for (Index d = 0; d < values.dim(); ++d) {
      const double m = masks.values(d, i);
      if (m != 0.0 && m != 1.0) throw IngestionError(dir.string() + ": mask entries must be 0 or 1");
      if ((m == 1.0) != values.mask(d, i))
        throw IngestionError(dir.string() + ": mask disagrees with values at row " + std::to_string(i + 1) +
                             ", column " + std::to_string(d + 1));
    }
  const auto kinds = meta.at("feature_kinds").get<std::vector<std::string>>();
  if (static_cast<Index>(kinds.size()) != values.dim()) throw IngestionError("meta.json: feature_kinds length mismatch");
  for (std::size_t d = 0; d < kinds.size(); ++d)
    values.kinds[d] = kinds[d] == "binary" ? FeatureKind::binary : FeatureKind::continuous;
  b.data = std::move(values);
  if (meta.value("has_complete", false)) {
    const IncompleteDataset c = load_csv(dir / "complete.csv");
    if (!c.mask.all()) throw IngestionError(dir.string() + ": complete.csv has missing cells");
    b.complete = c.values;
  }
  if (meta.contains("standardization") && !meta["standardization"].is_null())
    b.standardization = StandardizationRecord::from_json(meta["standardization"]);
  if (meta.contains("provenance")) b.provenance = meta["provenance"];
  return b;
}

} // namespace missvae
