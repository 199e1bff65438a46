#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace missvae {

/// Tukey box: quartiles by linear interpolation, whiskers at the most extreme
/// points within 1.5 IQR of the box.
struct BoxStats {
  double q1 = 0.0, median = 0.0, q3 = 0.0, mean = 0.0;
  double whisker_lo = 0.0, whisker_hi = 0.0;
  std::vector<double> outliers;
};
BoxStats box_stats(std::vector<double> values);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_lines(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, bool markers = false);
/// One box per group, in the map's order.
std::string svg_boxes(const std::map<std::string, std::vector<double>>& groups, const std::string& title,
                      const std::string& ylabel);
/// Heatmaps of density fields on a 2D grid, one panel per field.
std::string svg_heatmaps(const std::vector<std::string>& names, const std::vector<std::vector<double>>& fields, int nx, int ny,
                         const std::string& title);

enum class FigureKind { curves, box, heatmap, control };
FigureKind figure_from_string(const std::string& s);

/// Renders from serialized outputs only. curves: run dirs (metrics.jsonl);
/// box: run dirs (summary.json); heatmap: grid CSV files; control: a
/// control-study results.csv. Throws IngestionError listing absent inputs.
void plot(FigureKind kind, const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out,
          const std::string& metric = "");

} // namespace missvae
