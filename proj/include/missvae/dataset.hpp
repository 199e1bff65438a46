#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "missvae/rng.hpp"
#include "missvae/types.hpp"

namespace missvae {

enum class FeatureKind { continuous, binary };

/// Rows of values with observedness masks. Storage is one column per data
/// point. Missing entries hold 0; consumers must read the mask.
struct IncompleteDataset {
  Eigen::MatrixXd values;
  MaskMatrix mask;
  std::vector<FeatureKind> kinds;

  Index size() const { return values.cols(); }
  Index dim() const { return values.rows(); }
  RowRef row(Index i) const { return {values.col(i), mask.col(i)}; }
  Index observed_count() const { return mask.count(); }

  /// Throws ParameterError on shape mismatch, non-finite observed values, or
  /// (unless allowed) a row with no observed entry.
  void validate(bool allow_empty_rows = false) const;
};

/// Complete-data dataset with an all-ones mask.
IncompleteDataset make_complete(const Eigen::MatrixXd& data, FeatureKind kind = FeatureKind::continuous);

/// Independent masking of every entry with probability `rate`. Rows left with
/// nothing observed are re-drawn.
IncompleteDataset apply_uniform_mcar(const Eigen::MatrixXd& data, double rate, Rng& rng);

/// Masks 2 of the 4 quadrants of each H×W image (row-major pixels), chosen
/// uniformly without replacement. Dims are tagged binary.
IncompleteDataset apply_quadrant_missingness(const Eigen::MatrixXd& images, Index height, Index width, Rng& rng);

/// Empty cells and cells equal to `missing_token` become unobserved.
IncompleteDataset load_csv(const std::filesystem::path& path, const std::string& missing_token = "");
/// Missing entries written as empty cells. Values use round-trip precision.
void write_csv(const IncompleteDataset& data, const std::filesystem::path& path);

/// (values with missing entries zeroed, mask) stacked into length 2D.
Eigen::VectorXd zero_mask_encode(const Eigen::Ref<const Eigen::VectorXd>& values,
                                 const Eigen::Ref<const Mask>& mask);
/// Column-wise zero_mask_encode of the selected rows; 2D × indices.size().
Eigen::MatrixXd zero_mask_encode_batch(const IncompleteDataset& data, const std::vector<Index>& indices);

struct StandardizationRecord {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  nlohmann::json to_json() const;
  static StandardizationRecord from_json(const nlohmann::json& doc);
};

/// Standardizes observed entries per dimension using observed-data moments
/// (population standard deviation).
std::pair<IncompleteDataset, StandardizationRecord> standardize_observed(const IncompleteDataset& data);
IncompleteDataset invert_standardization(const IncompleteDataset& data, const StandardizationRecord& record);

/// Dataset bundle directory: values.csv, masks.csv, meta.json.
struct DatasetBundle {
  IncompleteDataset data;
  /// Fully observed values, when the generator knows them (synthetic data).
  std::optional<Eigen::MatrixXd> complete;
  std::optional<StandardizationRecord> standardization;
  nlohmann::json provenance = nlohmann::json::object();
};

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

} // namespace missvae
