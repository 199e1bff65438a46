#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "missvae/config.hpp"
#include "missvae/dataset.hpp"
#include "missvae/mog.hpp"
#include "missvae/trainer.hpp"

namespace missvae {

/// Ground-truth imputer with graded corruption. beta oversamples low-weight
/// components of the exact conditional; alpha widens it toward the product of
/// unconditional marginals (alpha <= 1) and then toward N(0, I) (alpha -> 2).
class ImputationOracle {
public:
  ImputationOracle(MoGParams truth, double alpha, double beta);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  /// Analytic imputation distribution over the missing dims of a row (increasing index order).
  MoGParams distribution(const RowRef& row) const;
  /// Exact conditional p*(x_mis | x_obs).
  MoGParams exact(const RowRef& row) const;
  /// Overwrites the missing entries of `completion` with one draw.
  void sample(const RowRef& row, Eigen::Ref<Eigen::VectorXd> completion, Rng& rng) const;
  /// Store-filling hook for the trainer; caches conditionals per row of `data`.
  Imputer imputer(const IncompleteDataset& data) const;

private:
  MoGParams truth_;
  std::vector<MoGParams> marginals_;
  double alpha_;
  double beta_;
};

struct ControlStudyConfig {
  /// DeMissVAE base config with a 2D latent space.
  ExperimentConfig base;
  std::string truth_path;
  std::vector<DemissMode> methods{DemissMode::split, DemissMode::cvi, DemissMode::mvb};
  std::vector<double> alphas{0.0, 0.5, 1.0, 1.5, 2.0};
  std::vector<double> betas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  /// Training rows (with one or two missing dims) averaged for the JS coordinate.
  Index js_rows = 200;
  Index js_resolution = 0;
  /// Also train each method with the config's own sampler (no oracle).
  bool include_sampler = false;

  static ControlStudyConfig from_json(const nlohmann::json& doc);
};

struct ControlStudyRow {
  std::string method;
  /// "exact", "alpha", "beta" or "sampler".
  std::string sweep;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> js;
  double grid_loglik = 0.0;

  nlohmann::json to_json() const;
};

/// Mean JS divergence between the exact conditional and the oracle over the
/// first `rows` rows of `data` with one or two missing dims.
double oracle_js_coordinate(const ImputationOracle& oracle, const IncompleteDataset& data, Index rows, Index resolution = 0);

/// Runs every (setting, method, seed) and writes results.jsonl and
/// results.csv into `out_dir` when non-empty.
std::vector<ControlStudyRow> run_control_study(const ControlStudyConfig& config, const IncompleteDataset& train,
                                               const DatasetBundle& test, const MoGParams& truth,
                                               const std::filesystem::path& out_dir = {});

} // namespace missvae
