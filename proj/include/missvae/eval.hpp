#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "missvae/dataset.hpp"
#include "missvae/mixture.hpp"
#include "missvae/mog.hpp"
#include "missvae/objectives.hpp"
#include "missvae/optim.hpp"
#include "missvae/quadrature.hpp"
#include "missvae/vae.hpp"

namespace missvae {

struct GridLoglik {
  double value = 0.0;
  /// Value on the grid with halved spacing, when refinement was checked.
  double refined_value = 0.0;
  /// True when the refinement changed the result by more than the tolerance.
  bool unstable = false;
};

/// log p(x_obs) by log-space trapezoidal quadrature over the latent grid.
GridLoglik grid_loglik(const VAEModel& model, const RowRef& row, const QuadratureGrid& grid = {},
                       bool check_refinement = false, double tolerance = 1e-3);

struct DatasetGridLoglik {
  double mean = 0.0;
  Eigen::VectorXd per_row;
  bool unstable = false;
  double refinement_delta = 0.0;
};

DatasetGridLoglik grid_loglik_dataset(const VAEModel& model, const IncompleteDataset& data, const QuadratureGrid& grid = {},
                                      bool check_refinement = false, double tolerance = 1e-3);

/// IWELBO with I samples from the encoder mixture (ancestral), accumulated in
/// chunks of `chunk` samples. The random draws do not depend on `chunk`.
BoundEstimate iwelbo_eval(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, Index importance_samples,
                          Rng& rng, Index chunk = 1000);

/// Updates only phi by ascending `spec` on `data` for `steps` minibatches.
Encoder encoder_finetune(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, Index steps,
                         Index batch_size, const ObjectiveSpec& spec, const OptimizerConfig& opt, Rng& rng);

struct SnrReport {
  double median_phi = 0.0;
  double median_theta = 0.0;
  Index excluded_phi = 0;
  Index excluded_theta = 0;
  Index gradient_samples = 0;
};

/// Returns (grad_theta, grad_phi) for a minibatch.
using GradientFn = std::function<std::pair<Eigen::VectorXd, Eigen::VectorXd>(const std::vector<Index>&, Rng&)>;

/// Per-coordinate |mean| / std of minibatch gradients over `epochs` shuffled
/// passes at fixed parameters, aggregated by the median separately for phi
/// and theta. Zero-variance coordinates are excluded and counted.
SnrReport gradient_snr(const GradientFn& gradient, Index rows, Index batch_size, Index epochs, Rng& rng);

/// Mean over rows of KL(p(z | x) || p(z | x_obs)) on the grid; `complete`
/// holds the fully observed values of each row.
double mi_posterior_gap(const VAEModel& model, const Eigen::Ref<const Eigen::MatrixXd>& complete, const MaskMatrix& mask,
                        const QuadratureGrid& grid = {});

/// Jensen-Shannon divergence (nats) between two densities tabulated on the same
/// nodes with the given log quadrature weights. Both are renormalized first.
double js_divergence_grid(const Eigen::Ref<const Eigen::VectorXd>& log_p, const Eigen::Ref<const Eigen::VectorXd>& log_q,
                          const Eigen::Ref<const Eigen::VectorXd>& log_weights);

/// Trapezoidal grid in data space covering both mixtures (at most 2 dims).
struct DataGrid {
  Eigen::MatrixXd nodes;
  Eigen::VectorXd log_weights;
};
DataGrid data_grid_for(const std::vector<const MoGParams*>& dists, Index resolution);

/// JS divergence between two analytic mixtures over the same <= 2 dims.
double js_divergence_mog(const MoGParams& p, const MoGParams& q, Index resolution = 0);

/// JS divergence between a sample set (Gaussian KDE, Scott bandwidth with a
/// floor) and an analytic mixture over the same <= 2 dims.
double js_divergence_samples(const Eigen::Ref<const Eigen::MatrixXd>& samples, const MoGParams& q, Index resolution = 0);

enum class PosteriorKind { model_complete, model_incomplete, variational, imputation_mixture };
std::string to_string(PosteriorKind k);

/// Density field on the latent grid nodes. Model posteriors are renormalized
/// on the grid; variational fields are the analytic densities.
/// model_complete reads `values` as fully observed. imputation_mixture
/// averages q(z | completion) over the columns of `completions`.
Eigen::VectorXd posterior_grid(const GridEvaluator& grid, const Encoder& enc, const Eigen::Ref<const Eigen::VectorXd>& values,
                               const Eigen::Ref<const Mask>& mask, PosteriorKind which,
                               const Eigen::Ref<const Eigen::MatrixXd>& completions = Eigen::MatrixXd());

} // namespace missvae
