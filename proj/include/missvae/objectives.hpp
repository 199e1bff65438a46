#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "missvae/dataset.hpp"
#include "missvae/mixture.hpp"
#include "missvae/vae.hpp"

namespace missvae {

enum class Bound { elbo, iwelbo, selbo, siwelbo, siwelbo_loose };
enum class SamplingScheme { ancestral, stratified };

std::string to_string(Bound b);

/// Z repeats of the bound; K mixture components; I importance samples (per
/// component when stratified).
struct SampleBudget {
  Index z = 1;
  Index k = 1;
  Index i = 1;
  SamplingScheme scheme = SamplingScheme::ancestral;

  /// Variational samples drawn per data point.
  Index total() const { return scheme == SamplingScheme::stratified ? z * k * i : z * i; }
};

struct BoundEstimate {
  double value = 0.0;
  Eigen::VectorXd per_datapoint;
  /// Per-repeat values of a single-row estimate (empty for dataset estimates).
  Eigen::VectorXd per_repeat;
  SampleBudget budget;

  /// Standard error of the repeat mean; 0 with a single repeat.
  double stderr_of_mean() const;
};

/// Draws Z repeats for one row, laid out [repeat][component][j] (stratified) or [repeat][j].
LatentSampleBatch sample_for_bound(const MixtureParams& psi, const SampleBudget& budget, Rng& rng);

/// log w(z) = log p(x_obs | z) + log p(z) - log q(z | x_obs) for each sample.
Eigen::VectorXd log_importance_weights(const VAEModel& model, const MixtureParams& psi, const RowRef& row,
                                       const LatentSampleBatch& batch);

/// Bound value from log weights; samples grouped into `repeats` equal blocks.
BoundEstimate bound_from_log_weights(Bound bound, const Eigen::Ref<const Eigen::VectorXd>& log_w,
                                     const MixtureParams& psi, Index repeats);

/// Value of one repeat and its derivatives with respect to log w and log pi.
double bound_repeat_value(Bound bound, const double* log_w, const Eigen::Ref<const Eigen::VectorXd>& log_pi, Index per_component,
                          double* d_log_w, double* d_log_pi);

BoundEstimate elbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch,
                   Index repeats = 1);
BoundEstimate iwelbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch,
                     Index importance_samples);
BoundEstimate selbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch);
BoundEstimate siwelbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch);
BoundEstimate siwelbo_loose(const VAEModel& model, const MixtureParams& psi, const RowRef& row,
                            const LatentSampleBatch& batch);

struct ObjectiveSpec {
  Bound bound = Bound::elbo;
  SampleBudget budget;
  /// Sticking-the-landing: drop the score term of log q from the phi-gradient.
  bool stl = true;
};

struct ObjectiveGradient {
  double value = 0.0;
  Eigen::VectorXd per_row;
  Eigen::VectorXd grad_theta;
  Eigen::VectorXd grad_phi;
};

/// Minibatch mean of the bound and its gradients with respect to (theta, phi).
/// Ancestral mixtures with K > 1 use implicit reparametrization; everything
/// else the explicit path z = mu_k + sigma_k * eps.
ObjectiveGradient objective_gradient(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data,
                                     const std::vector<Index>& rows, const ObjectiveSpec& spec, Rng& rng,
                                     PassCounter* counter = nullptr, bool need_theta = true, bool need_phi = true);

/// Minibatch mean of the bound only (no caches, no gradients).
double objective_value(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data,
                       const std::vector<Index>& rows, const ObjectiveSpec& spec, Rng& rng, Eigen::VectorXd* per_row = nullptr);

/// Validates that the bound matches the sampling scheme and budget shape.
void validate_objective(const ObjectiveSpec& spec);

} // namespace missvae
