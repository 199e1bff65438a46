#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <json.hpp>

#include "missvae/rng.hpp"
#include "missvae/types.hpp"

namespace missvae {

/// Mixture of full-covariance Gaussians. Means are stored one column per component.
struct MoGParams {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  std::vector<Eigen::MatrixXd> covariances;
  /// Generator provenance, when produced by generate_mog.
  std::optional<std::uint64_t> seed;

  Index components() const { return weights.size(); }
  Index dim() const { return means.rows(); }

  /// Throws ParameterError unless weights sum to one (1e-9), covariances are
  /// symmetric positive definite and shapes agree.
  void validate() const;
};

nlohmann::json mog_to_json(const MoGParams& params);
MoGParams mog_from_json(const nlohmann::json& doc);

/// Random standardized mixture: inverse-Wishart(nu = dim, Psi = I) covariances,
/// N(0, 3^2) means, Dirichlet(1) weights, then an affine map giving every
/// marginal zero mean and unit variance.
MoGParams generate_mog(std::uint64_t seed, Index dim, Index components);

/// Draws via component-then-Gaussian ancestral sampling; one column per draw.
/// When `components_out` is given it receives the component index of each draw.
Eigen::MatrixXd mog_sample(const MoGParams& params, Index n, Rng& rng,
                           Eigen::VectorXi* components_out = nullptr);

Eigen::VectorXd mog_mean(const MoGParams& params);
Eigen::MatrixXd mog_covariance(const MoGParams& params);

/// Cached Cholesky factors for repeated density evaluation.
class MoGDensity {
public:
  explicit MoGDensity(const MoGParams& params);
  double log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Per-component log w_c + log N(x; mu_c, Sigma_c).
  Eigen::VectorXd component_log_joint(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  const MoGParams& params() const { return params_; }

private:
  MoGParams params_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_;
  Eigen::VectorXd log_norm_;
};

double mog_logpdf(const MoGParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Marginal over the listed dimensions (in the given order).
MoGParams mog_marginal(const MoGParams& params, const std::vector<Index>& dims);

/// p(x_mis | x_obs) as a mixture over the missing dimensions in increasing
/// index order. A fully missing mask returns the joint unchanged.
MoGParams mog_conditional(const MoGParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::Ref<const Mask>& mask);

/// Product of the one-dimensional marginals over `dims`, enumerated as a
/// mixture with C^|dims| diagonal components. Throws ParameterError above
/// `max_components`.
MoGParams product_of_marginals(const MoGParams& params, const std::vector<Index>& dims,
                               Index max_components = 1 << 16);

/// Widening oracle. alpha in [0, 1] moves mixture mass from the conditional to
/// the product of unconditional marginals; alpha in (1, 2] shrinks every
/// component of that product toward N(0, I).
MoGParams oracle_widen(const MoGParams& conditional, const MoGParams& marginal_product, double alpha);

/// Oversampling oracle: weights (1 - beta) w + beta / C, components unchanged.
MoGParams oracle_oversample(const MoGParams& conditional, double beta);

} // namespace missvae
