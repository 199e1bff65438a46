#pragma once

#include <Eigen/Core>

#include "missvae/types.hpp"
#include "missvae/vae.hpp"

namespace missvae {

/// Tensor-product trapezoidal grid over [lo, hi]^L for L <= 2.
struct QuadratureGrid {
  double lo = -6.0;
  double hi = 6.0;
  Index resolution = 256;
  Index latent_dim = 2;

  /// Throws ParameterError unless resolution >= 64, hi - lo >= 6 and lo < 0 < hi;
  /// UnsupportedError for latent_dim > 2.
  void validate() const;
  Index size() const;
  double spacing() const { return (hi - lo) / static_cast<double>(resolution - 1); }
  double cell_volume() const;
  /// Node coordinates, one column per node; the first latent dim varies fastest.
  Eigen::MatrixXd nodes() const;
  /// log of the trapezoid weight of each node.
  Eigen::VectorXd log_weights() const;
  QuadratureGrid refined() const;
};

/// Decoder evaluated once on every grid node, for repeated per-row quadrature.
class GridEvaluator {
public:
  GridEvaluator(const VAEModel& model, const QuadratureGrid& grid, Index chunk = 8192);

  const QuadratureGrid& grid() const { return grid_; }
  const Eigen::MatrixXd& nodes() const { return nodes_; }
  /// log prior + log trapezoid weight at each node.
  const Eigen::VectorXd& log_prior_weight() const { return log_prior_weight_; }
  const Eigen::VectorXd& log_weights() const { return log_w_; }

  /// log p(x_obs | z_g) at every node.
  Eigen::VectorXd node_loglik(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const;
  /// log of the quadrature estimate of p(x_obs).
  double loglik(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const;
  /// Posterior density p(z | x_obs) at each node, normalized under the trapezoid weights.
  Eigen::VectorXd posterior_density(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const;
  /// log of the posterior mass carried by each node (sums to one in linear space).
  Eigen::VectorXd posterior_log_mass(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const;
  /// max over nodes of p(x_obs | z_g).
  double max_log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const;

  DecoderFamily family() const { return family_; }
  const Eigen::MatrixXd& mean() const { return mean_; }
  const Eigen::MatrixXd& std() const { return std_; }

private:
  QuadratureGrid grid_;
  DecoderFamily family_;
  Eigen::MatrixXd nodes_;
  Eigen::VectorXd log_prior_weight_;
  Eigen::VectorXd log_w_;
  Eigen::MatrixXd mean_;
  Eigen::MatrixXd std_;
  Eigen::MatrixXd log_std_;
  Eigen::MatrixXd log1m_;
  Eigen::MatrixXd logp_;
};

} // namespace missvae
