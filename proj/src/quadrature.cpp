#include "missvae/quadrature.hpp"

#include <cmath>

#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"

namespace missvae {

void QuadratureGrid::validate() const {
  if (latent_dim > 2) throw UnsupportedError("quadrature grids support at most 2 latent dimensions");
  if (latent_dim < 1) throw ParameterError("QuadratureGrid: latent_dim must be positive");
  if (resolution < 64) throw ParameterError("QuadratureGrid: resolution must be >= 64");
  if (!(lo < 0.0 && hi > 0.0) || hi - lo < 6.0)
    throw ParameterError("QuadratureGrid: bounds must straddle 0 and span at least 6 prior standard deviations");
}

Index QuadratureGrid::size() const { return latent_dim == 1 ? resolution : resolution * resolution; }

double QuadratureGrid::cell_volume() const { return latent_dim == 1 ? spacing() : spacing() * spacing(); }

Eigen::MatrixXd QuadratureGrid::nodes() const {
  validate();
  const Eigen::VectorXd axis = Eigen::VectorXd::LinSpaced(resolution, lo, hi);
  Eigen::MatrixXd out(latent_dim, size());
  if (latent_dim == 1) {
    out.row(0) = axis.transpose();
    return out;
  }
  for (Index j = 0; j < resolution; ++j)
    for (Index i = 0; i < resolution; ++i) {
      out(0, j * resolution + i) = axis[i];
      out(1, j * resolution + i) = axis[j];
    }
  return out;
}

Eigen::VectorXd QuadratureGrid::log_weights() const {
  validate();
  const double h = spacing();
  Eigen::VectorXd w1 = Eigen::VectorXd::Constant(resolution, h);
  w1[0] *= 0.5;
  w1[resolution - 1] *= 0.5;
  const Eigen::VectorXd lw1 = w1.array().log();
  if (latent_dim == 1) return lw1;
  Eigen::VectorXd out(size());
  for (Index j = 0; j < resolution; ++j)
    for (Index i = 0; i < resolution; ++i) out[j * resolution + i] = lw1[i] + lw1[j];
  return out;
}

QuadratureGrid QuadratureGrid::refined() const {
  QuadratureGrid g = *this;
  g.resolution = 2 * resolution - 1;
  return g;
}

GridEvaluator::GridEvaluator(const VAEModel& model, const QuadratureGrid& grid, Index chunk)
    : grid_(grid), family_(model.family) {
  if (model.latent_dim != grid.latent_dim) {
    if (model.latent_dim > 2) throw UnsupportedError("grid evaluation needs a latent dimension of at most 2");
    grid_.latent_dim = model.latent_dim;
  }
  grid_.validate();
  nodes_ = grid_.nodes();
  log_w_ = grid_.log_weights();
  log_prior_weight_ = prior_logpdf_batch(nodes_) + log_w_;
  const Index g = nodes_.cols();
  mean_.resize(model.data_dim, g);
  if (family_ == DecoderFamily::gaussian) std_.resize(model.data_dim, g);
  for (Index start = 0; start < g; start += chunk) {
    const Index n = std::min(chunk, g - start);
    const DecoderOutput eta = decoder_forward(model, nodes_.middleCols(start, n));
    mean_.middleCols(start, n) = eta.mean;
    if (family_ == DecoderFamily::gaussian) std_.middleCols(start, n) = eta.std;
  }
  if (family_ == DecoderFamily::gaussian) {
    log_std_ = std_.array().log();
  } else {
    logp_ = mean_.array().log();
    log1m_ = (1.0 - mean_.array()).log();
  }
}

Eigen::VectorXd GridEvaluator::node_loglik(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const {
  if (x.size() != mean_.rows() || mask.size() != x.size()) throw ParameterError("grid: data dimension mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nodes_.cols());
  for (Index d = 0; d < x.size(); ++d) {
    if (!mask[d]) continue;
    if (family_ == DecoderFamily::gaussian) {
      const auto t = (x[d] - mean_.row(d).array()) / std_.row(d).array();
      out.array() += -0.5 * kLogTwoPi - log_std_.row(d).transpose().array() - 0.5 * t.square().transpose();
    } else {
      out.array() += (x[d] * logp_.row(d).array() + (1.0 - x[d]) * log1m_.row(d).array()).transpose();
    }
  }
  return out;
}

double GridEvaluator::loglik(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const {
  return log_sum_exp(node_loglik(x, mask) + log_prior_weight_);
}

Eigen::VectorXd GridEvaluator::posterior_log_mass(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                  const Eigen::Ref<const Mask>& mask) const {
  const Eigen::VectorXd lj = node_loglik(x, mask) + log_prior_weight_;
  return lj.array() - log_sum_exp(lj);
}

Eigen::VectorXd GridEvaluator::posterior_density(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                 const Eigen::Ref<const Mask>& mask) const {
  const Eigen::VectorXd lj = node_loglik(x, mask) + prior_logpdf_batch(nodes_);
  const double log_norm = log_sum_exp(lj + log_w_);
  return (lj.array() - log_norm).exp();
}

double GridEvaluator::max_log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Mask>& mask) const {
  return node_loglik(x, mask).maxCoeff();
}

} // namespace missvae
