#include "missvae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"

namespace missvae {

VAEModel::VAEModel(Index data_dim_, Index latent_dim_, DecoderFamily family_, Index hidden, Index blocks)
    : data_dim(data_dim_), latent_dim(latent_dim_), family(family_) {
  if (data_dim < 1 || latent_dim < 1) throw ParameterError("VAEModel: dimensions must be positive");
  net = Mlp(MlpArch{latent_dim, raw_dim(), hidden, blocks});
  theta = Eigen::VectorXd::Zero(net.param_count());
}

DecoderOutput decoder_forward(const VAEModel& model, const Eigen::Ref<const Eigen::MatrixXd>& z, bool keep_cache,
                              PassCounter* counter) {
  if (z.rows() != model.latent_dim) throw ParameterError("decoder_forward: latent dimension mismatch");
  DecoderOutput out;
  out.family = model.family;
  out.raw = model.net.forward(model.theta, z, keep_cache ? &out.cache : nullptr, counter);
  const Index d = model.data_dim;
  for (Index s = 0; s < out.raw.cols(); ++s)
    if (!out.raw.col(s).allFinite())
      throw NumericError("decoder_forward: non-finite activation at batch index " + std::to_string(s));
  if (model.family == DecoderFamily::gaussian) {
    out.mean = out.raw.topRows(d);
    out.std = out.raw.bottomRows(d).unaryExpr([](double r) { return softplus(r) + kMinStd; });
  } else {
    out.mean = out.raw.unaryExpr(
        [](double r) { return std::clamp(sigmoid(r), kBernoulliClamp, 1.0 - kBernoulliClamp); });
  }
  return out;
}

namespace {

double dim_loglik(const DecoderOutput& eta, Index d, Index s, double x) {
  if (eta.family == DecoderFamily::gaussian) return normal_log_pdf(x, eta.mean(d, s), eta.std(d, s));
  const double p = eta.mean(d, s);
  return x * std::log(p) + (1.0 - x) * std::log1p(-p);
}

} // namespace

Eigen::VectorXd marginal_decoder_loglik(const DecoderOutput& eta, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        const Eigen::Ref<const Mask>& mask) {
  if (x.size() != eta.mean.rows() || mask.size() != x.size())
    throw ParameterError("marginal_decoder_loglik: dimension mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(eta.samples());
  for (Index s = 0; s < eta.samples(); ++s)
    for (Index d = 0; d < x.size(); ++d)
      if (mask[d]) out[s] += dim_loglik(eta, d, s, x[d]);
  return out;
}

Eigen::VectorXd marginal_decoder_loglik_columns(const DecoderOutput& eta, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                                const Eigen::Ref<const MaskMatrix>& mask) {
  if (x.rows() != eta.mean.rows() || x.cols() != eta.samples() || mask.rows() != x.rows() || mask.cols() != x.cols())
    throw ParameterError("marginal_decoder_loglik_columns: shape mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(eta.samples());
  for (Index s = 0; s < eta.samples(); ++s)
    for (Index d = 0; d < x.rows(); ++d)
      if (mask(d, s)) out[s] += dim_loglik(eta, d, s, x(d, s));
  return out;
}

Eigen::MatrixXd marginal_decoder_loglik_grad(const DecoderOutput& eta, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                             const Eigen::Ref<const MaskMatrix>& mask,
                                             const Eigen::Ref<const Eigen::VectorXd>& coeff) {
  const Index dim = eta.mean.rows();
  if (x.rows() != dim || x.cols() != eta.samples() || coeff.size() != eta.samples())
    throw ParameterError("marginal_decoder_loglik_grad: shape mismatch");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(eta.raw.rows(), eta.raw.cols());
  for (Index s = 0; s < eta.samples(); ++s) {
    const double c = coeff[s];
    if (c == 0.0) continue;
    for (Index d = 0; d < dim; ++d) {
      if (!mask(d, s)) continue;
      if (eta.family == DecoderFamily::gaussian) {
        const double sd = eta.std(d, s);
        const double diff = x(d, s) - eta.mean(d, s);
        grad(d, s) = c * diff / (sd * sd);
        const double dstd = -1.0 / sd + diff * diff / (sd * sd * sd);
        grad(dim + d, s) = c * dstd * sigmoid(eta.raw(dim + d, s));
      } else {
        const double p = eta.mean(d, s);
        const double unclamped = sigmoid(eta.raw(d, s));
        if (unclamped > kBernoulliClamp && unclamped < 1.0 - kBernoulliClamp) grad(d, s) = c * (x(d, s) - p);
      }
    }
  }
  return grad;
}

void decoder_backward(const VAEModel& model, const DecoderOutput& eta, const Eigen::Ref<const Eigen::MatrixXd>& grad_raw,
                      Eigen::VectorXd* grad_theta, Eigen::MatrixXd* grad_z, PassCounter* counter) {
  if (eta.cache.input.cols() != eta.samples())
    throw ParameterError("decoder_backward: forward pass was run without a cache");
  model.net.backward(model.theta, eta.cache, grad_raw, grad_theta, grad_z, counter);
}

Eigen::VectorXd prior_logpdf_batch(const Eigen::Ref<const Eigen::MatrixXd>& z) {
  const double l = static_cast<double>(z.rows());
  return (-0.5 * (l * kLogTwoPi + z.colwise().squaredNorm().array())).matrix().transpose();
}

double prior_logpdf(const Eigen::Ref<const Eigen::VectorXd>& z) {
  return -0.5 * (static_cast<double>(z.size()) * kLogTwoPi + z.squaredNorm());
}

Eigen::MatrixXd prior_sample(Index n, Index latent_dim, Rng& rng) {
  Eigen::MatrixXd z(latent_dim, n);
  for (Index s = 0; s < n; ++s)
    for (Index l = 0; l < latent_dim; ++l) z(l, s) = rng.normal();
  return z;
}

ConditionalDraw decoder_conditional_sample(const DecoderOutput& eta, Index s, const Eigen::Ref<const Eigen::VectorXd>& values,
                                           const Eigen::Ref<const Mask>& mask, Rng& rng) {
  if (values.size() != eta.mean.rows() || mask.size() != values.size())
    throw ParameterError("decoder_conditional_sample: dimension mismatch");
  ConditionalDraw out{values, false};
  for (Index d = 0; d < values.size(); ++d) {
    if (mask[d]) continue;
    out.sampled = true;
    if (eta.family == DecoderFamily::gaussian) out.values[d] = eta.mean(d, s) + eta.std(d, s) * rng.normal();
    else out.values[d] = rng.uniform() < eta.mean(d, s) ? 1.0 : 0.0;
  }
  return out;
}

} // namespace missvae
