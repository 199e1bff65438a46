#pragma once

#include <Eigen/Core>

#include "missvae/mlp.hpp"
#include "missvae/rng.hpp"
#include "missvae/types.hpp"

namespace missvae {

enum class DecoderFamily { gaussian, bernoulli };

/// Generative model p(z) p_theta(x | z) with a fixed standard normal prior.
struct VAEModel {
  Index data_dim = 0;
  Index latent_dim = 2;
  DecoderFamily family = DecoderFamily::gaussian;
  Mlp net;
  Eigen::VectorXd theta;

  VAEModel() = default;
  VAEModel(Index data_dim, Index latent_dim, DecoderFamily family, Index hidden, Index blocks);

  /// Decoder network output rows per latent sample (2D for Gaussian, D for Bernoulli).
  Index raw_dim() const { return family == DecoderFamily::gaussian ? 2 * data_dim : data_dim; }
  void init(Rng& rng) { net.init(theta, rng); }
};

/// Per-sample decoder distribution parameters, one column per latent sample.
/// Gaussian: `mean`, `std` (softplus(raw) + 1e-5). Bernoulli: `mean` holds the
/// clamped probability and `std` is empty.
struct DecoderOutput {
  DecoderFamily family = DecoderFamily::gaussian;
  Eigen::MatrixXd raw;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd std;
  MlpCache cache;

  Index samples() const { return raw.cols(); }
};

/// Throws NumericError naming the first sample with a non-finite output.
DecoderOutput decoder_forward(const VAEModel& model, const Eigen::Ref<const Eigen::MatrixXd>& z,
                              bool keep_cache = false, PassCounter* counter = nullptr);

/// Sum over observed dims of log p(x_d | eta_s) for every sample column s;
/// x and mask are shared by all samples.
Eigen::VectorXd marginal_decoder_loglik(const DecoderOutput& eta, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        const Eigen::Ref<const Mask>& mask);

/// Per-column variant: sample s is scored against column s of `x`/`mask`.
Eigen::VectorXd marginal_decoder_loglik_columns(const DecoderOutput& eta, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                                const Eigen::Ref<const MaskMatrix>& mask);

/// d(sum_s coeff_s * loglik_s)/d raw for the per-column variant.
Eigen::MatrixXd marginal_decoder_loglik_grad(const DecoderOutput& eta, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                             const Eigen::Ref<const MaskMatrix>& mask,
                                             const Eigen::Ref<const Eigen::VectorXd>& coeff);

/// Backpropagates d/d raw into theta (accumulated) and/or z.
void decoder_backward(const VAEModel& model, const DecoderOutput& eta, const Eigen::Ref<const Eigen::MatrixXd>& grad_raw,
                      Eigen::VectorXd* grad_theta, Eigen::MatrixXd* grad_z, PassCounter* counter = nullptr);

/// Standard normal log-density of every column.
Eigen::VectorXd prior_logpdf_batch(const Eigen::Ref<const Eigen::MatrixXd>& z);
double prior_logpdf(const Eigen::Ref<const Eigen::VectorXd>& z);
Eigen::MatrixXd prior_sample(Index n, Index latent_dim, Rng& rng);

struct ConditionalDraw {
  Eigen::VectorXd values;
  /// False when nothing was missing and the row was returned untouched.
  bool sampled = false;
};

/// Draws the unobserved dims of `values` from the decoder distribution of
/// sample column `s`; observed dims are copied.
ConditionalDraw decoder_conditional_sample(const DecoderOutput& eta, Index s, const Eigen::Ref<const Eigen::VectorXd>& values,
                                           const Eigen::Ref<const Mask>& mask, Rng& rng);

} // namespace missvae
