#pragma once

#include <vector>

#include <Eigen/Core>

#include "missvae/mlp.hpp"
#include "missvae/rng.hpp"
#include "missvae/types.hpp"

namespace missvae {

/// Finite mixture of diagonal Gaussians, one column per component.
struct MixtureParams {
  Eigen::VectorXd logits;
  Eigen::MatrixXd means;
  Eigen::MatrixXd stds;

  Index components() const { return logits.size(); }
  Index latent_dim() const { return means.rows(); }
  Eigen::VectorXd weights() const;
  Eigen::VectorXd log_weights() const;
};

/// Gradient with respect to every MixtureParams field.
struct MixtureGrad {
  Eigen::VectorXd logits;
  Eigen::MatrixXd means;
  Eigen::MatrixXd stds;

  static MixtureGrad zeros(Index components, Index latent_dim);
  MixtureGrad& operator+=(const MixtureGrad& other);
  MixtureGrad& operator*=(double c);
};

/// Amortized encoder: input zero_mask_encode(x) (or any 2D-wide encoding),
/// output [K logits | K*L means | K*L raw stds], component k occupying a
/// contiguous L-block. std = softplus(raw) + 1e-5.
struct Encoder {
  Index data_dim = 0;
  Index latent_dim = 2;
  Index components = 1;
  Mlp net;
  Eigen::VectorXd phi;

  Encoder() = default;
  Encoder(Index data_dim, Index latent_dim, Index components, Index hidden, Index blocks);

  Index raw_dim() const { return components * (1 + 2 * latent_dim); }
  /// Network initialization followed by N(0, init_scale^2) offsets on the
  /// component-mean output biases, so mixture components start apart.
  void init(Rng& rng, double init_scale = 0.5);
};

struct EncoderOutput {
  Eigen::MatrixXd raw;
  std::vector<MixtureParams> params;
  MlpCache cache;
};

EncoderOutput encode_batch(const Encoder& enc, const Eigen::Ref<const Eigen::MatrixXd>& inputs, bool keep_cache = false,
                           PassCounter* counter = nullptr);
/// Single-row convenience wrapper around zero_mask_encode + encode_batch.
MixtureParams encode(const Encoder& enc, const Eigen::Ref<const Eigen::VectorXd>& values, const Eigen::Ref<const Mask>& mask);

MixtureParams mixture_from_raw(const Eigen::Ref<const Eigen::VectorXd>& raw, Index components, Index latent_dim);
/// Chain a MixtureGrad through the softplus std map into raw-output space.
Eigen::VectorXd mixture_grad_to_raw(const Eigen::Ref<const Eigen::VectorXd>& raw, const MixtureGrad& grad);
void encoder_backward(const Encoder& enc, const EncoderOutput& out, const Eigen::Ref<const Eigen::MatrixXd>& grad_raw,
                      Eigen::VectorXd* grad_phi, Eigen::MatrixXd* grad_input = nullptr, PassCounter* counter = nullptr);

double mixture_logpdf(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z);
Eigen::VectorXd mixture_logpdf_batch(const MixtureParams& psi, const Eigen::Ref<const Eigen::MatrixXd>& z);

/// log q(z) with its gradients with respect to z and psi (either may be null).
double mixture_logpdf_grad(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z, Eigen::VectorXd* grad_z,
                           MixtureGrad* grad_psi);

struct LatentSampleBatch {
  Eigen::MatrixXd z;
  Eigen::VectorXi component;
  /// Standard normal draws behind each sample.
  Eigen::MatrixXd eps;
  /// Stratified only: softmax(logits)_k of the sample's stratum.
  Eigen::VectorXd stratum_weight;
  Eigen::VectorXd log_q;
  bool stratified = false;
  Index per_component = 0;

  Index size() const { return z.cols(); }
};

/// I draws per component, ordered component-major (sample k*I + j).
LatentSampleBatch sample_stratified(const MixtureParams& psi, Index per_component, Rng& rng);
/// k ~ Categorical(softmax(logits)) by inverse CDF (skipped when K = 1), then z ~ component k.
LatentSampleBatch sample_ancestral(const MixtureParams& psi, Index n, Rng& rng);

/// Pathwise vector-Jacobian product g^T dz/dpsi for z = mu_k + sigma_k * eps with k held fixed.
MixtureGrad explicit_vjp(const MixtureParams& psi, Index component, const Eigen::Ref<const Eigen::VectorXd>& eps,
                         const Eigen::Ref<const Eigen::VectorXd>& grad_z);

/// Implicit reparametrization vector-Jacobian product g^T dz/dpsi, where z
/// solves F(z; psi) = u for the per-dimension conditional CDFs of the mixture
/// (responsibilities updated by the preceding dims). Throws NumericError when
/// a conditional density vanishes.
MixtureGrad implicit_vjp(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z,
                         const Eigen::Ref<const Eigen::VectorXd>& grad_z, Index sample_index = 0);

/// Per-dimension conditional CDF values F_d(z_d | z_<d) of the mixture.
Eigen::VectorXd mixture_conditional_cdf(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z);

/// Monte Carlo -E[log q] from n ancestral draws.
double mixture_entropy_mc(const MixtureParams& psi, Index n, Rng& rng);

} // namespace missvae
