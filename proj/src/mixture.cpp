#include "missvae/mixture.hpp"

#include <cmath>
#include <span>
#include <string>

#include "missvae/dataset.hpp"
#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"

namespace missvae {

Eigen::VectorXd MixtureParams::weights() const { return softmax(logits); }
Eigen::VectorXd MixtureParams::log_weights() const { return log_softmax(logits); }

MixtureGrad MixtureGrad::zeros(Index components, Index latent_dim) {
  return {Eigen::VectorXd::Zero(components), Eigen::MatrixXd::Zero(latent_dim, components),
          Eigen::MatrixXd::Zero(latent_dim, components)};
}

MixtureGrad& MixtureGrad::operator+=(const MixtureGrad& other) {
  logits += other.logits;
  means += other.means;
  stds += other.stds;
  return *this;
}

MixtureGrad& MixtureGrad::operator*=(double c) {
  logits *= c;
  means *= c;
  stds *= c;
  return *this;
}

Encoder::Encoder(Index data_dim_, Index latent_dim_, Index components_, Index hidden, Index blocks)
    : data_dim(data_dim_), latent_dim(latent_dim_), components(components_) {
  if (data_dim < 1 || latent_dim < 1 || components < 1) throw ParameterError("Encoder: dimensions must be positive");
  net = Mlp(MlpArch{2 * data_dim, raw_dim(), hidden, blocks});
  phi = Eigen::VectorXd::Zero(net.param_count());
}

void Encoder::init(Rng& rng, double init_scale) {
  net.init(phi, rng);
  if (init_scale > 0.0 && components > 1) {
    const Index bias = net.output_bias_offset();
    for (Index i = 0; i < components * latent_dim; ++i) phi[bias + components + i] += init_scale * rng.normal();
  }
}

MixtureParams mixture_from_raw(const Eigen::Ref<const Eigen::VectorXd>& raw, Index k, Index l) {
  if (raw.size() != k * (1 + 2 * l)) throw ParameterError("mixture_from_raw: raw width mismatch");
  MixtureParams p;
  p.logits = raw.head(k);
  p.means = Eigen::Map<const Eigen::MatrixXd>(raw.data() + k, l, k);
  p.stds = Eigen::Map<const Eigen::MatrixXd>(raw.data() + k + k * l, l, k)
               .unaryExpr([](double r) { return softplus(r) + kMinStd; });
  return p;
}

Eigen::VectorXd mixture_grad_to_raw(const Eigen::Ref<const Eigen::VectorXd>& raw, const MixtureGrad& grad) {
  const Index k = grad.logits.size();
  const Index l = grad.means.rows();
  Eigen::VectorXd out(raw.size());
  out.head(k) = grad.logits;
  out.segment(k, k * l) = grad.means.reshaped();
  for (Index i = 0; i < k * l; ++i) out[k + k * l + i] = grad.stds.reshaped()[i] * sigmoid(raw[k + k * l + i]);
  return out;
}

EncoderOutput encode_batch(const Encoder& enc, const Eigen::Ref<const Eigen::MatrixXd>& inputs, bool keep_cache,
                           PassCounter* counter) {
  EncoderOutput out;
  out.raw = enc.net.forward(enc.phi, inputs, keep_cache ? &out.cache : nullptr, counter);
  out.params.reserve(static_cast<std::size_t>(out.raw.cols()));
  for (Index b = 0; b < out.raw.cols(); ++b) {
    if (!out.raw.col(b).allFinite())
      throw NumericError("encode: non-finite encoder output at batch index " + std::to_string(b));
    out.params.push_back(mixture_from_raw(out.raw.col(b), enc.components, enc.latent_dim));
  }
  return out;
}

MixtureParams encode(const Encoder& enc, const Eigen::Ref<const Eigen::VectorXd>& values, const Eigen::Ref<const Mask>& mask) {
  const Eigen::VectorXd input = zero_mask_encode(values, mask);
  return encode_batch(enc, input).params.front();
}

void encoder_backward(const Encoder& enc, const EncoderOutput& out, const Eigen::Ref<const Eigen::MatrixXd>& grad_raw,
                      Eigen::VectorXd* grad_phi, Eigen::MatrixXd* grad_input, PassCounter* counter) {
  if (out.cache.input.cols() != out.raw.cols()) throw ParameterError("encoder_backward: forward pass was run without a cache");
  enc.net.backward(enc.phi, out.cache, grad_raw, grad_phi, grad_input, counter);
}

namespace {

// Per-component diagonal Gaussian log-density of z.
Eigen::VectorXd component_log_densities(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (z.size() != psi.latent_dim()) throw ParameterError("mixture: latent dimension mismatch");
  Eigen::VectorXd out(psi.components());
  for (Index k = 0; k < psi.components(); ++k) {
    double acc = 0.0;
    for (Index d = 0; d < psi.latent_dim(); ++d) acc += normal_log_pdf(z[d], psi.means(d, k), psi.stds(d, k));
    out[k] = acc;
  }
  return out;
}

} // namespace

double mixture_logpdf(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z) {
  const Eigen::VectorXd lj = psi.log_weights() + component_log_densities(psi, z);
  return log_sum_exp(lj);
}

Eigen::VectorXd mixture_logpdf_batch(const MixtureParams& psi, const Eigen::Ref<const Eigen::MatrixXd>& z) {
  Eigen::VectorXd out(z.cols());
  const Eigen::VectorXd lw = psi.log_weights();
  for (Index s = 0; s < z.cols(); ++s) out[s] = log_sum_exp(lw + component_log_densities(psi, z.col(s)));
  return out;
}

double mixture_logpdf_grad(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z, Eigen::VectorXd* grad_z,
                           MixtureGrad* grad_psi) {
  const Index kc = psi.components();
  const Index l = psi.latent_dim();
  const Eigen::VectorXd lw = psi.log_weights();
  const Eigen::VectorXd lj = lw + component_log_densities(psi, z);
  const double value = log_sum_exp(lj);
  const Eigen::VectorXd resp = (lj.array() - value).exp();
  if (grad_z) *grad_z = Eigen::VectorXd::Zero(l);
  if (grad_psi) {
    *grad_psi = MixtureGrad::zeros(kc, l);
    grad_psi->logits = resp - lw.array().exp().matrix();
  }
  for (Index k = 0; k < kc; ++k) {
    for (Index d = 0; d < l; ++d) {
      const double sd = psi.stds(d, k);
      const double diff = z[d] - psi.means(d, k);
      const double inv_var = 1.0 / (sd * sd);
      if (grad_z) (*grad_z)[d] -= resp[k] * diff * inv_var;
      if (grad_psi) {
        grad_psi->means(d, k) = resp[k] * diff * inv_var;
        grad_psi->stds(d, k) = resp[k] * (-1.0 / sd + diff * diff * inv_var / sd);
      }
    }
  }
  return value;
}

LatentSampleBatch sample_stratified(const MixtureParams& psi, Index per_component, Rng& rng) {
  if (per_component < 1) throw ParameterError("sample_stratified: need at least one sample per component");
  const Index kc = psi.components();
  const Index l = psi.latent_dim();
  const Index n = kc * per_component;
  LatentSampleBatch b;
  b.stratified = true;
  b.per_component = per_component;
  b.z.resize(l, n);
  b.eps.resize(l, n);
  b.component.resize(n);
  b.stratum_weight.resize(n);
  const Eigen::VectorXd w = psi.weights();
  for (Index k = 0; k < kc; ++k)
    for (Index j = 0; j < per_component; ++j) {
      const Index s = k * per_component + j;
      for (Index d = 0; d < l; ++d) {
        b.eps(d, s) = rng.normal();
        b.z(d, s) = psi.means(d, k) + psi.stds(d, k) * b.eps(d, s);
      }
      b.component[s] = static_cast<int>(k);
      b.stratum_weight[s] = w[k];
    }
  b.log_q = mixture_logpdf_batch(psi, b.z);
  return b;
}

LatentSampleBatch sample_ancestral(const MixtureParams& psi, Index n, Rng& rng) {
  if (n < 1) throw ParameterError("sample_ancestral: n must be >= 1");
  const Index kc = psi.components();
  const Index l = psi.latent_dim();
  LatentSampleBatch b;
  b.z.resize(l, n);
  b.eps.resize(l, n);
  b.component.resize(n);
  const Eigen::VectorXd w = psi.weights();
  const std::span<const double> ws(w.data(), static_cast<std::size_t>(kc));
  for (Index s = 0; s < n; ++s) {
    const Index k = kc == 1 ? 0 : rng.categorical(ws);
    for (Index d = 0; d < l; ++d) {
      b.eps(d, s) = rng.normal();
      b.z(d, s) = psi.means(d, k) + psi.stds(d, k) * b.eps(d, s);
    }
    b.component[s] = static_cast<int>(k);
  }
  b.log_q = mixture_logpdf_batch(psi, b.z);
  return b;
}

MixtureGrad explicit_vjp(const MixtureParams& psi, Index component, const Eigen::Ref<const Eigen::VectorXd>& eps,
                         const Eigen::Ref<const Eigen::VectorXd>& grad_z) {
  MixtureGrad g = MixtureGrad::zeros(psi.components(), psi.latent_dim());
  g.means.col(component) = grad_z;
  g.stds.col(component) = grad_z.cwiseProduct(eps);
  return g;
}

namespace {

struct ConditionalTerms {
  Eigen::MatrixXd t;        // standardized z, L x K
  Eigen::MatrixXd cdf;      // Phi_kd
  Eigen::MatrixXd log_pdf;  // log N(z_d; mu_kd, sigma_kd)
  Eigen::MatrixXd resp;     // responsibilities r^(d)_k, L x K
  Eigen::VectorXd f;        // F_d
};

ConditionalTerms conditional_terms(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z) {
  const Index kc = psi.components();
  const Index l = psi.latent_dim();
  if (z.size() != l) throw ParameterError("mixture: latent dimension mismatch");
  ConditionalTerms c;
  c.t.resize(l, kc);
  c.cdf.resize(l, kc);
  c.log_pdf.resize(l, kc);
  c.resp.resize(l, kc);
  c.f.resize(l);
  for (Index k = 0; k < kc; ++k)
    for (Index d = 0; d < l; ++d) {
      const double t = (z[d] - psi.means(d, k)) / psi.stds(d, k);
      c.t(d, k) = t;
      c.cdf(d, k) = normal_cdf(t);
      c.log_pdf(d, k) = normal_log_pdf_std(t) - std::log(psi.stds(d, k));
    }
  Eigen::VectorXd log_r = psi.log_weights();
  for (Index d = 0; d < l; ++d) {
    const Eigen::VectorXd r = (log_r.array() - log_sum_exp(log_r)).exp();
    c.resp.row(d) = r.transpose();
    c.f[d] = r.dot(c.cdf.row(d).transpose());
    log_r += c.log_pdf.row(d).transpose();
  }
  return c;
}

} // namespace

Eigen::VectorXd mixture_conditional_cdf(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z) {
  return conditional_terms(psi, z).f;
}

MixtureGrad implicit_vjp(const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& z,
                         const Eigen::Ref<const Eigen::VectorXd>& grad_z, Index sample_index) {
  const Index kc = psi.components();
  const Index l = psi.latent_dim();
  if (grad_z.size() != l) throw ParameterError("implicit_vjp: gradient dimension mismatch");
  const ConditionalTerms c = conditional_terms(psi, z);

  // A = dF/dz is lower triangular; diag is the conditional density.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(l, l);
  // coef(d, k) = r^(d)_k (Phi_kd - F_d)
  Eigen::MatrixXd coef(l, kc);
  for (Index d = 0; d < l; ++d) {
    double dens = 0.0;
    for (Index k = 0; k < kc; ++k) {
      coef(d, k) = c.resp(d, k) * (c.cdf(d, k) - c.f[d]);
      dens += c.resp(d, k) * std::exp(c.log_pdf(d, k));
    }
    if (!(dens > 0.0) || !std::isfinite(dens))
      throw NumericError("implicit_vjp: vanishing mixture density at sample " + std::to_string(sample_index) +
                         ", dimension " + std::to_string(d));
    a(d, d) = dens;
    for (Index dp = 0; dp < d; ++dp) {
      double acc = 0.0;
      for (Index k = 0; k < kc; ++k) {
        const double sd = psi.stds(dp, k);
        acc += coef(d, k) * (-(z[dp] - psi.means(dp, k)) / (sd * sd));
      }
      a(d, dp) = acc;
    }
  }
  // v = A^{-T} g
  const Eigen::VectorXd v = a.transpose().triangularView<Eigen::Upper>().solve(grad_z);

  MixtureGrad g = MixtureGrad::zeros(kc, l);
  for (Index k = 0; k < kc; ++k) {
    double later = 0.0;  // sum over d'' > d of v_d'' coef(d'', k)
    for (Index d = l - 1; d >= 0; --d) {
      const double sd = psi.stds(d, k);
      const double diff = z[d] - psi.means(d, k);
      const double pdf = std::exp(c.log_pdf(d, k));
      g.logits[k] -= v[d] * coef(d, k);
      g.means(d, k) = v[d] * c.resp(d, k) * pdf - later * diff / (sd * sd);
      g.stds(d, k) = v[d] * c.resp(d, k) * pdf * c.t(d, k) - later * (-1.0 / sd + diff * diff / (sd * sd * sd));
      later += v[d] * coef(d, k);
    }
  }
  return g;
}

double mixture_entropy_mc(const MixtureParams& psi, Index n, Rng& rng) {
  const LatentSampleBatch b = sample_ancestral(psi, n, rng);
  return -b.log_q.mean();
}

} // namespace missvae
