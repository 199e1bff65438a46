#include "missvae/objectives.hpp"

#include <cmath>
#include <string>

#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"

namespace missvae {

std::string to_string(Bound b) {
  switch (b) {
    case Bound::elbo: return "elbo";
    case Bound::iwelbo: return "iwelbo";
    case Bound::selbo: return "selbo";
    case Bound::siwelbo: return "siwelbo";
    case Bound::siwelbo_loose: return "siwelbo_loose";
  }
  return "unknown";
}

double BoundEstimate::stderr_of_mean() const {
  const Index n = per_repeat.size();
  if (n < 2) return 0.0;
  const double mean = per_repeat.mean();
  const double var = (per_repeat.array() - mean).square().sum() / static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

namespace {

bool is_stratified(Bound b) { return b == Bound::selbo || b == Bound::siwelbo || b == Bound::siwelbo_loose; }

// Sequential log-mean-exp so that results do not depend on memory alignment.
// When `weights` is given it receives the normalized exp(x_j - max).
double lme_seq(const double* x, Index n, double* weights) {
  double m = -INFINITY;
  for (Index j = 0; j < n; ++j) m = std::max(m, x[j]);
  if (!std::isfinite(m)) {
    if (weights)
      for (Index j = 0; j < n; ++j) weights[j] = 1.0 / static_cast<double>(n);
    return m;
  }
  double s = 0.0;
  for (Index j = 0; j < n; ++j) s += std::exp(x[j] - m);
  if (weights)
    for (Index j = 0; j < n; ++j) weights[j] = std::exp(x[j] - m) / s;
  return m + std::log(s) - std::log(static_cast<double>(n));
}

} // namespace

double bound_repeat_value(Bound bound, const double* log_w, const Eigen::Ref<const Eigen::VectorXd>& log_pi,
                          Index per_component, double* d_log_w, double* d_log_pi) {
  const Index n = per_component;
  switch (bound) {
    case Bound::elbo: {
      double s = 0.0;
      for (Index j = 0; j < n; ++j) s += log_w[j];
      if (d_log_w)
        for (Index j = 0; j < n; ++j) d_log_w[j] = 1.0 / static_cast<double>(n);
      return s / static_cast<double>(n);
    }
    case Bound::iwelbo: return lme_seq(log_w, n, d_log_w);
    case Bound::selbo: {
      double value = 0.0;
      for (Index k = 0; k < log_pi.size(); ++k) {
        const double pi = std::exp(log_pi[k]);
        double s = 0.0;
        for (Index j = 0; j < n; ++j) s += log_w[k * n + j];
        const double mean = s / static_cast<double>(n);
        value += pi * mean;
        if (d_log_w)
          for (Index j = 0; j < n; ++j) d_log_w[k * n + j] = pi / static_cast<double>(n);
        if (d_log_pi) d_log_pi[k] = pi * mean;
      }
      return value;
    }
    case Bound::siwelbo: {
      const Index kc = log_pi.size();
      std::vector<double> a(static_cast<std::size_t>(kc * n));
      for (Index k = 0; k < kc; ++k)
        for (Index j = 0; j < n; ++j) a[static_cast<std::size_t>(k * n + j)] = log_pi[k] + log_w[k * n + j];
      double m = -INFINITY;
      for (double v : a) m = std::max(m, v);
      double s = 0.0;
      for (double v : a) s += std::exp(v - m);
      for (Index k = 0; k < kc; ++k) {
        double acc = 0.0;
        for (Index j = 0; j < n; ++j) {
          const double w = std::exp(a[static_cast<std::size_t>(k * n + j)] - m) / s;
          if (d_log_w) d_log_w[k * n + j] = w;
          acc += w;
        }
        if (d_log_pi) d_log_pi[k] = acc;
      }
      return m + std::log(s) - std::log(static_cast<double>(n));
    }
    case Bound::siwelbo_loose: {
      double value = 0.0;
      for (Index k = 0; k < log_pi.size(); ++k) {
        const double pi = std::exp(log_pi[k]);
        const double lme = lme_seq(log_w + k * n, n, d_log_w ? d_log_w + k * n : nullptr);
        value += pi * lme;
        if (d_log_w)
          for (Index j = 0; j < n; ++j) d_log_w[k * n + j] *= pi;
        if (d_log_pi) d_log_pi[k] = pi * lme;
      }
      return value;
    }
  }
  throw ParameterError("bound_repeat_value: unknown bound");
}

LatentSampleBatch sample_for_bound(const MixtureParams& psi, const SampleBudget& budget, Rng& rng) {
  if (budget.z < 1 || budget.i < 1) throw ParameterError("sample_for_bound: Z and I must be >= 1");
  if (budget.z == 1) {
    return budget.scheme == SamplingScheme::stratified ? sample_stratified(psi, budget.i, rng)
                                                       : sample_ancestral(psi, budget.i, rng);
  }
  LatentSampleBatch out;
  const Index per = budget.scheme == SamplingScheme::stratified ? psi.components() * budget.i : budget.i;
  const Index n = per * budget.z;
  out.z.resize(psi.latent_dim(), n);
  out.eps.resize(psi.latent_dim(), n);
  out.component.resize(n);
  out.log_q.resize(n);
  out.stratified = budget.scheme == SamplingScheme::stratified;
  out.per_component = out.stratified ? budget.i : 0;
  if (out.stratified) out.stratum_weight.resize(n);
  for (Index r = 0; r < budget.z; ++r) {
    const LatentSampleBatch b = out.stratified ? sample_stratified(psi, budget.i, rng) : sample_ancestral(psi, budget.i, rng);
    out.z.middleCols(r * per, per) = b.z;
    out.eps.middleCols(r * per, per) = b.eps;
    out.component.segment(r * per, per) = b.component;
    out.log_q.segment(r * per, per) = b.log_q;
    if (out.stratified) out.stratum_weight.segment(r * per, per) = b.stratum_weight;
  }
  return out;
}

Eigen::VectorXd log_importance_weights(const VAEModel& model, const MixtureParams& psi, const RowRef& row,
                                       const LatentSampleBatch& batch) {
  const DecoderOutput eta = decoder_forward(model, batch.z);
  Eigen::VectorXd lw = marginal_decoder_loglik(eta, row.values, row.mask) + prior_logpdf_batch(batch.z) - batch.log_q;
  (void)psi;
  for (Index s = 0; s < lw.size(); ++s)
    if (!std::isfinite(lw[s])) throw NumericError("log importance weight is not finite at sample " + std::to_string(s));
  return lw;
}

BoundEstimate bound_from_log_weights(Bound bound, const Eigen::Ref<const Eigen::VectorXd>& log_w, const MixtureParams& psi,
                                     Index repeats) {
  if (repeats < 1 || log_w.size() % repeats != 0) throw ParameterError("bound_from_log_weights: bad repeat count");
  const Index per = log_w.size() / repeats;
  const Index kc = psi.components();
  Index per_component = per;
  if (is_stratified(bound)) {
    if (per % kc != 0) throw ParameterError("bound_from_log_weights: stratified batch size not divisible by K");
    per_component = per / kc;
  }
  const Eigen::VectorXd log_pi = psi.log_weights();
  BoundEstimate est;
  est.per_repeat.resize(repeats);
  double s = 0.0;
  for (Index r = 0; r < repeats; ++r) {
    est.per_repeat[r] = bound_repeat_value(bound, log_w.data() + r * per, log_pi, per_component, nullptr, nullptr);
    s += est.per_repeat[r];
  }
  est.value = s / static_cast<double>(repeats);
  est.per_datapoint = Eigen::VectorXd::Constant(1, est.value);
  est.budget = SampleBudget{repeats, kc, per_component,
                            is_stratified(bound) ? SamplingScheme::stratified : SamplingScheme::ancestral};
  return est;
}

BoundEstimate elbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch,
                   Index repeats) {
  return bound_from_log_weights(Bound::elbo, log_importance_weights(model, psi, row, batch), psi, repeats);
}

BoundEstimate iwelbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch,
                     Index importance_samples) {
  if (importance_samples < 1 || batch.size() % importance_samples != 0)
    throw ParameterError("iwelbo: batch size must be a multiple of I");
  return bound_from_log_weights(Bound::iwelbo, log_importance_weights(model, psi, row, batch), psi,
                                batch.size() / importance_samples);
}

namespace {

Index stratified_repeats(const MixtureParams& psi, const LatentSampleBatch& batch) {
  if (!batch.stratified || batch.per_component < 1) throw ParameterError("stratified bound needs a stratified batch");
  return batch.size() / (psi.components() * batch.per_component);
}

} // namespace

BoundEstimate selbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch) {
  return bound_from_log_weights(Bound::selbo, log_importance_weights(model, psi, row, batch), psi,
                                stratified_repeats(psi, batch));
}

BoundEstimate siwelbo(const VAEModel& model, const MixtureParams& psi, const RowRef& row, const LatentSampleBatch& batch) {
  return bound_from_log_weights(Bound::siwelbo, log_importance_weights(model, psi, row, batch), psi,
                                stratified_repeats(psi, batch));
}

BoundEstimate siwelbo_loose(const VAEModel& model, const MixtureParams& psi, const RowRef& row,
                            const LatentSampleBatch& batch) {
  return bound_from_log_weights(Bound::siwelbo_loose, log_importance_weights(model, psi, row, batch), psi,
                                stratified_repeats(psi, batch));
}

void validate_objective(const ObjectiveSpec& spec) {
  const auto& b = spec.budget;
  if (b.z < 1 || b.k < 1 || b.i < 1) throw ParameterError("objective: Z, K, I must be >= 1");
  if (is_stratified(spec.bound) != (b.scheme == SamplingScheme::stratified))
    throw ParameterError("objective: " + to_string(spec.bound) + " does not match the sampling scheme");
  if ((spec.bound == Bound::elbo || spec.bound == Bound::selbo) && b.i != 1)
    throw ParameterError("objective: ELBO-type bounds use I = 1");
}

namespace {

struct Forward {
  EncoderOutput enc;
  std::vector<LatentSampleBatch> batches;
  DecoderOutput eta;
  Eigen::MatrixXd x;
  MaskMatrix mask;
  Eigen::VectorXd log_w;
};

Forward run_forward(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, const std::vector<Index>& rows,
                    const ObjectiveSpec& spec, Rng& rng, bool keep_cache, PassCounter* counter) {
  validate_objective(spec);
  if (enc.components != spec.budget.k) throw ParameterError("objective: encoder K differs from the budget K");
  Forward f;
  const Index nb = static_cast<Index>(rows.size());
  f.enc = encode_batch(enc, zero_mask_encode_batch(data, rows), keep_cache, counter);
  const Index per_row = spec.budget.total();
  const Index n = nb * per_row;
  Eigen::MatrixXd z(model.latent_dim, n);
  Eigen::VectorXd log_q(n);
  f.x.resize(data.dim(), n);
  f.mask.resize(data.dim(), n);
  f.batches.reserve(static_cast<std::size_t>(nb));
  for (Index b = 0; b < nb; ++b) {
    f.batches.push_back(sample_for_bound(f.enc.params[static_cast<std::size_t>(b)], spec.budget, rng));
    const auto& batch = f.batches.back();
    z.middleCols(b * per_row, per_row) = batch.z;
    log_q.segment(b * per_row, per_row) = batch.log_q;
    const Index r = rows[static_cast<std::size_t>(b)];
    for (Index s = 0; s < per_row; ++s) {
      f.x.col(b * per_row + s) = data.values.col(r);
      f.mask.col(b * per_row + s) = data.mask.col(r);
    }
  }
  f.eta = decoder_forward(model, z, keep_cache, counter);
  f.log_w = marginal_decoder_loglik_columns(f.eta, f.x, f.mask) + prior_logpdf_batch(z) - log_q;
  for (Index s = 0; s < n; ++s)
    if (!std::isfinite(f.log_w[s]))
      throw NumericError("objective: non-finite log weight for row " + std::to_string(rows[static_cast<std::size_t>(s / per_row)]));
  return f;
}

} // namespace

double objective_value(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, const std::vector<Index>& rows,
                       const ObjectiveSpec& spec, Rng& rng, Eigen::VectorXd* per_row) {
  const Forward f = run_forward(model, enc, data, rows, spec, rng, false, nullptr);
  const Index nb = static_cast<Index>(rows.size());
  const Index per = spec.budget.total();
  if (per_row) per_row->resize(nb);
  double total = 0.0;
  for (Index b = 0; b < nb; ++b) {
    const double v =
        bound_from_log_weights(spec.bound, f.log_w.segment(b * per, per), f.enc.params[static_cast<std::size_t>(b)], spec.budget.z)
            .value;
    if (per_row) (*per_row)[b] = v;
    total += v;
  }
  return total / static_cast<double>(nb);
}

ObjectiveGradient objective_gradient(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data,
                                     const std::vector<Index>& rows, const ObjectiveSpec& spec, Rng& rng,
                                     PassCounter* counter, bool need_theta, bool need_phi) {
  Forward f = run_forward(model, enc, data, rows, spec, rng, true, counter);
  const Index nb = static_cast<Index>(rows.size());
  const Index per = spec.budget.total();
  const Index per_repeat = per / spec.budget.z;
  const Index kc = spec.budget.k;
  const bool stratified = spec.budget.scheme == SamplingScheme::stratified;
  const Index per_component = stratified ? spec.budget.i : per_repeat;
  const double scale = 1.0 / (static_cast<double>(nb) * static_cast<double>(spec.budget.z));

  ObjectiveGradient out;
  out.per_row.resize(nb);
  Eigen::VectorXd coeff(nb * per);
  std::vector<Eigen::VectorXd> d_log_pi(static_cast<std::size_t>(nb), Eigen::VectorXd::Zero(kc));
  double total = 0.0;
  for (Index b = 0; b < nb; ++b) {
    const auto& psi = f.enc.params[static_cast<std::size_t>(b)];
    const Eigen::VectorXd log_pi = psi.log_weights();
    Eigen::VectorXd dpi(kc);
    double s = 0.0;
    for (Index r = 0; r < spec.budget.z; ++r) {
      const Index off = b * per + r * per_repeat;
      s += bound_repeat_value(spec.bound, f.log_w.data() + off, log_pi, per_component, coeff.data() + off, dpi.data());
      if (stratified) d_log_pi[static_cast<std::size_t>(b)] += dpi;
    }
    out.per_row[b] = s / static_cast<double>(spec.budget.z);
    total += out.per_row[b];
  }
  out.value = total / static_cast<double>(nb);
  coeff *= scale;

  const Eigen::MatrixXd grad_raw = marginal_decoder_loglik_grad(f.eta, f.x, f.mask, coeff);
  Eigen::MatrixXd grad_z;
  if (need_theta) out.grad_theta = Eigen::VectorXd::Zero(model.theta.size());
  decoder_backward(model, f.eta, grad_raw, need_theta ? &out.grad_theta : nullptr, need_phi ? &grad_z : nullptr, counter);
  if (!need_phi) return out;

  const bool implicit = !stratified && kc > 1;
  Eigen::MatrixXd enc_grad(enc.raw_dim(), nb);
  for (Index b = 0; b < nb; ++b) {
    const auto& psi = f.enc.params[static_cast<std::size_t>(b)];
    const auto& batch = f.batches[static_cast<std::size_t>(b)];
    MixtureGrad g = MixtureGrad::zeros(kc, model.latent_dim);
    Eigen::VectorXd dq_dz;
    MixtureGrad dq_dpsi;
    for (Index s = 0; s < per; ++s) {
      const Index col = b * per + s;
      const double c = coeff[col];
      const auto z = batch.z.col(s);
      mixture_logpdf_grad(psi, z, &dq_dz, spec.stl ? nullptr : &dq_dpsi);
      const Eigen::VectorXd gz = grad_z.col(col) - c * z - c * dq_dz;
      if (implicit) g += implicit_vjp(psi, z, gz, s);
      else g += explicit_vjp(psi, batch.component[s], batch.eps.col(s), gz);
      if (!spec.stl) {
        dq_dpsi *= -c;
        g += dq_dpsi;
      }
    }
    if (stratified) {
      const Eigen::VectorXd dlp = d_log_pi[static_cast<std::size_t>(b)] * scale;
      const Eigen::VectorXd pi = psi.weights();
      g.logits += dlp - pi * dlp.sum();
    }
    enc_grad.col(b) = mixture_grad_to_raw(f.enc.raw.col(b), g);
  }
  out.grad_phi = Eigen::VectorXd::Zero(enc.phi.size());
  encoder_backward(enc, f.enc, enc_grad, &out.grad_phi, nullptr, counter);
  return out;
}

} // namespace missvae
