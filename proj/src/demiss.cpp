#include "missvae/demiss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"

namespace missvae {

void ImputationStore::check_invariant(const IncompleteDataset& data) const {
  if (data.size() != rows || completions.cols() != rows * k || completions.rows() != data.dim())
    throw ParameterError("ImputationStore: shape does not match the dataset");
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < k; ++c)
      for (Index d = 0; d < data.dim(); ++d) {
        const double v = completions(d, column(i, c));
        if (!std::isfinite(v))
          throw NumericError("ImputationStore: non-finite entry at row " + std::to_string(i) + ", chain " + std::to_string(c));
        if (data.mask(d, i) && v != data.values(d, i))
          throw NumericError("ImputationStore: observed entry changed at row " + std::to_string(i) + ", dim " +
                             std::to_string(d));
      }
}

ImputationStore init_imputations(const IncompleteDataset& data, Index k, Index latent_dim, Rng& rng) {
  if (k < 1) throw ParameterError("init_imputations: K must be >= 1");
  std::vector<std::vector<double>> observed(static_cast<std::size_t>(data.dim()));
  for (Index i = 0; i < data.size(); ++i)
    for (Index d = 0; d < data.dim(); ++d)
      if (data.mask(d, i)) observed[static_cast<std::size_t>(d)].push_back(data.values(d, i));
  ImputationStore s;
  s.rows = data.size();
  s.k = k;
  s.completions.resize(data.dim(), data.size() * k);
  s.chain_z = Eigen::MatrixXd::Zero(latent_dim, data.size() * k);
  s.chain_valid.assign(static_cast<std::size_t>(data.size()), 0);
  for (Index i = 0; i < data.size(); ++i)
    for (Index c = 0; c < k; ++c)
      for (Index d = 0; d < data.dim(); ++d) {
        if (data.mask(d, i)) {
          s.completions(d, s.column(i, c)) = data.values(d, i);
          continue;
        }
        const auto& pool = observed[static_cast<std::size_t>(d)];
        if (pool.empty()) throw ParameterError("init_imputations: dimension " + std::to_string(d) + " has no observed values");
        s.completions(d, s.column(i, c)) = pool[static_cast<std::size_t>(rng.uniform_index(static_cast<Index>(pool.size())))];
      }
  s.epoch_initialized = true;
  return s;
}

Eigen::MatrixXd completed_encoder_input(const Eigen::Ref<const Eigen::MatrixXd>& completions) {
  Eigen::MatrixXd out(2 * completions.rows(), completions.cols());
  out.topRows(completions.rows()) = completions;
  out.bottomRows(completions.rows()).setOnes();
  return out;
}

namespace {

struct ChainBlock {
  Eigen::MatrixXd x;
  MaskMatrix mask;
  std::vector<Index> columns;
};

ChainBlock gather(const IncompleteDataset& data, const ImputationStore& store, const std::vector<Index>& rows) {
  ChainBlock b;
  const Index n = static_cast<Index>(rows.size()) * store.k;
  b.x.resize(data.dim(), n);
  b.mask.resize(data.dim(), n);
  b.columns.reserve(static_cast<std::size_t>(n));
  Index c = 0;
  for (Index r : rows)
    for (Index j = 0; j < store.k; ++j, ++c) {
      b.columns.push_back(store.column(r, j));
      b.x.col(c) = store.completions.col(store.column(r, j));
      b.mask.col(c) = data.mask.col(r);
    }
  return b;
}

Eigen::MatrixXd sample_one_each(const EncoderOutput& out, Index latent_dim, Eigen::VectorXd* log_q, Rng& rng) {
  const Index n = static_cast<Index>(out.params.size());
  Eigen::MatrixXd z(latent_dim, n);
  if (log_q) log_q->resize(n);
  for (Index c = 0; c < n; ++c) {
    const LatentSampleBatch b = sample_ancestral(out.params[static_cast<std::size_t>(c)], 1, rng);
    z.col(c) = b.z.col(0);
    if (log_q) (*log_q)[c] = b.log_q[0];
  }
  return z;
}

MaskMatrix all_observed(Index rows, Index cols) { return MaskMatrix::Constant(rows, cols, true); }

void refresh(const DecoderOutput& eta, Index eta_col, const Eigen::Ref<const Mask>& mask, ImputationStore& store, Index store_col,
             Rng& rng) {
  const Eigen::VectorXd current = store.completions.col(store_col);
  store.completions.col(store_col) = decoder_conditional_sample(eta, eta_col, current, mask, rng).values;
}

} // namespace

void pseudo_gibbs_step(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, ImputationStore& store,
                       const std::vector<Index>& rows, Rng& rng, PassCounter* counter) {
  if (rows.empty()) return;
  const ChainBlock b = gather(data, store, rows);
  const EncoderOutput out = encode_batch(enc, completed_encoder_input(b.x), false, counter);
  const Eigen::MatrixXd z = sample_one_each(out, model.latent_dim, nullptr, rng);
  const DecoderOutput eta = decoder_forward(model, z, false, counter);
  for (Index c = 0; c < z.cols(); ++c) {
    const Index col = b.columns[static_cast<std::size_t>(c)];
    refresh(eta, c, b.mask.col(c), store, col, rng);
    store.chain_z.col(col) = z.col(c);
  }
  for (Index r : rows) store.chain_valid[static_cast<std::size_t>(r)] = 1;
}

double mwg_log_acceptance(const VAEModel& model, const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::Ref<const Eigen::VectorXd>& z_star, const Eigen::Ref<const Eigen::VectorXd>& z_t) {
  Eigen::MatrixXd z(model.latent_dim, 2);
  z.col(0) = z_star;
  z.col(1) = z_t;
  const DecoderOutput eta = decoder_forward(model, z);
  const Mask ones = Mask::Constant(x.size(), true);
  const Eigen::VectorXd ll = marginal_decoder_loglik(eta, x, ones);
  const double a = ll[0] + prior_logpdf(Eigen::VectorXd(z_star)) - mixture_logpdf(psi, z_star);
  const double b = ll[1] + prior_logpdf(Eigen::VectorXd(z_t)) - mixture_logpdf(psi, z_t);
  return std::min(0.0, a - b);
}

double mwg_step(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, ImputationStore& store,
                const std::vector<Index>& rows, Rng& rng, PassCounter* counter) {
  if (rows.empty()) return 1.0;
  const ChainBlock b = gather(data, store, rows);
  const Index n = b.x.cols();
  const EncoderOutput out = encode_batch(enc, completed_encoder_input(b.x), false, counter);
  Eigen::VectorXd log_q_star;
  const Eigen::MatrixXd z_star = sample_one_each(out, model.latent_dim, &log_q_star, rng);
  Eigen::MatrixXd z_both(model.latent_dim, 2 * n);
  z_both.leftCols(n) = z_star;
  for (Index c = 0; c < n; ++c) z_both.col(n + c) = store.chain_z.col(b.columns[static_cast<std::size_t>(c)]);
  const DecoderOutput eta = decoder_forward(model, z_both, false, counter);
  Eigen::MatrixXd x_both(b.x.rows(), 2 * n);
  x_both << b.x, b.x;
  const Eigen::VectorXd log_joint =
      marginal_decoder_loglik_columns(eta, x_both, all_observed(b.x.rows(), 2 * n)) + prior_logpdf_batch(z_both);
  long long proposals = 0, accepted = 0;
  for (Index c = 0; c < n; ++c) {
    const Index col = b.columns[static_cast<std::size_t>(c)];
    const Index row = rows[static_cast<std::size_t>(c / store.k)];
    bool take = true;
    if (store.chain_valid[static_cast<std::size_t>(row)]) {
      const auto& psi = out.params[static_cast<std::size_t>(c)];
      const double log_alpha = std::min(0.0, (log_joint[c] - log_q_star[c]) -
                                                 (log_joint[n + c] - mixture_logpdf(psi, Eigen::VectorXd(z_both.col(n + c)))));
      take = std::log(rng.uniform()) < log_alpha;
      ++proposals;
      if (take) ++accepted;
    }
    const Index eta_col = take ? c : n + c;
    if (take) store.chain_z.col(col) = z_star.col(c);
    refresh(eta, eta_col, b.mask.col(c), store, col, rng);
  }
  for (Index r : rows) store.chain_valid[static_cast<std::size_t>(r)] = 1;
  return proposals ? static_cast<double>(accepted) / static_cast<double>(proposals) : 1.0;
}

std::vector<Index> systematic_resample(const Eigen::Ref<const Eigen::VectorXd>& weights, Index n, Rng& rng) {
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("systematic_resample: weights vanish");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  const double u0 = rng.uniform() / static_cast<double>(n);
  double cum = weights[0] / total;
  Index j = 0;
  for (Index i = 0; i < n; ++i) {
    const double u = u0 + static_cast<double>(i) / static_cast<double>(n);
    while (u >= cum && j < weights.size() - 1) cum += weights[++j] / total;
    idx[static_cast<std::size_t>(i)] = j;
  }
  return idx;
}

namespace {

Eigen::VectorXd lair_log_weights(const DecoderOutput& eta, const DecoderOutput* eta_prev,
                                 const Eigen::Ref<const Eigen::MatrixXd>& completions, const Eigen::Ref<const Mask>& mask,
                                 const Eigen::Ref<const Eigen::MatrixXd>& z, const Eigen::Ref<const Eigen::VectorXd>& log_q,
                                 Index eta_offset, Index prev_offset) {
  const Index k = completions.cols();
  const Mask ones = Mask::Constant(mask.size(), true);
  const Mask missing = !mask;
  Eigen::VectorXd lw(k);
  for (Index c = 0; c < k; ++c) {
    double ll = 0.0;
    const auto x = completions.col(c);
    // Score only this chain's decoder column.
    DecoderOutput one;
    one.family = eta.family;
    one.raw = eta.raw.col(eta_offset + c);
    one.mean = eta.mean.col(eta_offset + c);
    if (eta.family == DecoderFamily::gaussian) one.std = eta.std.col(eta_offset + c);
    ll = marginal_decoder_loglik(one, x, ones)[0];
    lw[c] = ll + prior_logpdf(Eigen::VectorXd(z.col(c))) - log_q[c];
    if (eta_prev && missing.any()) {
      Eigen::VectorXd comp(k);
      for (Index j = 0; j < k; ++j) {
        DecoderOutput prev;
        prev.family = eta_prev->family;
        prev.raw = eta_prev->raw.col(prev_offset + j);
        prev.mean = eta_prev->mean.col(prev_offset + j);
        if (eta_prev->family == DecoderFamily::gaussian) prev.std = eta_prev->std.col(prev_offset + j);
        comp[j] = marginal_decoder_loglik(prev, x, missing)[0];
      }
      lw[c] -= log_mean_exp(comp);
    }
  }
  return lw;
}

Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& lw) {
  const double m = lw.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("lair: all importance weights vanish");
  return softmax(lw);
}

Eigen::VectorXd lair_latent_log_weights(const DecoderOutput& eta, const std::vector<MixtureParams>& chain_q,
                                        const Eigen::Ref<const Eigen::VectorXd>& values, const Eigen::Ref<const Mask>& mask,
                                        const Eigen::Ref<const Eigen::MatrixXd>& z, Index offset) {
  const Index k = z.cols();
  Eigen::VectorXd lw(k), comp(k);
  for (Index c = 0; c < k; ++c) {
    DecoderOutput one;
    one.family = eta.family;
    one.raw = eta.raw.col(offset + c);
    one.mean = eta.mean.col(offset + c);
    if (eta.family == DecoderFamily::gaussian) one.std = eta.std.col(offset + c);
    for (Index j = 0; j < k; ++j) comp[j] = mixture_logpdf(chain_q[static_cast<std::size_t>(offset + j)], z.col(c));
    lw[c] = marginal_decoder_loglik(one, values, mask)[0] + prior_logpdf(Eigen::VectorXd(z.col(c))) - log_mean_exp(comp);
  }
  return lw;
}

} // namespace

Eigen::VectorXd lair_weights(const VAEModel& model, const Eigen::Ref<const Eigen::MatrixXd>& completions,
                             const Eigen::Ref<const Mask>& mask, const Eigen::Ref<const Eigen::MatrixXd>& z,
                             const Eigen::Ref<const Eigen::VectorXd>& log_q, const Eigen::Ref<const Eigen::MatrixXd>& prev_z) {
  const DecoderOutput eta = decoder_forward(model, z);
  if (prev_z.cols() == 0) return normalize_log_weights(lair_log_weights(eta, nullptr, completions, mask, z, log_q, 0, 0));
  const DecoderOutput eta_prev = decoder_forward(model, prev_z);
  return normalize_log_weights(lair_log_weights(eta, &eta_prev, completions, mask, z, log_q, 0, 0));
}

Eigen::VectorXd lair_latent_weights(const VAEModel& model, const std::vector<MixtureParams>& chain_q,
                                    const Eigen::Ref<const Eigen::VectorXd>& values, const Eigen::Ref<const Mask>& mask,
                                    const Eigen::Ref<const Eigen::MatrixXd>& z) {
  if (static_cast<Index>(chain_q.size()) != z.cols()) throw ParameterError("lair_latent_weights: one encoder output per chain");
  const DecoderOutput eta = decoder_forward(model, z);
  return normalize_log_weights(lair_latent_log_weights(eta, chain_q, values, mask, z, 0));
}

void lair_step(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, ImputationStore& store,
               const std::vector<Index>& rows, Index extra_repeats, Rng& rng, PassCounter* counter,
               LairProposal proposal) {
  if (rows.empty()) return;
  if (extra_repeats < 0) throw ParameterError("lair_step: R must be >= 0");
  const Index k = store.k;
  for (Index rep = 0; rep <= extra_repeats; ++rep) {
    const ChainBlock b = gather(data, store, rows);
    const EncoderOutput out = encode_batch(enc, completed_encoder_input(b.x), false, counter);
    Eigen::VectorXd log_q;
    const Eigen::MatrixXd z = sample_one_each(out, model.latent_dim, &log_q, rng);
    const DecoderOutput eta = decoder_forward(model, z, false, counter);
    DecoderOutput eta_prev;
    const bool any_prev = k > 1 && proposal == LairProposal::imputation && std::any_of(rows.begin(), rows.end(),
                                               [&](Index r) { return store.chain_valid[static_cast<std::size_t>(r)] != 0; });
    if (any_prev) {
      Eigen::MatrixXd prev(model.latent_dim, b.x.cols());
      for (Index c = 0; c < b.x.cols(); ++c) prev.col(c) = store.chain_z.col(b.columns[static_cast<std::size_t>(c)]);
      eta_prev = decoder_forward(model, prev, false, counter);
    }
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
      const Index row = rows[ri];
      const Index off = static_cast<Index>(ri) * k;
      std::vector<Index> idx(static_cast<std::size_t>(k), 0);
      if (k > 1 && proposal == LairProposal::latent) {
        const Eigen::VectorXd lw =
            lair_latent_log_weights(eta, out.params, b.x.col(off), data.mask.col(row), z.middleCols(off, k), off);
        idx = systematic_resample(normalize_log_weights(lw), k, rng);
      } else if (k > 1) {
        const bool has_prev = store.chain_valid[static_cast<std::size_t>(row)] != 0;
        const Eigen::VectorXd lw = lair_log_weights(eta, has_prev ? &eta_prev : nullptr, b.x.middleCols(off, k),
                                                    data.mask.col(row), z.middleCols(off, k), log_q.segment(off, k), off, off);
        idx = systematic_resample(normalize_log_weights(lw), k, rng);
      }
      for (Index c = 0; c < k; ++c) {
        const Index src = off + idx[static_cast<std::size_t>(c)];
        const Index col = store.column(row, c);
        store.completions.col(col) = b.x.col(src);
        refresh(eta, src, data.mask.col(row), store, col, rng);
        store.chain_z.col(col) = z.col(src);
      }
      store.chain_valid[static_cast<std::size_t>(row)] = 1;
    }
  }
}

RejectionResult rejection_sample_conditional(const VAEModel& model, const GridEvaluator& grid, const RowRef& row, Index n,
                                             Rng& rng, long long proposal_budget, double m_inflation) {
  if (row.mask.all()) throw ParameterError("rejection_sample_conditional: row is fully observed");
  if (n < 1) throw ParameterError("rejection_sample_conditional: n must be >= 1");
  if (!(m_inflation >= 1.0)) throw ParameterError("rejection_sample_conditional: M inflation must be >= 1");
  const double log_m = grid.max_log_likelihood(row.values, row.mask) + std::log(1.1) + std::log(m_inflation);
  RejectionResult res;
  res.draws.resize(row.values.size(), n);
  Index accepted = 0;
  const Index chunk = 4096;
  const Eigen::VectorXd base = row.values;
  while (accepted < n) {
    if (res.proposals >= proposal_budget)
      throw BudgetError("rejection sampler exhausted its proposal budget; refine the M grid or use another imputer");
    const Eigen::MatrixXd z = prior_sample(chunk, model.latent_dim, rng);
    const DecoderOutput eta = decoder_forward(model, z);
    const Eigen::VectorXd ll = marginal_decoder_loglik(eta, row.values, row.mask);
    for (Index s = 0; s < chunk && accepted < n; ++s) {
      ++res.proposals;
      if (std::log(rng.uniform()) < ll[s] - log_m)
        res.draws.col(accepted++) = decoder_conditional_sample(eta, s, base, row.mask, rng).values;
    }
    if (res.proposals >= 1'000'000 && res.acceptance_rate() < 1e-6)
      throw BudgetError("rejection sampler acceptance rate below 1e-6; refine the M grid or use another imputer");
  }
  return res;
}

std::string to_string(DemissMode m) {
  switch (m) {
    case DemissMode::split: return "split";
    case DemissMode::cvi: return "cvi";
    case DemissMode::mvb: return "mvb";
  }
  return "unknown";
}

DemissMode demiss_mode_from_string(const std::string& s) {
  if (s == "split" || s == "demissvae") return DemissMode::split;
  if (s == "cvi") return DemissMode::cvi;
  if (s == "mvb") return DemissMode::mvb;
  throw ParameterError("unknown DeMissVAE mode '" + s + "'");
}

namespace {

struct RowPass {
  Eigen::MatrixXd z;
  Eigen::VectorXd log_q;
  Eigen::VectorXd ll_obs;
  Eigen::VectorXd ll_all;
  Eigen::VectorXd prior;
};

RowPass demiss_row_pass(const VAEModel& model, const Encoder& enc, const RowRef& row,
                        const Eigen::Ref<const Eigen::MatrixXd>& completions, Index latents, Rng& rng, bool need_obs,
                        bool need_all) {
  if (latents < 1) throw ParameterError("demiss: L must be >= 1");
  const Index k = completions.cols();
  for (Index c = 0; c < k; ++c)
    for (Index d = 0; d < completions.rows(); ++d)
      if (row.mask[d] && completions(d, c) != row.values[d])
        throw ParameterError("demiss: completion " + std::to_string(c) + " disagrees with the observed values");
  const EncoderOutput out = encode_batch(enc, completed_encoder_input(completions));
  RowPass p;
  p.z.resize(model.latent_dim, k * latents);
  p.log_q.resize(k * latents);
  Eigen::MatrixXd x(completions.rows(), k * latents);
  MaskMatrix obs(completions.rows(), k * latents);
  for (Index c = 0; c < k; ++c) {
    const LatentSampleBatch b = sample_ancestral(out.params[static_cast<std::size_t>(c)], latents, rng);
    p.z.middleCols(c * latents, latents) = b.z;
    p.log_q.segment(c * latents, latents) = b.log_q;
    for (Index l = 0; l < latents; ++l) {
      x.col(c * latents + l) = completions.col(c);
      obs.col(c * latents + l) = row.mask;
    }
  }
  const DecoderOutput eta = decoder_forward(model, p.z);
  p.prior = prior_logpdf_batch(p.z);
  if (need_obs) p.ll_obs = marginal_decoder_loglik_columns(eta, x, obs);
  if (need_all) p.ll_all = marginal_decoder_loglik_columns(eta, x, all_observed(x.rows(), x.cols()));
  return p;
}

double mean_seq(const Eigen::VectorXd& v) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(v.size());
}

} // namespace

DemissObjectives demiss_objectives(const VAEModel& model, const Encoder& enc, const RowRef& row,
                                   const Eigen::Ref<const Eigen::MatrixXd>& completions, Index latents, Rng& rng) {
  const RowPass p = demiss_row_pass(model, enc, row, completions, latents, rng, true, true);
  return {mean_seq(p.ll_obs + p.prior), mean_seq(p.ll_all + p.prior - p.log_q)};
}

double demiss_theta_objective(const VAEModel& model, const Encoder& enc, const RowRef& row,
                              const Eigen::Ref<const Eigen::MatrixXd>& completions, Index latents, Rng& rng) {
  const RowPass p = demiss_row_pass(model, enc, row, completions, latents, rng, true, false);
  return mean_seq(p.ll_obs + p.prior);
}

double demiss_phi_objective(const VAEModel& model, const Encoder& enc, const RowRef& row,
                            const Eigen::Ref<const Eigen::MatrixXd>& completions, Index latents, Rng& rng) {
  const RowPass p = demiss_row_pass(model, enc, row, completions, latents, rng, false, true);
  return mean_seq(p.ll_all + p.prior - p.log_q);
}

namespace {

struct BatchPass {
  EncoderOutput enc;
  std::vector<LatentSampleBatch> batches;
  DecoderOutput eta;
  Eigen::MatrixXd x;
  MaskMatrix obs;
  Eigen::MatrixXd z;
  Eigen::VectorXd log_q;
  Eigen::VectorXd prior;
};

BatchPass batch_pass(const VAEModel& model, const Encoder& enc, const Eigen::MatrixXd& completions, const MaskMatrix& masks,
                     Index latents, Rng& rng, PassCounter* counter) {
  if (enc.components != 1) throw ParameterError("demiss: the completed-data encoder must have a single component");
  if (latents < 1) throw ParameterError("demiss: L must be >= 1");
  BatchPass p;
  const Index n = completions.cols();
  p.enc = encode_batch(enc, completed_encoder_input(completions), true, counter);
  p.z.resize(model.latent_dim, n * latents);
  p.log_q.resize(n * latents);
  p.x.resize(completions.rows(), n * latents);
  p.obs.resize(completions.rows(), n * latents);
  p.batches.reserve(static_cast<std::size_t>(n));
  for (Index c = 0; c < n; ++c) {
    p.batches.push_back(sample_ancestral(p.enc.params[static_cast<std::size_t>(c)], latents, rng));
    p.z.middleCols(c * latents, latents) = p.batches.back().z;
    p.log_q.segment(c * latents, latents) = p.batches.back().log_q;
    for (Index l = 0; l < latents; ++l) {
      p.x.col(c * latents + l) = completions.col(c);
      p.obs.col(c * latents + l) = masks.col(c);
    }
  }
  p.eta = decoder_forward(model, p.z, true, counter);
  p.prior = prior_logpdf_batch(p.z);
  return p;
}

// Encoder gradient for the completed-data objectives: pathwise through z and,
// without STL, the score of log q(z | x^k).
Eigen::MatrixXd phi_seed_own_density(const BatchPass& p, const Eigen::MatrixXd& grad_z, double c, bool stl, Index latents) {
  const Index n = static_cast<Index>(p.enc.params.size());
  Eigen::MatrixXd enc_grad(p.enc.raw.rows(), n);
  Eigen::VectorXd dq_dz;
  MixtureGrad dq_dpsi;
  for (Index col = 0; col < n; ++col) {
    const auto& psi = p.enc.params[static_cast<std::size_t>(col)];
    const auto& batch = p.batches[static_cast<std::size_t>(col)];
    MixtureGrad g = MixtureGrad::zeros(psi.components(), psi.latent_dim());
    for (Index l = 0; l < latents; ++l) {
      const Index s = col * latents + l;
      const auto z = p.z.col(s);
      mixture_logpdf_grad(psi, z, &dq_dz, stl ? nullptr : &dq_dpsi);
      g += explicit_vjp(psi, batch.component[l], batch.eps.col(l), grad_z.col(s) - c * z - c * dq_dz);
      if (!stl) {
        dq_dpsi *= -c;
        g += dq_dpsi;
      }
    }
    enc_grad.col(col) = mixture_grad_to_raw(p.enc.raw.col(col), g);
  }
  return enc_grad;
}

} // namespace

DemissGradient demiss_gradient(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data,
                               const ImputationStore& store, const std::vector<Index>& rows, Index latents, DemissMode mode,
                               bool stl, Rng& rng, PassCounter* counter) {
  const ChainBlock b = gather(data, store, rows);
  const Index k = store.k;
  BatchPass p = batch_pass(model, enc, b.x, b.mask, latents, rng, counter);
  const Index n = p.z.cols();
  const double c = 1.0 / static_cast<double>(n);
  const MaskMatrix all = all_observed(p.x.rows(), n);
  const Eigen::VectorXd ll_obs = marginal_decoder_loglik_columns(p.eta, p.x, p.obs);
  const Eigen::VectorXd ll_all = marginal_decoder_loglik_columns(p.eta, p.x, all);
  for (Index s = 0; s < n; ++s)
    if (!std::isfinite(ll_obs[s]) || !std::isfinite(ll_all[s]))
      throw NumericError("demiss: non-finite objective for row " +
                         std::to_string(rows[static_cast<std::size_t>(s / (latents * k))]) + ", chain " +
                         std::to_string((s / latents) % k) + ", latent " + std::to_string(s % latents));

  DemissGradient out;
  out.theta_objective = mean_seq(ll_obs + p.prior);
  out.grad_theta = Eigen::VectorXd::Zero(model.theta.size());
  out.grad_phi = Eigen::VectorXd::Zero(enc.phi.size());
  const Eigen::VectorXd coeff = Eigen::VectorXd::Constant(n, c);
  Eigen::MatrixXd grad_z;
  Eigen::MatrixXd enc_grad;

  switch (mode) {
    case DemissMode::split: {
      out.phi_objective = mean_seq(ll_all + p.prior - p.log_q);
      decoder_backward(model, p.eta, marginal_decoder_loglik_grad(p.eta, p.x, p.obs, coeff), &out.grad_theta, nullptr, counter);
      decoder_backward(model, p.eta, marginal_decoder_loglik_grad(p.eta, p.x, all, coeff), nullptr, &grad_z, counter);
      enc_grad = phi_seed_own_density(p, grad_z, c, stl, latents);
      break;
    }
    case DemissMode::mvb: {
      out.phi_objective = mean_seq(ll_all + p.prior - p.log_q);
      decoder_backward(model, p.eta, marginal_decoder_loglik_grad(p.eta, p.x, all, coeff), &out.grad_theta, &grad_z, counter);
      enc_grad = phi_seed_own_density(p, grad_z, c, stl, latents);
      break;
    }
    case DemissMode::cvi: {
      decoder_backward(model, p.eta, marginal_decoder_loglik_grad(p.eta, p.x, p.obs, coeff), &out.grad_theta, &grad_z, counter);
      enc_grad.resize(enc.raw_dim(), static_cast<Index>(p.enc.params.size()));
      double phi_total = 0.0;
      for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        const Index off = static_cast<Index>(ri) * k;
        // Equal-weight mixture of the row's completed-data posteriors.
        MixtureParams mix;
        mix.logits = Eigen::VectorXd::Zero(k);
        mix.means.resize(model.latent_dim, k);
        mix.stds.resize(model.latent_dim, k);
        for (Index j = 0; j < k; ++j) {
          mix.means.col(j) = p.enc.params[static_cast<std::size_t>(off + j)].means.col(0);
          mix.stds.col(j) = p.enc.params[static_cast<std::size_t>(off + j)].stds.col(0);
        }
        std::vector<MixtureGrad> g(static_cast<std::size_t>(k), MixtureGrad::zeros(1, model.latent_dim));
        Eigen::VectorXd dq_dz;
        MixtureGrad dq_dpsi;
        for (Index j = 0; j < k; ++j) {
          const auto& psi = p.enc.params[static_cast<std::size_t>(off + j)];
          const auto& batch = p.batches[static_cast<std::size_t>(off + j)];
          for (Index l = 0; l < latents; ++l) {
            const Index s = (off + j) * latents + l;
            const auto z = p.z.col(s);
            const double lq = mixture_logpdf_grad(mix, z, &dq_dz, stl ? nullptr : &dq_dpsi);
            phi_total += ll_obs[s] + p.prior[s] - lq;
            g[static_cast<std::size_t>(j)] +=
                explicit_vjp(psi, batch.component[l], batch.eps.col(l), grad_z.col(s) - c * z - c * dq_dz);
            if (!stl)
              for (Index m = 0; m < k; ++m) {
                g[static_cast<std::size_t>(m)].means.col(0) -= c * dq_dpsi.means.col(m);
                g[static_cast<std::size_t>(m)].stds.col(0) -= c * dq_dpsi.stds.col(m);
              }
          }
        }
        for (Index j = 0; j < k; ++j)
          enc_grad.col(off + j) = mixture_grad_to_raw(p.enc.raw.col(off + j), g[static_cast<std::size_t>(j)]);
      }
      out.phi_objective = phi_total / static_cast<double>(n);
      break;
    }
  }
  encoder_backward(enc, p.enc, enc_grad, &out.grad_phi, nullptr, counter);
  return out;
}

DemissGradient complete_data_gradient(const VAEModel& model, const Encoder& enc, const ImputationStore& store,
                                      const std::vector<Index>& rows, Index latents, bool stl, Rng& rng, PassCounter* counter) {
  Eigen::MatrixXd x(store.completions.rows(), static_cast<Index>(rows.size()) * store.k);
  Index col = 0;
  for (Index r : rows)
    for (Index j = 0; j < store.k; ++j) x.col(col++) = store.completions.col(store.column(r, j));
  const MaskMatrix all_x = all_observed(x.rows(), x.cols());
  BatchPass p = batch_pass(model, enc, x, all_x, latents, rng, counter);
  const Index n = p.z.cols();
  const double c = 1.0 / static_cast<double>(n);
  const MaskMatrix all = all_observed(p.x.rows(), n);
  const Eigen::VectorXd ll = marginal_decoder_loglik_columns(p.eta, p.x, all);
  DemissGradient out;
  out.theta_objective = out.phi_objective = mean_seq(ll + p.prior - p.log_q);
  out.grad_theta = Eigen::VectorXd::Zero(model.theta.size());
  out.grad_phi = Eigen::VectorXd::Zero(enc.phi.size());
  Eigen::MatrixXd grad_z;
  decoder_backward(model, p.eta, marginal_decoder_loglik_grad(p.eta, p.x, all, Eigen::VectorXd::Constant(n, c)),
                   &out.grad_theta, &grad_z, counter);
  const Eigen::MatrixXd enc_grad = phi_seed_own_density(p, grad_z, c, stl, latents);
  encoder_backward(enc, p.enc, enc_grad, &out.grad_phi, nullptr, counter);
  return out;
}

} // namespace missvae
