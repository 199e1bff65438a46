#include "missvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "missvae/demiss.hpp"
#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"

namespace missvae {

GridLoglik grid_loglik(const VAEModel& model, const RowRef& row, const QuadratureGrid& grid, bool check_refinement,
                       double tolerance) {
  if (model.latent_dim > 2) throw UnsupportedError("grid_loglik: latent dimension " + std::to_string(model.latent_dim) + " > 2");
  GridLoglik out;
  out.value = GridEvaluator(model, grid).loglik(row.values, row.mask);
  out.refined_value = out.value;
  if (check_refinement) {
    out.refined_value = GridEvaluator(model, grid.refined()).loglik(row.values, row.mask);
    out.unstable = std::abs(out.refined_value - out.value) > tolerance;
  }
  return out;
}

DatasetGridLoglik grid_loglik_dataset(const VAEModel& model, const IncompleteDataset& data, const QuadratureGrid& grid,
                                      bool check_refinement, double tolerance) {
  if (model.latent_dim > 2) throw UnsupportedError("grid_loglik: latent dimension " + std::to_string(model.latent_dim) + " > 2");
  DatasetGridLoglik out;
  const GridEvaluator ev(model, grid);
  out.per_row.resize(data.size());
  for (Index i = 0; i < data.size(); ++i) out.per_row[i] = ev.loglik(data.values.col(i), data.mask.col(i));
  out.mean = out.per_row.mean();
  if (check_refinement) {
    const GridEvaluator fine(model, grid.refined());
    double s = 0.0;
    for (Index i = 0; i < data.size(); ++i) s += fine.loglik(data.values.col(i), data.mask.col(i));
    out.refinement_delta = std::abs(s / static_cast<double>(data.size()) - out.mean);
    out.unstable = out.refinement_delta > tolerance;
  }
  return out;
}

BoundEstimate iwelbo_eval(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, Index importance_samples,
                          Rng& rng, Index chunk) {
  if (importance_samples < 1) throw ParameterError("iwelbo_eval: I must be >= 1");
  if (chunk < 1) throw ParameterError("iwelbo_eval: chunk must be >= 1");
  BoundEstimate est;
  est.per_datapoint.resize(data.size());
  est.budget = SampleBudget{1, enc.components, importance_samples, SamplingScheme::ancestral};
  const Index batch_rows = 64;
  for (Index start = 0; start < data.size(); start += batch_rows) {
    const Index nb = std::min(batch_rows, data.size() - start);
    std::vector<Index> rows(static_cast<std::size_t>(nb));
    std::iota(rows.begin(), rows.end(), start);
    const EncoderOutput out = encode_batch(enc, zero_mask_encode_batch(data, rows));
    for (Index b = 0; b < nb; ++b) {
      const Index i = start + b;
      const auto& psi = out.params[static_cast<std::size_t>(b)];
      LogSumExpAccumulator acc;
      for (Index done = 0; done < importance_samples; done += chunk) {
        const Index n = std::min(chunk, importance_samples - done);
        const LatentSampleBatch batch = sample_ancestral(psi, n, rng);
        acc.add(log_importance_weights(model, psi, data.row(i), batch));
      }
      est.per_datapoint[i] = acc.value() - std::log(static_cast<double>(importance_samples));
    }
  }
  est.value = est.per_datapoint.mean();
  return est;
}

Encoder encoder_finetune(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, Index steps,
                         Index batch_size, const ObjectiveSpec& spec, const OptimizerConfig& opt, Rng& rng) {
  Encoder tuned = enc;
  if (steps <= 0) return tuned;
  AmsGrad optimizer(tuned.phi.size(), opt);
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Index pos = data.size();
  for (Index step = 0; step < steps; ++step) {
    if (pos + batch_size > data.size()) {
      std::shuffle(order.begin(), order.end(), rng.engine());
      pos = 0;
    }
    const Index nb = std::min(batch_size, data.size());
    const std::vector<Index> rows(order.begin() + pos, order.begin() + pos + nb);
    pos += nb;
    ObjectiveGradient g = objective_gradient(model, tuned, data, rows, spec, rng, nullptr, false, true);
    if (opt.clip_norm > 0.0) clip_global_norm({&g.grad_phi}, opt.clip_norm);
    optimizer.step(tuned.phi, g.grad_phi);
  }
  return tuned;
}

namespace {

struct Welford {
  Eigen::VectorXd mean;
  Eigen::VectorXd m2;
  Index n = 0;

  void add(const Eigen::VectorXd& x) {
    if (n == 0) {
      mean = Eigen::VectorXd::Zero(x.size());
      m2 = Eigen::VectorXd::Zero(x.size());
    }
    ++n;
    const Eigen::VectorXd delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2.array() += delta.array() * (x - mean).array();
  }

  std::pair<double, Index> median_snr() const {
    std::vector<double> snr;
    Index excluded = 0;
    for (Index i = 0; i < mean.size(); ++i) {
      const double var = n > 1 ? m2[i] / static_cast<double>(n - 1) : 0.0;
      if (!(var > 0.0)) {
        ++excluded;
        continue;
      }
      snr.push_back(std::abs(mean[i]) / std::sqrt(var));
    }
    if (snr.empty()) return {0.0, excluded};
    const std::size_t mid = snr.size() / 2;
    std::nth_element(snr.begin(), snr.begin() + static_cast<std::ptrdiff_t>(mid), snr.end());
    double med = snr[mid];
    if (snr.size() % 2 == 0) med = 0.5 * (med + *std::max_element(snr.begin(), snr.begin() + static_cast<std::ptrdiff_t>(mid)));
    return {med, excluded};
  }
};

} // namespace

SnrReport gradient_snr(const GradientFn& gradient, Index rows, Index batch_size, Index epochs, Rng& rng) {
  if (rows < 1 || batch_size < 1 || epochs < 1) throw ParameterError("gradient_snr: rows, batch size and epochs must be positive");
  Welford phi, theta;
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (Index start = 0; start < rows; start += batch_size) {
      const Index nb = std::min(batch_size, rows - start);
      const std::vector<Index> batch(order.begin() + start, order.begin() + start + nb);
      const auto [gt, gp] = gradient(batch, rng);
      theta.add(gt);
      phi.add(gp);
    }
  }
  SnrReport r;
  std::tie(r.median_phi, r.excluded_phi) = phi.median_snr();
  std::tie(r.median_theta, r.excluded_theta) = theta.median_snr();
  r.gradient_samples = phi.n;
  return r;
}

double mi_posterior_gap(const VAEModel& model, const Eigen::Ref<const Eigen::MatrixXd>& complete, const MaskMatrix& mask,
                        const QuadratureGrid& grid) {
  if (model.latent_dim > 2) throw UnsupportedError("mi_posterior_gap: latent dimension > 2");
  if (complete.cols() != mask.cols() || complete.rows() != mask.rows()) throw ParameterError("mi_posterior_gap: shape mismatch");
  const GridEvaluator ev(model, grid);
  const Mask ones = Mask::Constant(complete.rows(), true);
  double total = 0.0;
  for (Index i = 0; i < complete.cols(); ++i) {
    const Eigen::VectorXd lp = ev.posterior_log_mass(complete.col(i), ones);
    const Eigen::VectorXd lq = ev.posterior_log_mass(complete.col(i), mask.col(i));
    double kl = 0.0;
    for (Index g = 0; g < lp.size(); ++g) {
      const double p = std::exp(lp[g]);
      if (p > 0.0) kl += p * (lp[g] - lq[g]);
    }
    total += std::max(0.0, kl);
  }
  return total / static_cast<double>(complete.cols());
}

double js_divergence_grid(const Eigen::Ref<const Eigen::VectorXd>& log_p, const Eigen::Ref<const Eigen::VectorXd>& log_q,
                          const Eigen::Ref<const Eigen::VectorXd>& log_weights) {
  if (log_p.size() != log_q.size() || log_p.size() != log_weights.size()) throw ParameterError("js_divergence_grid: size mismatch");
  // Node masses under each distribution.
  const Eigen::VectorXd ap = log_p + log_weights;
  const Eigen::VectorXd aq = log_q + log_weights;
  const Eigen::VectorXd mp = (ap.array() - log_sum_exp(ap)).exp();
  const Eigen::VectorXd mq = (aq.array() - log_sum_exp(aq)).exp();
  double js = 0.0;
  for (Index g = 0; g < mp.size(); ++g) {
    const double m = 0.5 * (mp[g] + mq[g]);
    if (mp[g] > 0.0) js += 0.5 * mp[g] * std::log(mp[g] / m);
    if (mq[g] > 0.0) js += 0.5 * mq[g] * std::log(mq[g] / m);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

DataGrid data_grid_for(const std::vector<const MoGParams*>& dists, Index resolution) {
  if (dists.empty()) throw ParameterError("data_grid_for: no distributions");
  const Index m = dists.front()->dim();
  if (m > 2) throw UnsupportedError("JS divergence is only supported on at most 2 dimensions");
  if (resolution <= 0) resolution = m == 1 ? 2001 : 161;
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(m, INFINITY);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(m, -INFINITY);
  for (const auto* p : dists) {
    if (p->dim() != m) throw ParameterError("data_grid_for: dimension mismatch");
    for (Index c = 0; c < p->components(); ++c) {
      if (p->weights[c] <= 0.0) continue;
      for (Index d = 0; d < m; ++d) {
        const double sd = std::sqrt(p->covariances[static_cast<std::size_t>(c)](d, d));
        lo[d] = std::min(lo[d], p->means(d, c) - 7.0 * sd);
        hi[d] = std::max(hi[d], p->means(d, c) + 7.0 * sd);
      }
    }
  }
  DataGrid g;
  std::vector<Eigen::VectorXd> axes, lw;
  for (Index d = 0; d < m; ++d) {
    axes.push_back(Eigen::VectorXd::LinSpaced(resolution, lo[d], hi[d]));
    const double h = (hi[d] - lo[d]) / static_cast<double>(resolution - 1);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(resolution, std::log(h));
    w[0] += std::log(0.5);
    w[resolution - 1] += std::log(0.5);
    lw.push_back(w);
  }
  const Index total = m == 1 ? resolution : resolution * resolution;
  g.nodes.resize(m, total);
  g.log_weights.resize(total);
  for (Index t = 0; t < total; ++t) {
    const Index i = t % resolution;
    g.nodes(0, t) = axes[0][i];
    g.log_weights[t] = lw[0][i];
    if (m == 2) {
      const Index j = t / resolution;
      g.nodes(1, t) = axes[1][j];
      g.log_weights[t] += lw[1][j];
    }
  }
  return g;
}

namespace {

Eigen::VectorXd mog_log_density_on(const MoGParams& p, const Eigen::MatrixXd& nodes) {
  const MoGDensity dens(p);
  Eigen::VectorXd out(nodes.cols());
  for (Index t = 0; t < nodes.cols(); ++t) out[t] = dens.log_pdf(nodes.col(t));
  return out;
}

} // namespace

double js_divergence_mog(const MoGParams& p, const MoGParams& q, Index resolution) {
  const DataGrid g = data_grid_for({&p, &q}, resolution);
  return js_divergence_grid(mog_log_density_on(p, g.nodes), mog_log_density_on(q, g.nodes), g.log_weights);
}

double js_divergence_samples(const Eigen::Ref<const Eigen::MatrixXd>& samples, const MoGParams& q, Index resolution) {
  const Index m = samples.rows();
  const Index n = samples.cols();
  if (m != q.dim()) throw ParameterError("js_divergence_samples: dimension mismatch");
  if (m > 2) throw UnsupportedError("JS divergence is only supported on at most 2 dimensions");
  if (n < 2) throw ParameterError("js_divergence_samples: need at least 2 samples");
  // Gaussian KDE with a diagonal Scott bandwidth; separable, so each axis is a kernel matrix.
  const double factor = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(m) + 4.0));
  Eigen::VectorXd h(m);
  for (Index d = 0; d < m; ++d) {
    const double mean = samples.row(d).mean();
    const double sd = std::sqrt((samples.row(d).array() - mean).square().sum() / static_cast<double>(n - 1));
    h[d] = std::max(sd * factor, 1e-3);
  }
  MoGParams extent;
  extent.weights = Eigen::VectorXd::Constant(2, 0.5);
  extent.means.resize(m, 2);
  extent.means.col(0) = samples.rowwise().minCoeff();
  extent.means.col(1) = samples.rowwise().maxCoeff();
  const Eigen::MatrixXd bw = h.array().square().matrix().asDiagonal();
  extent.covariances = {bw, bw};
  const DataGrid g = data_grid_for({&q, &extent}, resolution);
  const Index r = m == 1 ? g.nodes.cols() : static_cast<Index>(std::llround(std::sqrt(static_cast<double>(g.nodes.cols()))));
  std::vector<Eigen::MatrixXd> kernel;
  for (Index d = 0; d < m; ++d) {
    Eigen::MatrixXd k(n, r);
    for (Index i = 0; i < r; ++i) {
      const double t = g.nodes(d, d == 0 ? i : i * r);
      k.col(i) = ((samples.row(d).transpose().array() - t) / h[d]).square().unaryExpr([&](double u) {
        return std::exp(-0.5 * u) / (h[d] * std::sqrt(2.0 * M_PI));
      });
    }
    kernel.push_back(std::move(k));
  }
  Eigen::VectorXd density;
  if (m == 1) {
    density = kernel[0].colwise().sum().transpose();
  } else {
    const Eigen::MatrixXd joint = kernel[0].transpose() * kernel[1];
    density = Eigen::Map<const Eigen::VectorXd>(joint.data(), joint.size());
  }
  density /= static_cast<double>(n);
  return js_divergence_grid(density.array().log().matrix(), mog_log_density_on(q, g.nodes), g.log_weights);
}

std::string to_string(PosteriorKind k) {
  switch (k) {
    case PosteriorKind::model_complete: return "model_complete";
    case PosteriorKind::model_incomplete: return "model_incomplete";
    case PosteriorKind::variational: return "variational";
    case PosteriorKind::imputation_mixture: return "imputation_mixture";
  }
  return "unknown";
}

Eigen::VectorXd posterior_grid(const GridEvaluator& grid, const Encoder& enc, const Eigen::Ref<const Eigen::VectorXd>& values,
                               const Eigen::Ref<const Mask>& mask, PosteriorKind which,
                               const Eigen::Ref<const Eigen::MatrixXd>& completions) {
  const Eigen::MatrixXd& nodes = grid.nodes();
  switch (which) {
    case PosteriorKind::model_complete:
      return grid.posterior_density(values, Mask::Constant(values.size(), true));
    case PosteriorKind::model_incomplete:
      return grid.posterior_density(values, mask);
    case PosteriorKind::variational: {
      if (enc.latent_dim != nodes.rows()) throw UnsupportedError("posterior_grid: encoder latent dimension differs from the grid");
      const MixtureParams psi = encode(enc, values, mask);
      return mixture_logpdf_batch(psi, nodes).array().exp();
    }
    case PosteriorKind::imputation_mixture: {
      if (completions.cols() == 0) throw ParameterError("posterior_grid: imputation mixture needs completions");
      if (enc.latent_dim != nodes.rows()) throw UnsupportedError("posterior_grid: encoder latent dimension differs from the grid");
      const EncoderOutput out = encode_batch(enc, completed_encoder_input(completions));
      Eigen::VectorXd field = Eigen::VectorXd::Zero(nodes.cols());
      for (const auto& psi : out.params) field.array() += mixture_logpdf_batch(psi, nodes).array().exp();
      return field / static_cast<double>(completions.cols());
    }
  }
  throw ParameterError("posterior_grid: unknown kind");
}

} // namespace missvae
