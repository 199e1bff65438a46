#include "missvae/mog.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"

namespace missvae {

void MoGParams::validate() const {
  const Index c = weights.size();
  if (c < 1 || means.rows() < 1) throw ParameterError("MoGParams: need at least one component and one dimension");
  if (means.cols() != c || static_cast<Index>(covariances.size()) != c)
    throw ParameterError("MoGParams: component counts disagree");
  if ((weights.array() < 0.0).any()) throw ParameterError("MoGParams: negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-9) throw ParameterError("MoGParams: weights do not sum to one");
  const Index d = means.rows();
  for (Index k = 0; k < c; ++k) {
    const auto& cov = covariances[static_cast<std::size_t>(k)];
    if (cov.rows() != d || cov.cols() != d) throw ParameterError("MoGParams: covariance shape mismatch");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + cov.cwiseAbs().maxCoeff()))
      throw ParameterError("MoGParams: covariance " + std::to_string(k) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0.0))
      throw ParameterError("MoGParams: covariance " + std::to_string(k) + " is not positive definite");
  }
}

nlohmann::json mog_to_json(const MoGParams& params) {
  nlohmann::json doc;
  doc["weights"] = std::vector<double>(params.weights.data(), params.weights.data() + params.weights.size());
  auto means = nlohmann::json::array();
  auto covs = nlohmann::json::array();
  for (Index k = 0; k < params.components(); ++k) {
    const Eigen::VectorXd mu = params.means.col(k);
    means.push_back(std::vector<double>(mu.data(), mu.data() + mu.size()));
    auto rows = nlohmann::json::array();
    const auto& cov = params.covariances[static_cast<std::size_t>(k)];
    for (Index i = 0; i < cov.rows(); ++i) {
      const Eigen::VectorXd r = cov.row(i).transpose();
      rows.push_back(std::vector<double>(r.data(), r.data() + r.size()));
    }
    covs.push_back(rows);
  }
  doc["means"] = means;
  doc["covariances"] = covs;
  doc["dim"] = params.dim();
  doc["components"] = params.components();
  if (params.seed) doc["seed"] = *params.seed; else doc["seed"] = nullptr;
  return doc;
}

MoGParams mog_from_json(const nlohmann::json& doc) {
  try {
    MoGParams p;
    const auto w = doc.at("weights").get<std::vector<double>>();
    const auto means = doc.at("means").get<std::vector<std::vector<double>>>();
    const auto covs = doc.at("covariances").get<std::vector<std::vector<std::vector<double>>>>();
    const Index c = static_cast<Index>(w.size());
    if (c == 0 || means.size() != w.size() || covs.size() != w.size())
      throw IngestionError("mog json: inconsistent component counts");
    const Index d = static_cast<Index>(means[0].size());
    p.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), c);
    p.means.resize(d, c);
    for (Index k = 0; k < c; ++k) {
      const auto& mu = means[static_cast<std::size_t>(k)];
      if (static_cast<Index>(mu.size()) != d) throw IngestionError("mog json: ragged means");
      p.means.col(k) = Eigen::Map<const Eigen::VectorXd>(mu.data(), d);
      Eigen::MatrixXd cov(d, d);
      const auto& rows = covs[static_cast<std::size_t>(k)];
      if (static_cast<Index>(rows.size()) != d) throw IngestionError("mog json: ragged covariance");
      for (Index i = 0; i < d; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        if (static_cast<Index>(r.size()) != d) throw IngestionError("mog json: ragged covariance");
        for (Index j = 0; j < d; ++j) cov(i, j) = r[static_cast<std::size_t>(j)];
      }
      p.covariances.push_back(cov);
    }
    if (doc.contains("seed") && !doc["seed"].is_null()) p.seed = doc["seed"].get<std::uint64_t>();
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("mog json: ") + e.what());
  }
}

namespace {

// Inverse-Wishart(nu, I) via the Bartlett factor of Wishart(nu, I).
Eigen::MatrixXd sample_inverse_wishart_identity(Index dim, double nu, Rng& rng) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(nu - static_cast<double>(i)));
    for (Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // (A A^T)^{-1} = A^{-T} A^{-1}
  const Eigen::MatrixXd a_inv =
      a.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(dim, dim));
  Eigen::MatrixXd cov = a_inv.transpose() * a_inv;
  return 0.5 * (cov + cov.transpose());
}

} // namespace

Eigen::VectorXd mog_mean(const MoGParams& params) { return params.means * params.weights; }

Eigen::MatrixXd mog_covariance(const MoGParams& params) {
  const Eigen::VectorXd m = mog_mean(params);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(params.dim(), params.dim());
  for (Index k = 0; k < params.components(); ++k) {
    const Eigen::VectorXd mu = params.means.col(k);
    second += params.weights[k] * (params.covariances[static_cast<std::size_t>(k)] + mu * mu.transpose());
  }
  return second - m * m.transpose();
}

MoGParams generate_mog(std::uint64_t seed, Index dim, Index components) {
  if (dim < 1 || components < 1) throw ParameterError("generate_mog: dim and components must be >= 1");
  Rng rng(seed);
  MoGParams p;
  p.seed = seed;
  p.weights.resize(components);
  p.means.resize(dim, components);
  for (Index k = 0; k < components; ++k)
    p.covariances.push_back(sample_inverse_wishart_identity(dim, static_cast<double>(dim), rng));
  for (Index k = 0; k < components; ++k)
    for (Index d = 0; d < dim; ++d) p.means(d, k) = 3.0 * rng.normal();
  for (Index k = 0; k < components; ++k) p.weights[k] = rng.gamma(1.0);
  p.weights /= p.weights.sum();

  // Global affine standardization, applied analytically.
  const Eigen::VectorXd m = mog_mean(p);
  const Eigen::VectorXd s = mog_covariance(p).diagonal().cwiseSqrt();
  const Eigen::VectorXd inv_s = s.cwiseInverse();
  for (Index k = 0; k < components; ++k) {
    p.means.col(k) = (p.means.col(k) - m).cwiseProduct(inv_s);
    auto& cov = p.covariances[static_cast<std::size_t>(k)];
    cov = inv_s.asDiagonal() * cov * inv_s.asDiagonal();
    cov = 0.5 * (cov + cov.transpose());
  }
  const Eigen::VectorXd check_mean = mog_mean(p);
  const Eigen::VectorXd check_var = mog_covariance(p).diagonal();
  if (check_mean.cwiseAbs().maxCoeff() > 1e-6 || (check_var.array() - 1.0).abs().maxCoeff() > 1e-6)
    throw NumericError("generate_mog: standardization failed to reach zero mean / unit variance");
  p.validate();
  return p;
}

Eigen::MatrixXd mog_sample(const MoGParams& params, Index n, Rng& rng, Eigen::VectorXi* components_out) {
  if (n < 1) throw ParameterError("mog_sample: n must be >= 1");
  params.validate();
  std::vector<Eigen::MatrixXd> factors;
  for (const auto& cov : params.covariances) factors.push_back(Eigen::LLT<Eigen::MatrixXd>(cov).matrixL());
  Eigen::MatrixXd out(params.dim(), n);
  if (components_out) components_out->resize(n);
  const std::span<const double> w(params.weights.data(), static_cast<std::size_t>(params.weights.size()));
  for (Index i = 0; i < n; ++i) {
    const Index k = params.components() == 1 ? 0 : rng.categorical(w);
    const Eigen::VectorXd eps = rng.normal_vector(params.dim());
    out.col(i) = params.means.col(k) + factors[static_cast<std::size_t>(k)] * eps;
    if (components_out) (*components_out)[i] = static_cast<int>(k);
  }
  return out;
}

MoGDensity::MoGDensity(const MoGParams& params) : params_(params) {
  const Index c = params.components();
  const double d = static_cast<double>(params.dim());
  log_norm_.resize(c);
  for (Index k = 0; k < c; ++k) {
    chol_.emplace_back(params.covariances[static_cast<std::size_t>(k)]);
    if (chol_.back().info() != Eigen::Success)
      throw ParameterError("MoGDensity: covariance is not positive definite");
    const double log_det = 2.0 * chol_.back().matrixL().toDenseMatrix().diagonal().array().log().sum();
    log_norm_[k] = std::log(params.weights[k]) - 0.5 * (d * kLogTwoPi + log_det);
  }
}

Eigen::VectorXd MoGDensity::component_log_joint(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (!x.allFinite()) throw ParameterError("mog_logpdf: non-finite input");
  if (x.size() != params_.dim()) throw ParameterError("mog_logpdf: dimension mismatch");
  Eigen::VectorXd out(params_.components());
  for (Index k = 0; k < params_.components(); ++k) {
    const Eigen::VectorXd diff = x - params_.means.col(k);
    const Eigen::VectorXd y = chol_[static_cast<std::size_t>(k)].matrixL().solve(diff);
    out[k] = log_norm_[k] - 0.5 * y.squaredNorm();
  }
  return out;
}

double MoGDensity::log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return log_sum_exp(component_log_joint(x));
}

double mog_logpdf(const MoGParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return MoGDensity(params).log_pdf(x);
}

MoGParams mog_marginal(const MoGParams& params, const std::vector<Index>& dims) {
  if (dims.empty()) throw ParameterError("mog_marginal: empty dimension list");
  const Index m = static_cast<Index>(dims.size());
  MoGParams out;
  out.weights = params.weights;
  out.means.resize(m, params.components());
  for (Index k = 0; k < params.components(); ++k) {
    const auto& cov = params.covariances[static_cast<std::size_t>(k)];
    Eigen::MatrixXd sub(m, m);
    for (Index i = 0; i < m; ++i) {
      out.means(i, k) = params.means(dims[static_cast<std::size_t>(i)], k);
      for (Index j = 0; j < m; ++j) sub(i, j) = cov(dims[static_cast<std::size_t>(i)], dims[static_cast<std::size_t>(j)]);
    }
    out.covariances.push_back(sub);
  }
  return out;
}

MoGParams mog_conditional(const MoGParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::Ref<const Mask>& mask) {
  const Index d = params.dim();
  if (mask.size() != d || x.size() != d) throw ParameterError("mog_conditional: dimension mismatch");
  std::vector<Index> obs, mis;
  for (Index i = 0; i < d; ++i) (mask[i] ? obs : mis).push_back(i);
  if (mis.empty()) throw ParameterError("mog_conditional: fully observed mask, nothing to condition");
  if (obs.empty()) return params;
  for (Index i : obs)
    if (!std::isfinite(x[i])) throw ParameterError("mog_conditional: non-finite observed value");

  const Index no = static_cast<Index>(obs.size());
  const Index nm = static_cast<Index>(mis.size());
  const Index c = params.components();
  MoGParams out;
  out.means.resize(nm, c);
  Eigen::VectorXd log_w(c);
  Eigen::VectorXd x_obs(no);
  for (Index i = 0; i < no; ++i) x_obs[i] = x[obs[static_cast<std::size_t>(i)]];
  for (Index k = 0; k < c; ++k) {
    const auto& cov = params.covariances[static_cast<std::size_t>(k)];
    Eigen::MatrixXd s_oo(no, no), s_mo(nm, no), s_mm(nm, nm);
    Eigen::VectorXd mu_o(no), mu_m(nm);
    for (Index i = 0; i < no; ++i) {
      mu_o[i] = params.means(obs[static_cast<std::size_t>(i)], k);
      for (Index j = 0; j < no; ++j) s_oo(i, j) = cov(obs[static_cast<std::size_t>(i)], obs[static_cast<std::size_t>(j)]);
    }
    for (Index i = 0; i < nm; ++i) {
      mu_m[i] = params.means(mis[static_cast<std::size_t>(i)], k);
      for (Index j = 0; j < no; ++j) s_mo(i, j) = cov(mis[static_cast<std::size_t>(i)], obs[static_cast<std::size_t>(j)]);
      for (Index j = 0; j < nm; ++j) s_mm(i, j) = cov(mis[static_cast<std::size_t>(i)], mis[static_cast<std::size_t>(j)]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(s_oo);
    const Eigen::VectorXd diff = x_obs - mu_o;
    const Eigen::VectorXd y = llt.matrixL().solve(diff);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    log_w[k] = std::log(params.weights[k]) - 0.5 * (static_cast<double>(no) * kLogTwoPi + log_det + y.squaredNorm());
    out.means.col(k) = mu_m + s_mo * llt.solve(diff);
    Eigen::MatrixXd cond = s_mm - s_mo * llt.solve(s_mo.transpose());
    out.covariances.push_back(0.5 * (cond + cond.transpose()));
  }
  out.weights = softmax(log_w);
  return out;
}

MoGParams product_of_marginals(const MoGParams& params, const std::vector<Index>& dims, Index max_components) {
  if (dims.empty()) throw ParameterError("product_of_marginals: empty dimension list");
  const Index c = params.components();
  const Index m = static_cast<Index>(dims.size());
  Index total = 1;
  for (Index i = 0; i < m; ++i) {
    if (total > max_components / c) throw ParameterError("product_of_marginals: too many components");
    total *= c;
  }
  MoGParams out;
  out.weights.resize(total);
  out.means.resize(m, total);
  out.covariances.reserve(static_cast<std::size_t>(total));
  std::vector<Index> idx(static_cast<std::size_t>(m), 0);
  for (Index t = 0; t < total; ++t) {
    double w = 1.0;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
    for (Index i = 0; i < m; ++i) {
      const Index k = idx[static_cast<std::size_t>(i)];
      const Index dim = dims[static_cast<std::size_t>(i)];
      w *= params.weights[k];
      out.means(i, t) = params.means(dim, k);
      cov(i, i) = params.covariances[static_cast<std::size_t>(k)](dim, dim);
    }
    out.weights[t] = w;
    out.covariances.push_back(cov);
    for (Index i = m - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < c) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  out.weights /= out.weights.sum();
  return out;
}

MoGParams oracle_widen(const MoGParams& conditional, const MoGParams& marginal_product, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 2.0)) throw ParameterError("oracle_widen: alpha must lie in [0, 2]");
  if (conditional.dim() != marginal_product.dim())
    throw ParameterError("oracle_widen: distributions over different dimensions");
  if (alpha == 0.0) return conditional;
  const Index m = conditional.dim();
  if (alpha <= 1.0) {
    MoGParams out;
    const bool keep_cond = alpha < 1.0;
    const Index c1 = keep_cond ? conditional.components() : 0;
    const Index c2 = marginal_product.components();
    out.weights.resize(c1 + c2);
    out.means.resize(m, c1 + c2);
    for (Index k = 0; k < c1; ++k) {
      out.weights[k] = (1.0 - alpha) * conditional.weights[k];
      out.means.col(k) = conditional.means.col(k);
      out.covariances.push_back(conditional.covariances[static_cast<std::size_t>(k)]);
    }
    for (Index k = 0; k < c2; ++k) {
      out.weights[c1 + k] = alpha * marginal_product.weights[k];
      out.means.col(c1 + k) = marginal_product.means.col(k);
      out.covariances.push_back(marginal_product.covariances[static_cast<std::size_t>(k)]);
    }
    out.weights /= out.weights.sum();
    return out;
  }
  const double t = alpha - 1.0;
  if (t >= 1.0) {
    MoGParams out;
    out.weights = Eigen::VectorXd::Ones(1);
    out.means = Eigen::MatrixXd::Zero(m, 1);
    out.covariances.push_back(Eigen::MatrixXd::Identity(m, m));
    return out;
  }
  MoGParams out = marginal_product;
  out.seed.reset();
  out.means *= (1.0 - t);
  for (auto& cov : out.covariances) cov = (1.0 - t) * cov + t * Eigen::MatrixXd::Identity(m, m);
  return out;
}

MoGParams oracle_oversample(const MoGParams& conditional, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("oracle_oversample: beta must lie in [0, 1]");
  conditional.validate();
  MoGParams out = conditional;
  const double c = static_cast<double>(conditional.components());
  out.weights = (1.0 - beta) * conditional.weights.array() + beta / c;
  return out;
}

} // namespace missvae
