#include <doctest.h>

#include <cmath>
#include <vector>

#include "missvae/demiss.hpp"
#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"
#include "support/testbed.hpp"

using namespace missvae;

namespace {

struct Toy {
  VAEModel model;
  Encoder enc;
  IncompleteDataset data;
};

Toy make_toy(std::uint64_t seed, Index d = 3, Index l = 2, Index n = 6) {
  Rng rng(seed);
  Toy t{VAEModel(d, l, DecoderFamily::gaussian, 6, 1), Encoder(d, l, 1, 6, 1), {}};
  t.model.init(rng);
  t.enc.init(rng);
  t.data = apply_uniform_mcar(Eigen::MatrixXd::Random(d, n) * 1.5, 0.4, rng);
  return t;
}

} // namespace

TEST_CASE("initial imputations respect observed values and draw from observed pools") {
  Toy t = make_toy(1, 3, 2, 20);
  Rng rng(2);
  ImputationStore s = init_imputations(t.data, 4, 2, rng);
  CHECK_NOTHROW(s.check_invariant(t.data));
  for (Index i = 0; i < t.data.size(); ++i)
    for (Index d = 0; d < 3; ++d)
      if (!t.data.mask(d, i)) {
        bool found = false;
        for (Index j = 0; j < t.data.size(); ++j) found |= t.data.mask(d, j) && t.data.values(d, j) == s.completion(i, 2)[d];
        CHECK(found);
      }
  Index obs_row = 0;
  Index obs_dim = 0;
  while (!t.data.mask(obs_dim, obs_row)) ++obs_dim;
  s.completions(obs_dim, s.column(obs_row, 1)) += 1.0;
  CHECK_THROWS_AS(s.check_invariant(t.data), NumericError);
}

TEST_CASE("pseudo-Gibbs keeps observed entries and records chain state") {
  Toy t = make_toy(3);
  Rng rng(4);
  ImputationStore s = init_imputations(t.data, 2, 2, rng);
  const Eigen::MatrixXd before = s.completions;
  pseudo_gibbs_step(t.model, t.enc, t.data, s, {0, 2}, rng);
  CHECK_NOTHROW(s.check_invariant(t.data));
  CHECK(s.chain_valid[0] == 1);
  CHECK(s.chain_valid[1] == 0);
  CHECK(s.completions.col(s.column(1, 0)) == before.col(s.column(1, 0)));
}

TEST_CASE("LAIR with one chain is pseudo-Gibbs") {
  Toy t = make_toy(5);
  Rng r0(6);
  ImputationStore a = init_imputations(t.data, 1, 2, r0);
  ImputationStore b = a;
  Rng ra(7), rb(7);
  for (int sweep = 0; sweep < 3; ++sweep) {
    pseudo_gibbs_step(t.model, t.enc, t.data, a, {0, 1, 2, 3, 4, 5}, ra);
    lair_step(t.model, t.enc, t.data, b, {0, 1, 2, 3, 4, 5}, 0, rb);
  }
  CHECK(a.completions == b.completions);
  CHECK(a.chain_z == b.chain_z);
}

TEST_CASE("LAIR preserves the store invariant with several chains and repeats") {
  Toy t = make_toy(8);
  Rng rng(9);
  ImputationStore s = init_imputations(t.data, 5, 2, rng);
  lair_step(t.model, t.enc, t.data, s, {0, 1, 2, 3, 4, 5}, 0, rng);
  lair_step(t.model, t.enc, t.data, s, {0, 1, 2, 3, 4, 5}, 2, rng);
  CHECK_NOTHROW(s.check_invariant(t.data));

  const Index row = 1;
  Eigen::MatrixXd comps(3, 5);
  for (Index c = 0; c < 5; ++c) comps.col(c) = s.completion(row, c);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 5);
  const Eigen::VectorXd lq = Eigen::VectorXd::Zero(5);
  const Eigen::VectorXd w = lair_weights(t.model, comps, t.data.mask.col(row), z, lq, Eigen::MatrixXd());
  CHECK(w.sum() == doctest::Approx(1.0));
  CHECK((w.array() >= 0.0).all());
}

TEST_CASE("LAIR with the latent proposal keeps the invariant and one chain is pseudo-Gibbs") {
  Toy t = make_toy(14);
  Rng r0(15);
  ImputationStore a = init_imputations(t.data, 1, 2, r0);
  ImputationStore b = a;
  Rng ra(16), rb(16);
  for (int sweep = 0; sweep < 3; ++sweep) {
    pseudo_gibbs_step(t.model, t.enc, t.data, a, {0, 1, 2, 3, 4, 5}, ra);
    lair_step(t.model, t.enc, t.data, b, {0, 1, 2, 3, 4, 5}, 0, rb, nullptr, LairProposal::latent);
  }
  CHECK(a.completions == b.completions);

  ImputationStore s = init_imputations(t.data, 5, 2, r0);
  lair_step(t.model, t.enc, t.data, s, {0, 1, 2, 3, 4, 5}, 1, r0, nullptr, LairProposal::latent);
  CHECK_NOTHROW(s.check_invariant(t.data));
}

namespace {

struct SelfNormalized {
  double mean = 0.0;
  double second = 0.0;
};

// Average over repeats of the K = 64 self-normalized estimates of E[x_mis]
// and E[(x_mis - m)^2] for one missing dim of a linear-Gaussian model. Chain
// completions come from a deliberately wide imputation distribution.
SelfNormalized lair_estimate(LairProposal proposal, const testbed::LinearGaussian& lg, const Eigen::VectorXd& x,
                             const Mask& mask, Index dim, double m, Rng& rng) {
  const VAEModel model = lg.model();
  const Encoder enc = testbed::exact_posterior_encoder(lg);
  const Index k = 64, repeats = 200;
  SelfNormalized acc;
  for (Index rep = 0; rep < repeats; ++rep) {
    const Eigen::MatrixXd prev_z = 1.5 * rng.normal_vector(k).transpose();
    Eigen::MatrixXd comps(3, k), z(1, k);
    Eigen::VectorXd log_q(k);
    std::vector<MixtureParams> chain_q;
    for (Index c = 0; c < k; ++c) {
      comps.col(c) = x;
      comps(dim, c) = lg.w(dim, 0) * prev_z(0, c) + lg.b[dim] + lg.sigma[dim] * rng.normal();
      chain_q.push_back(encode(enc, comps.col(c), Mask::Ones(3)));
      const LatentSampleBatch draw = sample_ancestral(chain_q.back(), 1, rng);
      z.col(c) = draw.z.col(0);
      log_q[c] = draw.log_q[0];
    }
    const double var = lg.sigma[dim] * lg.sigma[dim];
    if (proposal == LairProposal::latent) {
      const Eigen::VectorXd w = lair_latent_weights(model, chain_q, x, mask, z);
      CHECK(w.sum() == doctest::Approx(1.0));
      for (Index c = 0; c < k; ++c) {
        const double mu = lg.w(dim, 0) * z(0, c) + lg.b[dim];
        acc.mean += w[c] * mu;
        acc.second += w[c] * ((mu - m) * (mu - m) + var);
      }
    } else {
      const Eigen::VectorXd w = lair_weights(model, comps, mask, z, log_q, prev_z);
      CHECK(w.sum() == doctest::Approx(1.0));
      for (Index c = 0; c < k; ++c) {
        acc.mean += w[c] * comps(dim, c);
        acc.second += w[c] * (comps(dim, c) - m) * (comps(dim, c) - m);
      }
    }
  }
  acc.mean /= static_cast<double>(repeats);
  acc.second /= static_cast<double>(repeats);
  return acc;
}

} // namespace

TEST_CASE("LAIR self-normalized estimates match the analytic conditional at K = 64") {
  Rng rng(17);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 1, rng);
  Mask mask = Mask::Ones(3);
  mask[1] = false;
  Eigen::VectorXd x = rng.normal_vector(3);
  x[1] = 0.0;
  Eigen::VectorXd m;
  Eigen::MatrixXd cov;
  lg.conditional(x, mask, m, cov);
  const double sd = std::sqrt(cov(0, 0));
  for (LairProposal p : {LairProposal::imputation, LairProposal::latent}) {
    const SelfNormalized e = lair_estimate(p, lg, x, mask, 1, m[0], rng);
    CHECK(std::abs(e.mean - m[0]) < 0.05 * sd);
    CHECK(e.second == doctest::Approx(cov(0, 0)).epsilon(0.05));
  }
}

TEST_CASE("systematic resampling counts stay within one of n * w") {
  Rng rng(10);
  Eigen::VectorXd w(4);
  w << 0.5, 0.0, 0.3, 0.2;
  for (int rep = 0; rep < 50; ++rep) {
    const auto idx = systematic_resample(w, 10, rng);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(4);
    for (Index i : idx) counts[i] += 1.0;
    CHECK(counts.sum() == 10.0);
    CHECK(counts[1] == 0.0);
    CHECK(((counts - 10.0 * w).array().abs() < 1.0 + 1e-12).all());
  }
}

TEST_CASE("MWG accepts everything under the exact posterior proposal") {
  Rng rng(11);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 1, rng);
  const VAEModel model = lg.model();
  const Encoder enc = testbed::exact_posterior_encoder(lg);
  const Eigen::VectorXd x = rng.normal_vector(3);
  const MixtureParams psi = encode(enc, x, Mask::Ones(3));
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd a = rng.normal_vector(1), b = rng.normal_vector(1);
    CHECK(std::abs(mwg_log_acceptance(model, psi, x, a, b)) < 1e-9);
  }
  IncompleteDataset data = make_complete(Eigen::MatrixXd::Random(3, 4));
  data.mask(0, 1) = false;
  data.values(0, 1) = 0.0;
  ImputationStore s = init_imputations(data, 2, 1, rng);
  CHECK(mwg_step(model, enc, data, s, {0, 1, 2, 3}, rng) == 1.0);
  CHECK(mwg_step(model, enc, data, s, {0, 1, 2, 3}, rng) == doctest::Approx(1.0));
}

TEST_CASE("MWG log acceptance is clipped at zero and one direction always accepts") {
  Toy t = make_toy(12);
  Rng rng(13);
  const Eigen::VectorXd x = Eigen::VectorXd::Random(3);
  const MixtureParams psi = encode(t.enc, x, Mask::Ones(3));
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd a = rng.normal_vector(2), b = rng.normal_vector(2);
    const double ab = mwg_log_acceptance(t.model, psi, x, a, b);
    const double ba = mwg_log_acceptance(t.model, psi, x, b, a);
    CHECK(ab <= 0.0);
    CHECK(ba <= 0.0);
    CHECK(std::max(ab, ba) == 0.0);
  }
}

TEST_CASE("shared computation equals independent computation") {
  Toy t = make_toy(14);
  Rng rng(15);
  const ImputationStore s = init_imputations(t.data, 3, 2, rng);
  for (Index row = 0; row < t.data.size(); ++row) {
    Eigen::MatrixXd comps(3, 3);
    for (Index c = 0; c < 3; ++c) comps.col(c) = s.completion(row, c);
    Rng a(100 + static_cast<std::uint64_t>(row)), b(100 + static_cast<std::uint64_t>(row)), c(100 + static_cast<std::uint64_t>(row));
    const DemissObjectives shared = demiss_objectives(t.model, t.enc, t.data.row(row), comps, 2, a);
    CHECK(shared.theta_objective == demiss_theta_objective(t.model, t.enc, t.data.row(row), comps, 2, b));
    CHECK(shared.phi_objective == demiss_phi_objective(t.model, t.enc, t.data.row(row), comps, 2, c));
  }
}

TEST_CASE("DeMissVAE gradients match finite differences in every mode") {
  Toy t = make_toy(16);
  Rng rng(17);
  const ImputationStore s = init_imputations(t.data, 3, 2, rng);
  const std::vector<Index> rows{0, 2, 5};
  for (DemissMode mode : {DemissMode::split, DemissMode::cvi, DemissMode::mvb}) {
    CAPTURE(to_string(mode));
    Rng r0(3);
    const DemissGradient g = demiss_gradient(t.model, t.enc, t.data, s, rows, 2, mode, false, r0);
    const bool theta_from_phi_objective = mode == DemissMode::mvb;
    auto f_theta = [&](const Eigen::VectorXd& th) {
      VAEModel m = t.model;
      m.theta = th;
      Rng r(3);
      const DemissGradient o = demiss_gradient(m, t.enc, t.data, s, rows, 2, mode, false, r);
      return theta_from_phi_objective ? o.phi_objective : o.theta_objective;
    };
    auto f_phi = [&](const Eigen::VectorXd& ph) {
      Encoder e = t.enc;
      e.phi = ph;
      Rng r(3);
      return demiss_gradient(t.model, e, t.data, s, rows, 2, mode, false, r).phi_objective;
    };
    const Eigen::VectorXd ft = testbed::finite_difference(f_theta, t.model.theta);
    const Eigen::VectorXd fp = testbed::finite_difference(f_phi, t.enc.phi);
    CHECK((g.grad_theta - ft).norm() / ft.norm() < 1e-5);
    CHECK((g.grad_phi - fp).norm() / fp.norm() < 1e-5);
  }
}

TEST_CASE("pass cost of a DeMissVAE step relative to the complete-data step") {
  Toy t = make_toy(18, 3, 2, 8);
  Rng rng(19);
  const Index k = 5;
  ImputationStore s = init_imputations(t.data, k, 2, rng);
  const std::vector<Index> rows{0, 1, 2, 3, 4, 5, 6, 7};
  for (Index l : {1, 3}) {
    PassCounter dm, base;
    demiss_gradient(t.model, t.enc, t.data, s, rows, l, DemissMode::split, true, rng, &dm);
    complete_data_gradient(t.model, t.enc, s, rows, l, true, rng, &base);
    const double kk = static_cast<double>(k), ll = static_cast<double>(l);
    CHECK(dm.cost() / base.cost() == doctest::Approx((3 * kk + 5 * kk * ll) / (3 * kk + 3 * kk * ll)));
  }
}

TEST_CASE("rejection sampler matches the conditional and enforces its budget") {
  Rng rng(20);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 2, rng);
  const VAEModel model = lg.model();
  const GridEvaluator grid(model, QuadratureGrid{-6, 6, 128, 2});
  Eigen::VectorXd x = lg.b + 0.5 * rng.normal_vector(3);
  Mask m = Mask::Ones(3);
  m[2] = false;
  const RejectionResult r = rejection_sample_conditional(model, grid, RowRef{x, m}, 3000, rng);
  Eigen::VectorXd cm;
  Eigen::MatrixXd cc;
  lg.conditional(x, m, cm, cc);
  std::vector<double> s(3000);
  for (Index i = 0; i < 3000; ++i) {
    s[static_cast<std::size_t>(i)] = r.draws(2, i);
    CHECK(r.draws(0, i) == x[0]);
  }
  const double ks = testbed::ks_statistic(s, [&](double v) { return normal_cdf((v - cm[0]) / std::sqrt(cc(0, 0))); });
  CHECK(testbed::ks_pvalue(ks, 3000) > 0.01);
  CHECK(r.acceptance_rate() > 0.0);
  CHECK_THROWS_AS(rejection_sample_conditional(model, grid, RowRef{x, m}, 100000, rng, 10), BudgetError);
}
