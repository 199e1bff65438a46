#include <doctest.h>

#include <cmath>

#include "missvae/dataset.hpp"
#include "missvae/errors.hpp"
#include "missvae/numeric.hpp"
#include "missvae/objectives.hpp"
#include "support/testbed.hpp"

using namespace missvae;

namespace {

MixtureParams random_mixture(Index k, Index l, Rng& rng) {
  MixtureParams p;
  p.logits = rng.normal_vector(k);
  p.means = Eigen::MatrixXd(l, k);
  p.stds = Eigen::MatrixXd(l, k);
  for (Index i = 0; i < l * k; ++i) {
    p.means.data()[i] = rng.normal();
    p.stds.data()[i] = 0.4 + rng.uniform();
  }
  return p;
}

struct Setup {
  VAEModel model;
  IncompleteDataset data;
};

Setup make_setup(Index d, Index l, std::uint64_t seed) {
  Rng rng(seed);
  Setup s{VAEModel(d, l, DecoderFamily::gaussian, 6, 1), {}};
  s.model.init(rng);
  s.data = apply_uniform_mcar(Eigen::MatrixXd::Random(d, 8) * 2.0, 0.4, rng);
  return s;
}

} // namespace

TEST_CASE("bound identities hold exactly on shared samples") {
  Setup s = make_setup(4, 2, 1);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const RowRef row = s.data.row(trial % s.data.size());
    const MixtureParams one = random_mixture(1, 2, rng);
    const MixtureParams many = random_mixture(3, 2, rng);

    const LatentSampleBatch a = sample_for_bound(one, {3, 1, 1, SamplingScheme::ancestral}, rng);
    CHECK(iwelbo(s.model, one, row, a, 1).value == elbo(s.model, one, row, a, 3).value);

    const LatentSampleBatch st1 = sample_for_bound(one, {2, 1, 1, SamplingScheme::stratified}, rng);
    CHECK(selbo(s.model, one, row, st1).value == elbo(s.model, one, row, st1, 2).value);

    const LatentSampleBatch st4 = sample_for_bound(one, {1, 1, 4, SamplingScheme::stratified}, rng);
    CHECK(siwelbo(s.model, one, row, st4).value == iwelbo(s.model, one, row, st4, 4).value);

    const LatentSampleBatch sk = sample_for_bound(many, {2, 3, 1, SamplingScheme::stratified}, rng);
    CHECK(siwelbo_loose(s.model, many, row, sk).value == selbo(s.model, many, row, sk).value);

    const LatentSampleBatch ski = sample_for_bound(many, {1, 3, 4, SamplingScheme::stratified}, rng);
    CHECK(siwelbo(s.model, many, row, ski).value >= siwelbo_loose(s.model, many, row, ski).value);
  }
}

TEST_CASE("every bound is tight under the exact posterior") {
  Rng rng(3);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 1, rng);
  const VAEModel model = lg.model();
  const Encoder enc = testbed::exact_posterior_encoder(lg);
  const Eigen::VectorXd x = rng.normal_vector(3);
  const Mask full = Mask::Ones(3);
  const MixtureParams psi = encode(enc, x, full);
  Eigen::VectorXd pm;
  Eigen::MatrixXd pc;
  lg.posterior(x, full, pm, pc);
  CHECK(psi.means(0, 0) == doctest::Approx(pm[0]).epsilon(1e-12));
  CHECK(psi.stds(0, 0) == doctest::Approx(std::sqrt(pc(0, 0))).epsilon(1e-12));

  const double truth = lg.log_marginal(x, full);
  const RowRef row{x, full};
  const LatentSampleBatch b = sample_for_bound(psi, {1, 1, 16, SamplingScheme::ancestral}, rng);
  const Eigen::VectorXd lw = log_importance_weights(model, psi, row, b);
  CHECK((lw.array() - truth).abs().maxCoeff() < 1e-10);
  CHECK(iwelbo(model, psi, row, b, 16).value == doctest::Approx(truth).epsilon(1e-12));
}

TEST_CASE("sticking-the-landing encoder gradient vanishes at the exact posterior") {
  Rng rng(4);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 1, rng);
  const VAEModel model = lg.model();
  const Encoder enc = testbed::exact_posterior_encoder(lg);
  const IncompleteDataset data = make_complete(Eigen::MatrixXd::Random(3, 6) * 2.0);
  const std::vector<Index> rows{0, 1, 2, 3, 4, 5};
  ObjectiveSpec spec{Bound::elbo, {1, 1, 1, SamplingScheme::ancestral}, true};
  Rng r1(9);
  const ObjectiveGradient stl = objective_gradient(model, enc, data, rows, spec, r1);
  CHECK(stl.grad_phi.cwiseAbs().maxCoeff() < 1e-10);
  spec.stl = false;
  Rng r2(9);
  const ObjectiveGradient full = objective_gradient(model, enc, data, rows, spec, r2);
  CHECK(full.grad_phi.cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("objective gradients match finite differences under common random numbers") {
  Setup s = make_setup(3, 2, 5);
  const std::vector<Index> rows{0, 3, 5};
  struct Case {
    Bound bound;
    SampleBudget budget;
  };
  const Case cases[] = {
      {Bound::elbo, {2, 1, 1, SamplingScheme::ancestral}},
      {Bound::iwelbo, {1, 1, 3, SamplingScheme::ancestral}},
      {Bound::selbo, {1, 3, 1, SamplingScheme::stratified}},
      {Bound::siwelbo, {2, 2, 2, SamplingScheme::stratified}},
      {Bound::siwelbo_loose, {1, 3, 2, SamplingScheme::stratified}},
  };
  for (const Case& c : cases) {
    CAPTURE(to_string(c.bound));
    Rng rng(6);
    Encoder enc(3, 2, c.budget.k, 5, 1);
    enc.init(rng);
    const ObjectiveSpec spec{c.bound, c.budget, false};
    Rng r0(77);
    const ObjectiveGradient g = objective_gradient(s.model, enc, s.data, rows, spec, r0);
    Rng rv(77);
    CHECK(objective_value(s.model, enc, s.data, rows, spec, rv) == g.value);

    auto f_theta = [&](const Eigen::VectorXd& th) {
      VAEModel m = s.model;
      m.theta = th;
      Rng r(77);
      return objective_value(m, enc, s.data, rows, spec, r);
    };
    auto f_phi = [&](const Eigen::VectorXd& ph) {
      Encoder e = enc;
      e.phi = ph;
      Rng r(77);
      return objective_value(s.model, e, s.data, rows, spec, r);
    };
    const Eigen::VectorXd ft = testbed::finite_difference(f_theta, s.model.theta);
    const Eigen::VectorXd fp = testbed::finite_difference(f_phi, enc.phi);
    CHECK((g.grad_theta - ft).norm() / ft.norm() < 1e-5);
    CHECK((g.grad_phi - fp).norm() / fp.norm() < 1e-5);
  }
}

TEST_CASE("decoder gradient of the ancestral mixture objective matches finite differences") {
  Setup s = make_setup(3, 2, 7);
  Rng rng(8);
  Encoder enc(3, 2, 4, 5, 1);
  enc.init(rng);
  const std::vector<Index> rows{1, 2};
  const ObjectiveSpec spec{Bound::iwelbo, {1, 4, 3, SamplingScheme::ancestral}, true};
  Rng r0(5);
  const ObjectiveGradient g = objective_gradient(s.model, enc, s.data, rows, spec, r0);
  auto f = [&](const Eigen::VectorXd& th) {
    VAEModel m = s.model;
    m.theta = th;
    Rng r(5);
    return objective_value(m, enc, s.data, rows, spec, r);
  };
  const Eigen::VectorXd ft = testbed::finite_difference(f, s.model.theta);
  CHECK((g.grad_theta - ft).norm() / ft.norm() < 1e-5);
}

TEST_CASE("objective validation rejects mismatched schemes") {
  CHECK_THROWS_AS(validate_objective({Bound::selbo, {1, 2, 1, SamplingScheme::ancestral}, true}), ParameterError);
  CHECK_THROWS_AS(validate_objective({Bound::elbo, {1, 1, 3, SamplingScheme::ancestral}, true}), ParameterError);
  CHECK_NOTHROW(validate_objective({Bound::siwelbo, {1, 2, 3, SamplingScheme::stratified}, true}));
  CHECK(SampleBudget{1, 5, 1, SamplingScheme::stratified}.total() == 5);
  CHECK(SampleBudget{5, 5, 1, SamplingScheme::ancestral}.total() == 5);
}
