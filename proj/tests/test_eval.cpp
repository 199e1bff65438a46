#include <doctest.h>

#include <cmath>

#include <Eigen/LU>

#include "missvae/dataset.hpp"
#include "missvae/errors.hpp"
#include "missvae/eval.hpp"
#include "missvae/mog.hpp"
#include "missvae/numeric.hpp"
#include "missvae/quadrature.hpp"
#include "support/testbed.hpp"

using namespace missvae;

namespace {

double gaussian_kl(const Eigen::VectorXd& m0, const Eigen::MatrixXd& s0, const Eigen::VectorXd& m1, const Eigen::MatrixXd& s1) {
  const Eigen::MatrixXd inv1 = s1.inverse();
  const Eigen::VectorXd d = m1 - m0;
  return 0.5 * ((inv1 * s0).trace() + d.dot(inv1 * d) - static_cast<double>(m0.size()) + std::log(s1.determinant() / s0.determinant()));
}

} // namespace

TEST_CASE("grid validation") {
  CHECK_NOTHROW(QuadratureGrid{}.validate());
  CHECK_THROWS_AS((QuadratureGrid{-6, 6, 32, 2}.validate()), ParameterError);
  CHECK_THROWS_AS((QuadratureGrid{-2, 2, 128, 2}.validate()), ParameterError);
  CHECK_THROWS_AS((QuadratureGrid{0, 6, 128, 2}.validate()), ParameterError);
  CHECK_THROWS_AS((QuadratureGrid{-6, 6, 128, 3}.validate()), UnsupportedError);
  const QuadratureGrid g{-6, 6, 101, 2};
  CHECK(g.size() == 101 * 101);
  CHECK(g.refined().resolution == 201);
  CHECK(g.refined().spacing() == doctest::Approx(g.spacing() / 2));
  CHECK(log_sum_exp(g.log_weights()) == doctest::Approx(std::log(144.0)).epsilon(1e-12));
  const Eigen::MatrixXd n = g.nodes();
  CHECK(n(0, 1) > n(0, 0));
  CHECK(n(1, 1) == n(1, 0));
}

TEST_CASE("grid log-likelihood matches the linear-Gaussian closed form") {
  Rng rng(1);
  for (Index latent : {1, 2}) {
    const testbed::LinearGaussian lg = testbed::random_linear_gaussian(4, latent, rng);
    const VAEModel model = lg.model();
    for (int trial = 0; trial < 5; ++trial) {
      const Eigen::VectorXd x = lg.b + lg.w * rng.normal_vector(latent) + rng.normal_vector(4).cwiseProduct(lg.sigma);
      Mask m = Mask::Ones(4);
      m[trial % 4] = false;
      if (trial % 2) m[(trial + 1) % 4] = false;
      const RowRef row{x, m};
      const GridLoglik g = grid_loglik(model, row, QuadratureGrid{-6, 6, 256, latent}, true);
      CHECK(g.value == doctest::Approx(lg.log_marginal(x, m)).epsilon(1e-4));
      CHECK_FALSE(g.unstable);
    }
  }
}

TEST_CASE("posterior density integrates to one and recovers the analytic posterior") {
  Rng rng(2);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 2, rng);
  const GridEvaluator ev(lg.model(), QuadratureGrid{-6, 6, 201, 2});
  const Eigen::VectorXd x = lg.b + 0.3 * rng.normal_vector(3);
  Mask m = Mask::Ones(3);
  m[1] = false;
  const Eigen::VectorXd dens = ev.posterior_density(x, m);
  const Eigen::VectorXd w = QuadratureGrid{-6, 6, 201, 2}.log_weights().array().exp();
  CHECK(dens.dot(w) == doctest::Approx(1.0).epsilon(1e-10));
  Eigen::VectorXd pm;
  Eigen::MatrixXd pc;
  lg.posterior(x, m, pm, pc);
  const Eigen::VectorXd mass = ev.posterior_log_mass(x, m).array().exp();
  const Eigen::VectorXd mean = ev.nodes() * mass;
  CHECK((mean - pm).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("posterior gap equals the Gaussian KL for a linear decoder") {
  Rng rng(3);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 2, rng, 0.6, 1.0);
  Eigen::MatrixXd complete(3, 4);
  MaskMatrix mask = MaskMatrix::Ones(3, 4);
  double expected = 0.0;
  for (Index i = 0; i < 4; ++i) {
    complete.col(i) = lg.b + lg.w * rng.normal_vector(2) + rng.normal_vector(3).cwiseProduct(lg.sigma);
    mask(i % 3, i) = false;
    Eigen::VectorXd m0, m1;
    Eigen::MatrixXd s0, s1;
    lg.posterior(complete.col(i), Mask::Ones(3), m0, s0);
    lg.posterior(complete.col(i), mask.col(i), m1, s1);
    expected += gaussian_kl(m0, s0, m1, s1) / 4.0;
  }
  const double gap = mi_posterior_gap(lg.model(), complete, mask, QuadratureGrid{-6, 6, 256, 2});
  CHECK(gap == doctest::Approx(expected).epsilon(2e-3));
  CHECK(mi_posterior_gap(lg.model(), complete, MaskMatrix::Ones(3, 4)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("IWELBO evaluation does not depend on the chunk size and stays below the grid value") {
  Rng rng(4);
  VAEModel model(3, 2, DecoderFamily::gaussian, 8, 1);
  model.init(rng);
  Encoder enc(3, 2, 2, 8, 1);
  enc.init(rng);
  const IncompleteDataset data = apply_uniform_mcar(Eigen::MatrixXd::Random(3, 5), 0.3, rng);
  Rng a(10), b(10);
  const BoundEstimate e1 = iwelbo_eval(model, enc, data, 500, a, 500);
  const BoundEstimate e2 = iwelbo_eval(model, enc, data, 500, b, 37);
  CHECK(e1.value == doctest::Approx(e2.value).epsilon(1e-12));
  const DatasetGridLoglik g = grid_loglik_dataset(model, data);
  for (Index i = 0; i < data.size(); ++i) CHECK(e1.per_datapoint[i] <= g.per_row[i] + 0.05);
}

TEST_CASE("Jensen-Shannon divergence on data grids") {
  MoGParams a;
  a.weights = Eigen::VectorXd::Ones(1);
  a.means = Eigen::MatrixXd::Zero(1, 1);
  a.covariances = {Eigen::MatrixXd::Identity(1, 1)};
  MoGParams far = a;
  far.means(0, 0) = 40.0;
  MoGParams near = a;
  near.means(0, 0) = 0.5;
  CHECK(js_divergence_mog(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(js_divergence_mog(a, far) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(js_divergence_mog(a, near) == doctest::Approx(js_divergence_mog(near, a)).epsilon(1e-12));
  // Small shifts: JS ~ KL / 4 = d^2 / 8 for unit Gaussians.
  MoGParams tiny = a;
  tiny.means(0, 0) = 0.1;
  CHECK(js_divergence_mog(a, tiny) == doctest::Approx(0.01 / 8.0).epsilon(0.02));

  const MoGParams two = generate_mog(2, 2, 3);
  Rng rng(5);
  const Eigen::MatrixXd s = mog_sample(two, 20000, rng);
  // KDE bias dominates at this sample size; the same samples must still sit far closer than another mixture does.
  const double same = js_divergence_samples(s, two);
  const MoGParams other = generate_mog(2, 2, 4);
  CHECK(same < 0.05);
  CHECK(same < 0.25 * js_divergence_samples(s, other));
  CHECK_THROWS_AS(js_divergence_mog(generate_mog(1, 3, 2), generate_mog(1, 3, 2)), UnsupportedError);
}

TEST_CASE("gradient SNR recovers a known ratio and excludes constant coordinates") {
  Rng rng(6);
  GradientFn fn = [](const std::vector<Index>&, Rng& r) {
    Eigen::VectorXd gt(3), gp(2);
    gt << 1.0 + 0.5 * r.normal(), 2.0 + 1.0 * r.normal(), 5.0;
    gp << 0.3 + r.normal(), -0.3 + r.normal();
    return std::make_pair(gt, gp);
  };
  const SnrReport rep = gradient_snr(fn, 1000, 10, 40, rng);
  CHECK(rep.gradient_samples == 4000);
  CHECK(rep.excluded_theta == 1);
  CHECK(rep.median_theta == doctest::Approx(2.0).epsilon(0.06));
  CHECK(rep.median_phi == doctest::Approx(0.3).epsilon(0.12));
}

TEST_CASE("posterior fields") {
  Rng rng(7);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(2, 2, rng);
  const GridEvaluator ev(lg.model(), QuadratureGrid{-6, 6, 81, 2});
  Encoder enc(2, 2, 2, 4, 1);
  enc.init(rng);
  Eigen::VectorXd x(2);
  x << 0.2, -0.4;
  Mask m = Mask::Ones(2);
  m[0] = false;
  const Eigen::VectorXd v = posterior_grid(ev, enc, x, m, PosteriorKind::variational);
  const MixtureParams psi = encode(enc, x, m);
  CHECK(v[100] == doctest::Approx(std::exp(mixture_logpdf(psi, ev.nodes().col(100)))).epsilon(1e-12));
  const Eigen::VectorXd inc = posterior_grid(ev, enc, x, m, PosteriorKind::model_incomplete);
  CHECK((inc - ev.posterior_density(x, m)).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::MatrixXd comps(2, 2);
  comps << 0.1, 0.5, -0.4, -0.4;
  const Eigen::VectorXd mix = posterior_grid(ev, enc, x, m, PosteriorKind::imputation_mixture, comps);
  const double expect = 0.5 * std::exp(mixture_logpdf(encode(enc, comps.col(0), Mask::Ones(2)), ev.nodes().col(7))) +
                        0.5 * std::exp(mixture_logpdf(encode(enc, comps.col(1), Mask::Ones(2)), ev.nodes().col(7)));
  CHECK(mix[7] == doctest::Approx(expect).epsilon(1e-12));
}
