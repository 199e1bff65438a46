#include <doctest.h>

#include <cmath>
#include <vector>

#include "missvae/numeric.hpp"
#include "missvae/optim.hpp"
#include "missvae/rng.hpp"
#include "missvae/types.hpp"

using namespace missvae;

TEST_CASE("log_sum_exp matches the naive sum and survives large inputs") {
  Eigen::VectorXd x(4);
  x << 0.3, -1.2, 2.5, 0.0;
  double naive = 0.0;
  for (double v : x) naive += std::exp(v);
  CHECK(log_sum_exp(x) == doctest::Approx(std::log(naive)).epsilon(1e-14));
  CHECK(log_mean_exp(x) == doctest::Approx(std::log(naive / 4.0)).epsilon(1e-14));
  Eigen::VectorXd big = x.array() + 1000.0;
  CHECK(log_sum_exp(big) == doctest::Approx(std::log(naive) + 1000.0).epsilon(1e-14));
  CHECK(softmax(x).sum() == doctest::Approx(1.0));
  CHECK((log_softmax(x).array().exp() - softmax(x).array()).abs().maxCoeff() < 1e-15);
}

TEST_CASE("log-sum-exp accumulator is chunking-invariant") {
  Rng rng(3);
  Eigen::VectorXd x = rng.normal_vector(1000) * 20.0;
  LogSumExpAccumulator whole, chunked;
  whole.add(x);
  for (Index s = 0; s < 1000; s += 37) chunked.add(x.segment(s, std::min<Index>(37, 1000 - s)));
  CHECK(whole.count() == 1000);
  CHECK(chunked.value() == doctest::Approx(log_sum_exp(x)).epsilon(1e-13));
  CHECK(whole.value() == doctest::Approx(log_sum_exp(x)).epsilon(1e-13));
}

TEST_CASE("softplus and its inverse") {
  for (double y : {1e-4, 0.3, 1.0, 7.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
}

TEST_CASE("rng state round-trips and replays") {
  Rng a(42);
  a.normal();
  const std::string s = a.state();
  const double u1 = a.uniform(), n1 = a.normal();
  Rng b(0);
  b.set_state(s);
  CHECK(b.uniform() == u1);
  CHECK(b.normal() == n1);
}

TEST_CASE("categorical frequencies pass a chi-squared test") {
  Rng rng(11);
  const std::vector<double> w{0.1, 0.4, 0.2, 0.3};
  std::vector<int> counts(4, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(rng.categorical(w))];
  double chi2 = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double e = n * w[static_cast<std::size_t>(k)];
    chi2 += (counts[static_cast<std::size_t>(k)] - e) * (counts[static_cast<std::size_t>(k)] - e) / e;
  }
  // 3 dof, 0.999 quantile
  CHECK(chi2 < 16.27);
}

TEST_CASE("AMSGrad matches a scalar reference and keeps a non-decreasing v_max") {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  AmsGrad opt(2, cfg);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  double m = 0, v = 0, vmax = 0, ref = 0;
  const double grads[] = {1.0, -3.0, 0.5, 0.1, -0.2, 2.0};
  double prev_vmax = 0.0;
  for (int t = 1; t <= 6; ++t) {
    const double g = grads[t - 1];
    Eigen::VectorXd gv(2);
    gv << g, -g;
    opt.step(p, gv);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    vmax = std::max(vmax, v);
    const double mhat = m / (1 - std::pow(0.9, t));
    const double vhat = vmax / (1 - std::pow(0.999, t));
    ref += 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p[0] == doctest::Approx(ref).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(-ref).epsilon(1e-12));
    CHECK(opt.v_max()[0] >= prev_vmax);
    prev_vmax = opt.v_max()[0];
  }
}

TEST_CASE("cosine schedule decays to zero and clipping rescales jointly") {
  OptimizerConfig cfg;
  cfg.cosine = true;
  cfg.total_steps = 10;
  AmsGrad opt(1, cfg);
  CHECK(opt.current_learning_rate() == doctest::Approx(1e-3));
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1), g = Eigen::VectorXd::Ones(1);
  for (int i = 0; i < 10; ++i) opt.step(p, g);
  CHECK(opt.current_learning_rate() == doctest::Approx(0.0).epsilon(1e-12));

  Eigen::VectorXd a(2), b(1);
  a << 3.0, 0.0;
  b << 4.0;
  const double before = clip_global_norm({&a, &b}, 1.0);
  CHECK(before == doctest::Approx(5.0));
  CHECK(std::sqrt(a.squaredNorm() + b.squaredNorm()) == doctest::Approx(1.0));
  CHECK(a[0] / b[0] == doctest::Approx(0.75));
}
