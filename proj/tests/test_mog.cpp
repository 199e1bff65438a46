#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "missvae/errors.hpp"
#include "missvae/mog.hpp"
#include "missvae/numeric.hpp"
#include "support/testbed.hpp"

using namespace missvae;

namespace {

// Moments straight from the definition, independent of mog_mean/mog_covariance.
void moments(const MoGParams& p, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
  mean = Eigen::VectorXd::Zero(p.dim());
  var = Eigen::VectorXd::Zero(p.dim());
  for (Index c = 0; c < p.components(); ++c) {
    mean += p.weights[c] * p.means.col(c);
    for (Index d = 0; d < p.dim(); ++d)
      var[d] += p.weights[c] * (p.covariances[static_cast<std::size_t>(c)](d, d) + p.means(d, c) * p.means(d, c));
  }
  var -= mean.array().square().matrix();
}

double direct_logpdf(const MoGParams& p, const Eigen::VectorXd& x, const std::vector<Index>& dims) {
  Eigen::VectorXd terms(p.components());
  const Index m = static_cast<Index>(dims.size());
  for (Index c = 0; c < p.components(); ++c) {
    Eigen::VectorXd xs(m), mu(m);
    Eigen::MatrixXd s(m, m);
    for (Index i = 0; i < m; ++i) {
      xs[i] = x[dims[static_cast<std::size_t>(i)]];
      mu[i] = p.means(dims[static_cast<std::size_t>(i)], c);
      for (Index j = 0; j < m; ++j)
        s(i, j) = p.covariances[static_cast<std::size_t>(c)](dims[static_cast<std::size_t>(i)], dims[static_cast<std::size_t>(j)]);
    }
    terms[c] = std::log(p.weights[c]) + testbed::gaussian_logpdf(xs, mu, s);
  }
  return log_sum_exp(terms);
}

} // namespace

TEST_CASE("generate_mog satisfies the invariants and standardization") {
  const MoGParams p = generate_mog(0, 5, 15);
  CHECK(p.components() == 15);
  CHECK(p.dim() == 5);
  CHECK(p.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((p.weights.array() >= 0.0).all());
  for (const auto& c : p.covariances) {
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c).eigenvalues().minCoeff() > 0.0);
  }
  Eigen::VectorXd mean, var;
  moments(p, mean, var);
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-6);
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("generate_mog is deterministic and rejects bad shapes") {
  const MoGParams a = generate_mog(7, 3, 4), b = generate_mog(7, 3, 4);
  CHECK(a.weights == b.weights);
  CHECK(a.means == b.means);
  CHECK_THROWS_AS(generate_mog(0, 0, 3), ParameterError);
  CHECK_THROWS_AS(generate_mog(0, 3, 0), ParameterError);
}

TEST_CASE("single standardized component is N(0, 1)") {
  const MoGParams p = generate_mog(5, 1, 1);
  CHECK(p.means(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.covariances[0](0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sample moments agree with the analytic moments") {
  const MoGParams p = generate_mog(1, 3, 5);
  Rng rng(2);
  const Eigen::MatrixXd x = mog_sample(p, 200000, rng);
  const Eigen::VectorXd m = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - m;
  const Eigen::MatrixXd cov = centered * centered.transpose() / 200000.0;
  // standardized marginals: standard error ~ 1/sqrt(n)
  CHECK(m.cwiseAbs().maxCoeff() < 0.015);
  CHECK((cov - mog_covariance(p)).cwiseAbs().maxCoeff() < 0.03);
  CHECK((mog_covariance(p).diagonal().array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("logpdf, marginal and conditional agree with direct evaluation") {
  const MoGParams p = generate_mog(3, 4, 6);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd x = mog_sample(p, 1, rng).col(0);
    const std::vector<Index> all{0, 1, 2, 3};
    CHECK(mog_logpdf(p, x) == doctest::Approx(direct_logpdf(p, x, all)).epsilon(1e-10));

    Mask mask(4);
    mask << true, false, true, false;
    const std::vector<Index> obs{0, 2}, mis{1, 3};
    const MoGParams marg = mog_marginal(p, obs);
    Eigen::VectorXd xo(2), xm(2);
    xo << x[0], x[2];
    xm << x[1], x[3];
    CHECK(mog_logpdf(marg, xo) == doctest::Approx(direct_logpdf(p, x, obs)).epsilon(1e-10));

    const MoGParams cond = mog_conditional(p, x, mask);
    CHECK(cond.dim() == 2);
    CHECK(mog_logpdf(cond, xm) == doctest::Approx(direct_logpdf(p, x, all) - direct_logpdf(p, x, obs)).epsilon(1e-9));
  }
}

TEST_CASE("conditional edge cases") {
  const MoGParams p = generate_mog(3, 3, 2);
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(mog_conditional(p, x, Mask::Ones(3)), ParameterError);
  const MoGParams joint = mog_conditional(p, x, Mask::Zero(3));
  CHECK(joint.means == p.means);
  Eigen::VectorXd bad = x;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(mog_logpdf(p, bad), ParameterError);
}

TEST_CASE("product of marginals factorizes") {
  const MoGParams p = generate_mog(8, 3, 4);
  const MoGParams prod = product_of_marginals(p, {0, 2});
  CHECK(prod.components() == 16);
  Eigen::VectorXd x(3);
  x << 0.3, -1.0, 1.1;
  Eigen::VectorXd y(2);
  y << x[0], x[2];
  CHECK(mog_logpdf(prod, y) == doctest::Approx(direct_logpdf(p, x, {0}) + direct_logpdf(p, x, {2})).epsilon(1e-10));
  CHECK_THROWS_AS(product_of_marginals(p, {0, 1, 2}, 10), ParameterError);
}

TEST_CASE("oracle endpoints and interpolation") {
  const MoGParams p = generate_mog(9, 3, 5);
  Eigen::VectorXd x(3);
  x << 0.5, 0.0, -0.2;
  Mask mask(3);
  mask << true, false, false;
  const MoGParams cond = mog_conditional(p, x, mask);
  const MoGParams prod = product_of_marginals(p, {1, 2});
  Eigen::VectorXd y(2);
  y << 0.2, -0.7;

  CHECK(mog_logpdf(oracle_widen(cond, prod, 0.0), y) == doctest::Approx(mog_logpdf(cond, y)));
  CHECK(mog_logpdf(oracle_widen(cond, prod, 1.0), y) == doctest::Approx(mog_logpdf(prod, y)));
  CHECK(mog_logpdf(oracle_widen(cond, prod, 2.0), y) == doctest::Approx(normal_log_pdf_std(y[0]) + normal_log_pdf_std(y[1])));
  const double mix = std::log(0.7 * std::exp(mog_logpdf(cond, y)) + 0.3 * std::exp(mog_logpdf(prod, y)));
  CHECK(mog_logpdf(oracle_widen(cond, prod, 0.3), y) == doctest::Approx(mix).epsilon(1e-12));
  CHECK_NOTHROW(oracle_widen(cond, prod, 1.5).validate());
  CHECK_THROWS_AS(oracle_widen(cond, prod, 2.5), ParameterError);

  const MoGParams uni = oracle_oversample(cond, 1.0);
  CHECK((uni.weights.array() - 1.0 / 5.0).abs().maxCoeff() < 1e-12);
  CHECK(oracle_oversample(cond, 0.0).weights == cond.weights);
}

TEST_CASE("mixture JSON round trip") {
  const MoGParams p = generate_mog(12, 2, 3);
  const MoGParams q = mog_from_json(mog_to_json(p));
  CHECK(q.weights == p.weights);
  CHECK(q.means == p.means);
  CHECK(q.covariances[2] == p.covariances[2]);
  CHECK(q.seed == p.seed);
}
