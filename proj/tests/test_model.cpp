#include <doctest.h>

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "missvae/errors.hpp"
#include "missvae/mlp.hpp"
#include "missvae/numeric.hpp"
#include "missvae/vae.hpp"
#include "support/testbed.hpp"

using namespace missvae;

namespace {

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

} // namespace

TEST_CASE("residual MLP backward matches finite differences") {
  Rng rng(1);
  for (Index blocks : {0, 2}) {
    const Index hidden = blocks ? 6 : 0;
    Mlp net({3, 4, hidden, blocks});
    Eigen::VectorXd p(net.param_count());
    net.init(p, rng);
    p += rng.normal_vector(p.size()) * 0.1;
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
    const Eigen::MatrixXd g = Eigen::MatrixXd::Random(4, 5);
    auto objective = [&](const Eigen::VectorXd& q) { return (net.forward(q, x).array() * g.array()).sum(); };
    MlpCache cache;
    net.forward(p, x, &cache);
    Eigen::VectorXd gp = Eigen::VectorXd::Zero(p.size());
    Eigen::MatrixXd gx;
    net.backward(p, cache, g, &gp, &gx);
    CHECK(rel_err(gp, testbed::finite_difference(objective, p)) < 1e-6);

    auto in_objective = [&](const Eigen::VectorXd& flat) {
      const Eigen::Map<const Eigen::MatrixXd> xx(flat.data(), 3, 5);
      return (net.forward(p, xx).array() * g.array()).sum();
    };
    const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    const Eigen::VectorXd gx_flat = Eigen::Map<const Eigen::VectorXd>(gx.data(), gx.size());
    CHECK(rel_err(gx_flat, testbed::finite_difference(in_objective, flat)) < 1e-6);
  }
}

TEST_CASE("pass counter counts columns") {
  Mlp net({2, 2, 4, 1});
  Eigen::VectorXd p(net.param_count());
  Rng rng(2);
  net.init(p, rng);
  PassCounter c;
  MlpCache cache;
  net.forward(p, Eigen::MatrixXd::Zero(2, 7), &cache, &c);
  net.backward(p, cache, Eigen::MatrixXd::Ones(2, 7), nullptr, nullptr, &c);
  CHECK(c.forward_columns == 7);
  CHECK(c.backward_columns == 7);
  CHECK(c.cost() == 21.0);
}

TEST_CASE("Gaussian marginal log-likelihood integrates the joint over a missing dim") {
  Rng rng(3);
  VAEModel model(4, 2, DecoderFamily::gaussian, 8, 1);
  model.init(rng);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 1) * 2.0;
    const DecoderOutput eta = decoder_forward(model, z);
    Eigen::VectorXd x = rng.normal_vector(4);
    Mask mask = Mask::Ones(4);
    const Index miss = trial % 4;
    mask[miss] = false;
    auto joint = [&](double t) {
      double s = 0.0;
      for (Index d = 0; d < 4; ++d) {
        const double v = d == miss ? t : x[d];
        const double m = eta.mean(d, 0), sd = eta.std(d, 0);
        s += -0.5 * std::log(2 * M_PI) - std::log(sd) - 0.5 * (v - m) * (v - m) / (sd * sd);
      }
      return std::exp(s);
    };
    const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        joint, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 15, 1e-12);
    CHECK(marginal_decoder_loglik(eta, x, mask)[0] == doctest::Approx(std::log(integral)).epsilon(1e-8));
  }
}

TEST_CASE("Bernoulli marginal sums the joint over the missing pixel") {
  Rng rng(4);
  VAEModel model(3, 2, DecoderFamily::bernoulli, 6, 1);
  model.init(rng);
  const DecoderOutput eta = decoder_forward(model, Eigen::MatrixXd::Random(2, 1));
  Eigen::VectorXd x(3);
  x << 1.0, 0.0, 1.0;
  Mask full = Mask::Ones(3), part = Mask::Ones(3);
  part[1] = false;
  Eigen::VectorXd x0 = x, x1 = x;
  x1[1] = 1.0;
  const double s = std::exp(marginal_decoder_loglik(eta, x0, full)[0]) + std::exp(marginal_decoder_loglik(eta, x1, full)[0]);
  CHECK(marginal_decoder_loglik(eta, x, part)[0] == doctest::Approx(std::log(s)).epsilon(1e-12));
  CHECK((eta.mean.array() >= kBernoulliClamp).all());
}

TEST_CASE("decoder log-likelihood gradients match finite differences") {
  Rng rng(5);
  for (DecoderFamily fam : {DecoderFamily::gaussian, DecoderFamily::bernoulli}) {
    VAEModel model(3, 2, fam, 5, 1);
    model.init(rng);
    const Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 4);
    Eigen::MatrixXd x = fam == DecoderFamily::gaussian ? Eigen::MatrixXd(Eigen::MatrixXd::Random(3, 4))
                                                       : Eigen::MatrixXd((Eigen::MatrixXd::Random(3, 4).array() > 0).cast<double>());
    MaskMatrix m = Eigen::MatrixXd::Random(3, 4).array() > -0.3;
    Eigen::VectorXd coeff = Eigen::VectorXd::Random(4);
    auto f = [&](const Eigen::VectorXd& th) {
      VAEModel mm = model;
      mm.theta = th;
      return coeff.dot(marginal_decoder_loglik_columns(decoder_forward(mm, z), x, m));
    };
    const DecoderOutput eta = decoder_forward(model, z, true);
    const Eigen::MatrixXd graw = marginal_decoder_loglik_grad(eta, x, m, coeff);
    Eigen::VectorXd gt = Eigen::VectorXd::Zero(model.theta.size());
    Eigen::MatrixXd gz;
    decoder_backward(model, eta, graw, &gt, &gz);
    CHECK(rel_err(gt, testbed::finite_difference(f, model.theta)) < 1e-6);

    auto fz = [&](const Eigen::VectorXd& flat) {
      return coeff.dot(marginal_decoder_loglik_columns(decoder_forward(model, Eigen::Map<const Eigen::MatrixXd>(flat.data(), 2, 4)), x, m));
    };
    const Eigen::VectorXd zf = Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
    CHECK(rel_err(Eigen::Map<const Eigen::VectorXd>(gz.data(), gz.size()), testbed::finite_difference(fz, zf)) < 1e-6);
  }
}

TEST_CASE("conditional decoder sampling keeps observed dims") {
  Rng rng(6);
  VAEModel model(3, 2, DecoderFamily::gaussian, 4, 1);
  model.init(rng);
  const DecoderOutput eta = decoder_forward(model, Eigen::MatrixXd::Zero(2, 1));
  Eigen::VectorXd v(3);
  v << 1.0, 2.0, 3.0;
  Mask m(3);
  m << true, false, true;
  const ConditionalDraw d = decoder_conditional_sample(eta, 0, v, m, rng);
  CHECK(d.sampled);
  CHECK(d.values[0] == 1.0);
  CHECK(d.values[2] == 3.0);
  CHECK(d.values[1] != 2.0);
  CHECK_FALSE(decoder_conditional_sample(eta, 0, v, Mask::Ones(3), rng).sampled);
}

TEST_CASE("non-finite decoder output names the sample") {
  VAEModel model(2, 1, DecoderFamily::gaussian, 0, 0);
  model.theta.setZero();
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(1, 3);
  z(0, 2) = std::nan("");
  try {
    decoder_forward(model, z);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("linear-Gaussian testbed decoder reproduces its parameters") {
  Rng rng(7);
  const testbed::LinearGaussian lg = testbed::random_linear_gaussian(3, 2, rng);
  const VAEModel model = lg.model();
  Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, 2);
  const DecoderOutput eta = decoder_forward(model, z);
  CHECK((eta.mean - ((lg.w * z).colwise() + lg.b)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((eta.std.col(1) - lg.sigma).cwiseAbs().maxCoeff() < 1e-12);
}
