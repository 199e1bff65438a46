#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "missvae/mixture.hpp"
#include "missvae/rng.hpp"
#include "missvae/types.hpp"
#include "missvae/vae.hpp"

namespace testbed {

using missvae::Index;
using missvae::Mask;

/// Decoder x = W z + b + sigma * e with z ~ N(0, I): a single affine layer
/// whose std head has zero weights. Every density it implies is Gaussian.
struct LinearGaussian {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
  Eigen::VectorXd sigma;

  Index dim() const { return w.rows(); }
  Index latent() const { return w.cols(); }
  missvae::VAEModel model() const;

  Eigen::MatrixXd covariance() const;
  double log_marginal(const Eigen::VectorXd& x, const Mask& mask) const;
  /// Gaussian conditional of the missing dims (increasing order) given the observed ones.
  void conditional(const Eigen::VectorXd& x, const Mask& mask, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) const;
  /// Gaussian posterior p(z | x_obs).
  void posterior(const Eigen::VectorXd& x, const Mask& mask, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) const;
};

/// Single affine encoder whose output is the exact posterior of a
/// one-dimensional-latent LinearGaussian for fully observed input.
missvae::Encoder exact_posterior_encoder(const LinearGaussian& lg);

LinearGaussian random_linear_gaussian(Index dim, Index latent, missvae::Rng& rng, double sigma_lo = 0.4, double sigma_hi = 0.9);

double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

/// Central finite difference of f at x, one coordinate at a time.
Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                  double h = 1e-5);

/// z solving F_d(z_d | z_<d) = u_d dim by dim for a diagonal Gaussian
/// mixture, by bisection on the conditional CDF.
Eigen::VectorXd mixture_inverse_cdf(const missvae::MixtureParams& psi, const Eigen::VectorXd& u);

/// [logits | means (column-major) | stds] and back.
Eigen::VectorXd flatten(const missvae::MixtureParams& psi);
Eigen::VectorXd flatten(const missvae::MixtureGrad& g);
missvae::MixtureParams unflatten(const Eigen::VectorXd& v, Index components, Index latent_dim);

/// One-sample Kolmogorov-Smirnov statistic against a CDF.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);
/// Asymptotic Kolmogorov p-value with the small-sample correction.
double ks_pvalue(double statistic, Index n);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

} // namespace testbed
