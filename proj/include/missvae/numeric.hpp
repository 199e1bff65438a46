#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace missvae {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
/// Floor applied to every Gaussian standard deviation produced by a network.
inline constexpr double kMinStd = 1e-5;
inline constexpr double kBernoulliClamp = 1e-6;

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x);
double log_mean_exp(const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& x);

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}
/// Inverse of softplus, defined for y > 0.
inline double softplus_inverse(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double normal_cdf(double t) { return 0.5 * std::erfc(-t * std::numbers::sqrt2 * 0.5); }
inline double normal_log_pdf_std(double t) { return -0.5 * (kLogTwoPi + t * t); }
inline double normal_log_pdf(double x, double mean, double std) {
  const double t = (x - mean) / std;
  return -0.5 * (kLogTwoPi + t * t) - std::log(std);
}

/// Running log-sum-exp accumulator; combining chunks gives the same value as a
/// single pass up to rounding.
class LogSumExpAccumulator {
public:
  void add(double x);
  void add(const Eigen::Ref<const Eigen::VectorXd>& xs);
  double value() const;
  long long count() const { return count_; }

private:
  double max_ = -INFINITY;
  double scaled_sum_ = 0.0;
  long long count_ = 0;
};

} // namespace missvae
