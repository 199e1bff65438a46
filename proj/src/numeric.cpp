#include "missvae/numeric.hpp"

namespace missvae {

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() == 0) return -INFINITY;
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

double log_mean_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return log_sum_exp(x) - std::log(static_cast<double>(x.size()));
}

Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return x.array() - log_sum_exp(x);
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return log_softmax(x).array().exp();
}

void LogSumExpAccumulator::add(double x) {
  ++count_;
  if (x == -INFINITY) return;
  if (x <= max_) {
    scaled_sum_ += std::exp(x - max_);
  } else {
    scaled_sum_ = scaled_sum_ * std::exp(max_ - x) + 1.0;
    max_ = x;
  }
}

void LogSumExpAccumulator::add(const Eigen::Ref<const Eigen::VectorXd>& xs) {
  if (xs.size() == 0) return;
  const double m = xs.maxCoeff();
  count_ += xs.size();
  if (m == -INFINITY) return;
  const double chunk = (xs.array() - m).exp().sum();
  if (m <= max_) {
    scaled_sum_ += chunk * std::exp(m - max_);
  } else {
    scaled_sum_ = scaled_sum_ * std::exp(max_ - m) + chunk;
    max_ = m;
  }
}

double LogSumExpAccumulator::value() const {
  if (max_ == -INFINITY) return -INFINITY;
  return max_ + std::log(scaled_sum_);
}

} // namespace missvae
