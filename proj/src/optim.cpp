#include "missvae/optim.hpp"

#include <cmath>
#include <numbers>

#include "missvae/errors.hpp"

namespace missvae {

AmsGrad::AmsGrad(Eigen::Index size, OptimizerConfig config)
    : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)),
      v_max_(Eigen::VectorXd::Zero(size)) {
  if (!(config.learning_rate > 0.0)) throw ParameterError("AmsGrad: learning rate must be positive");
}

double AmsGrad::current_learning_rate() const {
  if (!config_.cosine || config_.total_steps <= 0) return config_.learning_rate;
  const double frac = std::min(1.0, static_cast<double>(t_) / static_cast<double>(config_.total_steps));
  return config_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void AmsGrad::step(Eigen::VectorXd& params, const Eigen::Ref<const Eigen::VectorXd>& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ParameterError("AmsGrad: size mismatch");
  const double lr = current_learning_rate();
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  m_ = b1 * m_ + (1.0 - b1) * grad;
  v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
  v_max_ = v_max_.cwiseMax(v_);
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step = lr / bc1;
  params.array() += step * m_.array() / (v_max_.array().sqrt() / std::sqrt(bc2) + config_.eps);
}

double clip_global_norm(const std::vector<Eigen::VectorXd*>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-12);
    for (auto* g : grads) *g *= scale;
  }
  return norm;
}

} // namespace missvae
