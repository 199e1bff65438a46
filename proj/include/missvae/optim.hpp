#pragma once

#include <vector>

#include <Eigen/Core>

namespace missvae {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Cosine decay from learning_rate to 0 over total_steps.
  bool cosine = false;
  long long total_steps = 0;
  /// Global-norm clipping over all parameter groups; 0 disables.
  double clip_norm = 0.0;
};

/// AMSGrad with bias correction; ascends the objective.
class AmsGrad {
public:
  AmsGrad() = default;
  AmsGrad(Eigen::Index size, OptimizerConfig config);

  /// params += step computed from `grad` (gradient of the objective to maximize).
  void step(Eigen::VectorXd& params, const Eigen::Ref<const Eigen::VectorXd>& grad);
  double current_learning_rate() const;

  long long steps() const { return t_; }
  Eigen::VectorXd& m() { return m_; }
  Eigen::VectorXd& v() { return v_; }
  Eigen::VectorXd& v_max() { return v_max_; }
  const Eigen::VectorXd& m() const { return m_; }
  const Eigen::VectorXd& v() const { return v_; }
  const Eigen::VectorXd& v_max() const { return v_max_; }
  void set_steps(long long t) { t_ = t; }
  const OptimizerConfig& config() const { return config_; }

private:
  OptimizerConfig config_;
  Eigen::VectorXd m_, v_, v_max_;
  long long t_ = 0;
};

/// Rescales all gradients jointly so their concatenated norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_global_norm(const std::vector<Eigen::VectorXd*>& grads, double max_norm);

} // namespace missvae
