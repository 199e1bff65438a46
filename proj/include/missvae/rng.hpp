#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include <Eigen/Core>

namespace missvae {

/// Seeded generator with serializable state. Every stochastic operation in the
/// library takes one of these explicitly; instances are never shared between
/// concurrent callers.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0);

  /// Uniform on [0, 1).
  double uniform();
  double normal();
  double gamma(double shape);
  double chi_squared(double dof);
  /// Uniform integer in [0, n).
  Eigen::Index uniform_index(Eigen::Index n);
  /// Inverse-CDF draw from (possibly unnormalized) nonnegative weights using a single uniform.
  Eigen::Index categorical(std::span<const double> weights);

  Eigen::VectorXd normal_vector(Eigen::Index n);

  /// Derive an independent stream; advances this generator.
  Rng split();

  std::string state() const;
  void set_state(const std::string& state);

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

} // namespace missvae
