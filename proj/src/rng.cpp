#include "missvae/rng.hpp"

#include <sstream>

#include "missvae/errors.hpp"

namespace missvae {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

double Rng::uniform() { return std::generate_canonical<double, 53>(engine_); }

double Rng::normal() { return normal_(engine_); }

double Rng::gamma(double shape) {
  std::gamma_distribution<double> dist(shape, 1.0);
  return dist(engine_);
}

double Rng::chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

Eigen::Index Rng::uniform_index(Eigen::Index n) {
  if (n <= 0) throw ParameterError("uniform_index: n must be positive");
  std::uniform_int_distribution<Eigen::Index> dist(0, n - 1);
  return dist(engine_);
}

Eigen::Index Rng::categorical(std::span<const double> weights) {
  if (weights.empty()) throw ParameterError("categorical: empty weight vector");
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = uniform() * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return static_cast<Eigen::Index>(k);
  }
  // u landed on the upper edge through rounding; take the last positive weight.
  for (std::size_t k = weights.size(); k-- > 0;)
    if (weights[k] > 0.0) return static_cast<Eigen::Index>(k);
  return static_cast<Eigen::Index>(weights.size() - 1);
}

Eigen::VectorXd Rng::normal_vector(Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Rng Rng::split() {
  const std::uint64_t seed = engine_();
  return Rng(seed ^ 0x9e3779b97f4a7c15ULL);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_;
  if (!is) throw ParameterError("Rng::set_state: malformed state string");
}

} // namespace missvae
