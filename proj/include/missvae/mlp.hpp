#pragma once

#include <vector>

#include <Eigen/Core>

#include "missvae/rng.hpp"
#include "missvae/types.hpp"

namespace missvae {

struct MlpArch {
  Index input = 0;
  Index output = 0;
  /// Width of the residual stream. 0 together with blocks = 0 gives a single affine layer.
  Index hidden = 200;
  Index blocks = 3;
};

/// Forward/backward column counters. Cost in forward-pass units is
/// forward + 2 * backward.
struct PassCounter {
  long long forward_columns = 0;
  long long backward_columns = 0;

  double cost() const { return static_cast<double>(forward_columns) + 2.0 * static_cast<double>(backward_columns); }
  void reset() { *this = PassCounter{}; }
};

struct MlpCache {
  Eigen::MatrixXd input;
  /// Residual stream before each block and after the last one.
  std::vector<Eigen::MatrixXd> stream;
  /// Inner pre-activations of each block.
  std::vector<Eigen::MatrixXd> inner;
};

/// Residual MLP with pre-activation ReLU blocks over a flat parameter vector:
///   h0 = W_in x + b_in
///   h_{b+1} = h_b + W2 relu(W1 relu(h_b) + b1) + b2
///   y = W_out relu(h_B) + b_out
/// Columns are batch items.
class Mlp {
public:
  Mlp() = default;
  explicit Mlp(MlpArch arch);

  const MlpArch& arch() const { return arch_; }
  Index param_count() const { return param_count_; }

  /// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init(Eigen::Ref<Eigen::VectorXd> params, Rng& rng) const;

  Eigen::MatrixXd forward(const Eigen::Ref<const Eigen::VectorXd>& params, const Eigen::Ref<const Eigen::MatrixXd>& x,
                          MlpCache* cache = nullptr, PassCounter* counter = nullptr) const;

  /// Accumulates into `grad_params` and writes `grad_input` when given.
  void backward(const Eigen::Ref<const Eigen::VectorXd>& params, const MlpCache& cache,
                const Eigen::Ref<const Eigen::MatrixXd>& grad_output, Eigen::VectorXd* grad_params,
                Eigen::MatrixXd* grad_input, PassCounter* counter = nullptr) const;

  /// Offsets of the output layer bias inside the parameter vector.
  Index output_bias_offset() const { return out_b_; }

private:
  struct Block {
    Index w1, b1, w2, b2;
  };

  MlpArch arch_;
  Index param_count_ = 0;
  Index in_w_ = 0, in_b_ = 0, out_w_ = 0, out_b_ = 0;
  std::vector<Block> blocks_;
};

} // namespace missvae
