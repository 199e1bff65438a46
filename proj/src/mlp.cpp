#include "missvae/mlp.hpp"

#include <cmath>

#include "missvae/errors.hpp"

namespace missvae {

namespace {

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using MutMap = Eigen::Map<Eigen::MatrixXd>;

ConstMap mat(const Eigen::Ref<const Eigen::VectorXd>& p, Index offset, Index rows, Index cols) {
  return ConstMap(p.data() + offset, rows, cols);
}
MutMap mat(Eigen::VectorXd& p, Index offset, Index rows, Index cols) { return MutMap(p.data() + offset, rows, cols); }

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_grad(const Eigen::MatrixXd& grad, const Eigen::MatrixXd& pre) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

} // namespace

Mlp::Mlp(MlpArch arch) : arch_(arch) {
  if (arch.input < 1 || arch.output < 1) throw ParameterError("Mlp: input and output widths must be positive");
  if (arch.hidden < 0 || arch.blocks < 0) throw ParameterError("Mlp: negative width or block count");
  if (arch.hidden == 0 && arch.blocks > 0) throw ParameterError("Mlp: residual blocks need a hidden width");
  Index off = 0;
  if (arch.hidden == 0) {
    out_w_ = off;
    off += arch.output * arch.input;
    out_b_ = off;
    off += arch.output;
    param_count_ = off;
    return;
  }
  const Index h = arch.hidden;
  in_w_ = off;
  off += h * arch.input;
  in_b_ = off;
  off += h;
  for (Index b = 0; b < arch.blocks; ++b) {
    Block blk{};
    blk.w1 = off;
    off += h * h;
    blk.b1 = off;
    off += h;
    blk.w2 = off;
    off += h * h;
    blk.b2 = off;
    off += h;
    blocks_.push_back(blk);
  }
  out_w_ = off;
  off += arch.output * h;
  out_b_ = off;
  off += arch.output;
  param_count_ = off;
}

void Mlp::init(Eigen::Ref<Eigen::VectorXd> params, Rng& rng) const {
  if (params.size() != param_count_) throw ParameterError("Mlp::init: parameter vector size mismatch");
  auto fill = [&](Index offset, Index count, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < count; ++i) params[offset + i] = (2.0 * rng.uniform() - 1.0) * bound;
  };
  if (arch_.hidden == 0) {
    fill(out_w_, arch_.output * arch_.input, arch_.input);
    fill(out_b_, arch_.output, arch_.input);
    return;
  }
  const Index h = arch_.hidden;
  fill(in_w_, h * arch_.input, arch_.input);
  fill(in_b_, h, arch_.input);
  for (const auto& blk : blocks_) {
    fill(blk.w1, h * h, h);
    fill(blk.b1, h, h);
    fill(blk.w2, h * h, h);
    fill(blk.b2, h, h);
  }
  fill(out_w_, arch_.output * h, h);
  fill(out_b_, arch_.output, h);
}

Eigen::MatrixXd Mlp::forward(const Eigen::Ref<const Eigen::VectorXd>& params, const Eigen::Ref<const Eigen::MatrixXd>& x,
                             MlpCache* cache, PassCounter* counter) const {
  if (params.size() != param_count_) throw ParameterError("Mlp::forward: parameter vector size mismatch");
  if (x.rows() != arch_.input) throw ParameterError("Mlp::forward: input width mismatch");
  if (counter) counter->forward_columns += x.cols();
  if (cache) {
    cache->input = x;
    cache->stream.clear();
    cache->inner.clear();
  }
  if (arch_.hidden == 0) {
    Eigen::MatrixXd y = mat(params, out_w_, arch_.output, arch_.input) * x;
    y.colwise() += params.segment(out_b_, arch_.output);
    return y;
  }
  const Index h = arch_.hidden;
  Eigen::MatrixXd stream = mat(params, in_w_, h, arch_.input) * x;
  stream.colwise() += params.segment(in_b_, h);
  for (const auto& blk : blocks_) {
    Eigen::MatrixXd u = mat(params, blk.w1, h, h) * relu(stream);
    u.colwise() += params.segment(blk.b1, h);
    Eigen::MatrixXd next = stream;
    next.noalias() += mat(params, blk.w2, h, h) * relu(u);
    next.colwise() += params.segment(blk.b2, h);
    if (cache) {
      cache->stream.push_back(std::move(stream));
      cache->inner.push_back(std::move(u));
    }
    stream = std::move(next);
  }
  Eigen::MatrixXd y = mat(params, out_w_, arch_.output, h) * relu(stream);
  y.colwise() += params.segment(out_b_, arch_.output);
  if (cache) cache->stream.push_back(std::move(stream));
  return y;
}

void Mlp::backward(const Eigen::Ref<const Eigen::VectorXd>& params, const MlpCache& cache,
                   const Eigen::Ref<const Eigen::MatrixXd>& grad_output, Eigen::VectorXd* grad_params,
                   Eigen::MatrixXd* grad_input, PassCounter* counter) const {
  if (grad_output.rows() != arch_.output || grad_output.cols() != cache.input.cols())
    throw ParameterError("Mlp::backward: gradient shape mismatch");
  if (grad_params && grad_params->size() != param_count_)
    throw ParameterError("Mlp::backward: gradient vector size mismatch");
  if (counter) counter->backward_columns += grad_output.cols();
  if (arch_.hidden == 0) {
    if (grad_params) {
      mat(*grad_params, out_w_, arch_.output, arch_.input).noalias() += grad_output * cache.input.transpose();
      grad_params->segment(out_b_, arch_.output) += grad_output.rowwise().sum();
    }
    if (grad_input) *grad_input = mat(params, out_w_, arch_.output, arch_.input).transpose() * grad_output;
    return;
  }
  const Index h = arch_.hidden;
  const Eigen::MatrixXd& last = cache.stream.back();
  if (grad_params) {
    mat(*grad_params, out_w_, arch_.output, h).noalias() += grad_output * relu(last).transpose();
    grad_params->segment(out_b_, arch_.output) += grad_output.rowwise().sum();
  }
  Eigen::MatrixXd dh = relu_grad(mat(params, out_w_, arch_.output, h).transpose() * grad_output, last);
  for (Index b = static_cast<Index>(blocks_.size()) - 1; b >= 0; --b) {
    const auto& blk = blocks_[static_cast<std::size_t>(b)];
    const Eigen::MatrixXd& hb = cache.stream[static_cast<std::size_t>(b)];
    const Eigen::MatrixXd& u = cache.inner[static_cast<std::size_t>(b)];
    if (grad_params) {
      mat(*grad_params, blk.w2, h, h).noalias() += dh * relu(u).transpose();
      grad_params->segment(blk.b2, h) += dh.rowwise().sum();
    }
    const Eigen::MatrixXd du = relu_grad(mat(params, blk.w2, h, h).transpose() * dh, u);
    if (grad_params) {
      mat(*grad_params, blk.w1, h, h).noalias() += du * relu(hb).transpose();
      grad_params->segment(blk.b1, h) += du.rowwise().sum();
    }
    dh += relu_grad(mat(params, blk.w1, h, h).transpose() * du, hb);
  }
  if (grad_params) {
    mat(*grad_params, in_w_, h, arch_.input).noalias() += dh * cache.input.transpose();
    grad_params->segment(in_b_, h) += dh.rowwise().sum();
  }
  if (grad_input) *grad_input = mat(params, in_w_, h, arch_.input).transpose() * dh;
}

} // namespace missvae
