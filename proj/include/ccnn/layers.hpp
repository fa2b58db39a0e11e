#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/kernels.hpp"
#include "ccnn/rng.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

enum class LayerMode { Train, Eval };

/// A learnable tensor with its gradient and Adam moment buffers.
template <typename Scalar>
struct Param {
  Param() = default;
  Param(std::string param_name, const Shape& shape)
      : name(std::move(param_name)), value(shape), grad(shape), adam_m(shape), adam_v(shape) {}

  void zero_grad() { grad.fill(Scalar(0)); }

  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Tensor<Scalar> adam_m;
  Tensor<Scalar> adam_v;
};

/// Non-learnable persistent state (BatchNorm running statistics).
template <typename Scalar>
struct Buffer {
  std::string name;
  Tensor<Scalar>* tensor;
};

/// He initialization, std = sqrt(2 / fan_out).
template <typename Scalar>
void he_init(Param<Scalar>& weight, std::size_t fan_out, Rng& rng) {
  if (fan_out == 0) fail(ErrorKind::Precondition, "he_init: fan_out must be positive");
  const double stddev = std::sqrt(2.0 / double(fan_out));
  for (Scalar& v : weight.value.values()) v = Scalar(rng.normal(0.0, stddev));
}

/// Small Gaussian initialization for fully connected weights, std = 0.01.
template <typename Scalar>
void linear_init(Param<Scalar>& weight, Rng& rng) {
  require_rank(weight.value.shape(), 2, "linear_init weight");
  for (Scalar& v : weight.value.values()) v = Scalar(rng.normal(0.0, 0.01));
}

template <typename Scalar>
class Conv2dLayer {
 public:
  Conv2dLayer(const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
              std::size_t kernel = 3, ConvGeometry geo = {})
      : weight(prefix + ".weight", Shape{out_channels, in_channels, kernel, kernel}),
        bias(prefix + ".bias", Shape{out_channels}),
        geo_(geo) {}

  void init(Rng& rng) {
    he_init(weight, weight.value.dim(0) * weight.value.dim(2) * weight.value.dim(3), rng);
    bias.value.fill(Scalar(0));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    input_ = x;
    return conv2d_forward(x, weight.value, bias.value, geo_);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (input_.empty()) fail(ErrorKind::State, weight.name + ": backward without forward");
    auto g = conv2d_backward(input_, weight.value, grad_out, geo_);
    weight.grad.vector() += g.weight.vector();
    bias.grad.vector() += g.bias.vector();
    return std::move(g.input);
  }

  void params(std::vector<Param<Scalar>*>& out) { out.insert(out.end(), {&weight, &bias}); }

  Param<Scalar> weight;
  Param<Scalar> bias;

 private:
  ConvGeometry geo_;
  Tensor<Scalar> input_;
};

/// Batch normalization over channels. Rank-4 inputs [N,C,H,W] normalize over
/// N*H*W per channel; rank-2 inputs [N,C] normalize over N.
template <typename Scalar>
class BatchNormLayer {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNormLayer(const std::string& prefix, std::size_t channels)
      : gamma(prefix + ".gamma", Shape{channels}),
        beta(prefix + ".beta", Shape{channels}),
        running_mean(Shape{channels}, Scalar(0)),
        running_var(Shape{channels}, Scalar(1)),
        prefix_(prefix) {
    gamma.value.fill(Scalar(1));
  }

  void init() {
    gamma.value.fill(Scalar(1));
    beta.value.fill(Scalar(0));
    running_mean.fill(Scalar(0));
    running_var.fill(Scalar(1));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerMode mode) {
    const auto [n, c, s] = layout(x.shape());
    Tensor<Scalar> y(x.shape());
    xhat_ = Tensor<Scalar>(x.shape());
    inv_std_.assign(c, 0.0);
    mode_ = mode;
    const double count = double(n * s);

    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean, var;
      if (mode == LayerMode::Train) {
        if (n * s < 2)
          fail(ErrorKind::Precondition,
               prefix_ + ": degenerate batch statistics (need at least 2 values per channel in Train mode)");
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < s; ++k) sum += x[(i * c + ch) * s + k];
        mean = sum / count;
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < s; ++k) {
            const double d = x[(i * c + ch) * s + k] - mean;
            sq += d * d;
          }
        var = sq / count;
        running_mean[ch] = Scalar((1.0 - kMomentum) * running_mean[ch] + kMomentum * mean);
        running_var[ch] = Scalar((1.0 - kMomentum) * running_var[ch] + kMomentum * var * count / (count - 1.0));
      } else {
        mean = running_mean[ch];
        var = running_var[ch];
      }
      const double inv_std = 1.0 / std::sqrt(var + kEps);
      inv_std_[ch] = inv_std;
      const double g = gamma.value[ch], b = beta.value[ch];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < s; ++k) {
          const std::size_t idx = (i * c + ch) * s + k;
          const double xh = (x[idx] - mean) * inv_std;
          xhat_[idx] = Scalar(xh);
          y[idx] = Scalar(g * xh + b);
        }
    }
    require_finite(y, prefix_);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (xhat_.empty()) fail(ErrorKind::State, prefix_ + ": backward without forward");
    if (grad_out.shape() != xhat_.shape()) fail(ErrorKind::Dimension, prefix_ + ": grad shape mismatch");
    const auto [n, c, s] = layout(grad_out.shape());
    const double count = double(n * s);
    Tensor<Scalar> gx(grad_out.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < s; ++k) {
          const std::size_t idx = (i * c + ch) * s + k;
          sum_g += grad_out[idx];
          sum_gx += double(grad_out[idx]) * xhat_[idx];
        }
      gamma.grad[ch] += Scalar(sum_gx);
      beta.grad[ch] += Scalar(sum_g);
      const double scale = gamma.value[ch] * inv_std_[ch];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < s; ++k) {
          const std::size_t idx = (i * c + ch) * s + k;
          if (mode_ == LayerMode::Train)
            gx[idx] = Scalar(scale * (grad_out[idx] - sum_g / count - xhat_[idx] * sum_gx / count));
          else
            gx[idx] = Scalar(scale * grad_out[idx]);
        }
    }
    return gx;
  }

  void params(std::vector<Param<Scalar>*>& out) { out.insert(out.end(), {&gamma, &beta}); }
  void buffers(std::vector<Buffer<Scalar>>& out) {
    out.push_back({prefix_ + ".running_mean", &running_mean});
    out.push_back({prefix_ + ".running_var", &running_var});
  }

  Param<Scalar> gamma;
  Param<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;

 private:
  struct Layout {
    std::size_t n, c, s;
  };
  Layout layout(const Shape& shape) const {
    if (shape.rank() == 4) return {shape[0], shape[1], shape[2] * shape[3]};
    if (shape.rank() == 2) return {shape[0], shape[1], 1};
    fail(ErrorKind::Dimension, prefix_ + ": expected rank 2 or 4 input, got " + shape.str());
  }

  std::string prefix_;
  Tensor<Scalar> xhat_;
  std::vector<double> inv_std_;
  LayerMode mode_ = LayerMode::Train;
};

template <typename Scalar>
class ReluLayer {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> y(x.shape());
    y.vector() = x.vector().cwiseMax(Scalar(0));
    input_ = x;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (input_.shape() != grad_out.shape()) fail(ErrorKind::State, "relu: backward without matching forward");
    Tensor<Scalar> gx(grad_out.shape());
    gx.vector() = (input_.vector().array() > Scalar(0)).select(grad_out.vector(), Scalar(0));
    return gx;
  }

  const Tensor<Scalar>& last_input() const { return input_; }

 private:
  Tensor<Scalar> input_;
};

template <typename Scalar>
class MaxPoolLayer {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    auto r = maxpool2d_forward(x);
    argmax_ = std::move(r.argmax);
    input_shape_ = x.shape();
    return std::move(r.output);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (input_shape_.rank() == 0) fail(ErrorKind::State, "maxpool: backward without forward");
    return maxpool2d_backward(argmax_, grad_out, input_shape_);
  }

  const std::vector<std::size_t>& last_argmax() const { return argmax_; }

 private:
  std::vector<std::size_t> argmax_;
  Shape input_shape_;
};

template <typename Scalar>
class GlobalAvgPoolLayer {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    input_shape_ = x.shape();
    return global_avg_pool_forward(x);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (input_shape_.rank() == 0) fail(ErrorKind::State, "global_avg_pool: backward without forward");
    return global_avg_pool_backward(grad_out, input_shape_);
  }

 private:
  Shape input_shape_;
};

/// y = x W^T + b with W stored [out, in].
template <typename Scalar>
class LinearLayer {
 public:
  LinearLayer(const std::string& prefix, std::size_t in_features, std::size_t out_features)
      : weight(prefix + ".weight", Shape{out_features, in_features}), bias(prefix + ".bias", Shape{out_features}) {}

  void init(Rng& rng) {
    linear_init(weight, rng);
    bias.value.fill(Scalar(0));
  }

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    require_rank(x.shape(), 2, weight.name.c_str());
    if (x.dim(1) != in_features())
      fail(ErrorKind::Dimension, weight.name + ": expected " + std::to_string(in_features()) +
                                     " input features, got " + x.shape().str());
    input_ = x;
    Tensor<Scalar> y(Shape{x.dim(0), out_features()});
    y.matrix().noalias() = x.matrix() * weight.value.matrix().transpose();
    y.matrix().rowwise() += bias.value.vector().transpose();
    require_finite(y, weight.name);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (input_.empty()) fail(ErrorKind::State, weight.name + ": backward without forward");
    if (grad_out.shape() != Shape{input_.dim(0), out_features()})
      fail(ErrorKind::Dimension, weight.name + ": grad shape mismatch");
    weight.grad.matrix().noalias() += grad_out.matrix().transpose() * input_.matrix();
    bias.grad.vector() += grad_out.matrix().colwise().sum().transpose();
    Tensor<Scalar> gx(input_.shape());
    gx.matrix().noalias() = grad_out.matrix() * weight.value.matrix();
    return gx;
  }

  void params(std::vector<Param<Scalar>*>& out) { out.insert(out.end(), {&weight, &bias}); }

  Param<Scalar> weight;
  Param<Scalar> bias;

 private:
  Tensor<Scalar> input_;
};

/// Inverted dropout: survivors are scaled by 1/(1-p) in Train mode, Eval is
/// the identity.
template <typename Scalar>
class DropoutLayer {
 public:
  explicit DropoutLayer(double rate = 0.5) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0))
      fail(ErrorKind::Config, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }

  double rate() const { return rate_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, LayerMode mode, Rng& rng) {
    mask_ = Tensor<Scalar>(x.shape(), Scalar(1));
    if (mode == LayerMode::Eval || rate_ == 0.0) return x;
    const Scalar keep_scale = Scalar(1.0 / (1.0 - rate_));
    for (Scalar& m : mask_.values()) m = rng.bernoulli(rate_) ? Scalar(0) : keep_scale;
    Tensor<Scalar> y(x.shape());
    y.vector() = x.vector().cwiseProduct(mask_.vector());
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) {
    if (mask_.shape() != grad_out.shape()) fail(ErrorKind::State, "dropout: backward without matching forward");
    Tensor<Scalar> gx(grad_out.shape());
    gx.vector() = grad_out.vector().cwiseProduct(mask_.vector());
    return gx;
  }

  const Tensor<Scalar>& mask() const { return mask_; }

 private:
  double rate_;
  Tensor<Scalar> mask_;
};

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  require_rank(logits.shape(), 2, "softmax logits");
  Tensor<Scalar> p(logits.shape());
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar* row = logits.data() + i * c;
    const Scalar mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(double(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] = Scalar(std::exp(double(row[j] - mx)) / z);
  }
  return p;
}

template <typename Scalar>
struct LossResult {
  /// Weighted mean loss of the batch.
  double loss = 0.0;
  /// Sum of per-sample weights; loss * weight_sum is the weighted total.
  double weight_sum = 0.0;
  Tensor<Scalar> grad_logits;
};

/// Cross-entropy over softmax(logits). With class weights w the batch loss is
/// sum_n w[t_n] * -log p_n[t_n] / sum_n w[t_n]; without weights, a plain mean.
/// grad_logits is the exact gradient of that batch loss.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets,
                                         std::span<const double> class_weights = {}) {
  require_rank(logits.shape(), 2, "cross-entropy logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n)
    fail(ErrorKind::Dimension, "cross-entropy: " + std::to_string(targets.size()) + " targets for " +
                                   std::to_string(n) + " rows");
  if (!class_weights.empty() && class_weights.size() != c)
    fail(ErrorKind::Dimension, "cross-entropy: class weight count does not match class count");
  if (!logits.all_finite()) fail(ErrorKind::NumericFault, "cross-entropy: non-finite logits");

  LossResult<Scalar> r;
  r.grad_logits = Tensor<Scalar>(logits.shape());
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || std::size_t(targets[i]) >= c)
      fail(ErrorKind::Label, "cross-entropy: target " + std::to_string(targets[i]) + " outside [0, " +
                                 std::to_string(c) + ")");
    w[i] = class_weights.empty() ? 1.0 : class_weights[std::size_t(targets[i])];
    r.weight_sum += w[i];
  }
  if (!(r.weight_sum > 0.0)) fail(ErrorKind::NumericFault, "cross-entropy: total sample weight is not positive");

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar* row = logits.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    const std::size_t t = std::size_t(targets[i]);
    total += w[i] * (log_z - row[t]);
    const double scale = w[i] / r.weight_sum;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(row[j] - log_z);
      r.grad_logits[i * c + j] = Scalar(scale * (p - (j == t ? 1.0 : 0.0)));
    }
  }
  r.loss = total / r.weight_sum;
  return r;
}

}  // namespace ccnn
