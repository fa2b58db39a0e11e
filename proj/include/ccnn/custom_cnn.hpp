#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccnn/layers.hpp"

namespace ccnn {

struct CustomCnnConfig {
  std::size_t num_classes = 2;
  std::vector<std::size_t> block_depths{2, 2, 3};
  std::vector<std::size_t> channels{64, 128, 256};
  std::size_t hidden = 512;
  double dropout_rate = 0.5;
  std::size_t input_channels = 3;

  /// True when the fixed architecture constants are untouched.
  bool is_reference() const {
    return block_depths == std::vector<std::size_t>{2, 2, 3} &&
           channels == std::vector<std::size_t>{64, 128, 256} && hidden == 512 && input_channels == 3;
  }

  void validate() const {
    if (num_classes < 2) fail(ErrorKind::Config, "num_classes must be at least 2");
    if (block_depths.empty() || block_depths.size() != channels.size())
      fail(ErrorKind::Config, "block_depths and channels must be non-empty and the same length");
    for (std::size_t d : block_depths)
      if (d == 0) fail(ErrorKind::Config, "every block needs at least one conv unit");
    if (hidden == 0 || input_channels == 0) fail(ErrorKind::Config, "hidden and input_channels must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail(ErrorKind::Config, "dropout_rate must lie in [0, 1)");
  }
};

/// Three Conv3x3-BN-ReLU blocks (each closed by a 2x max-pool), global
/// average pooling, then FC -> BN1d -> ReLU -> Dropout -> FC.
template <typename Scalar>
class CustomCnn {
 public:
  using TensorT = Tensor<Scalar>;

  /// Zero conv/linear weights, identity BatchNorm. For accounting or for
  /// loading stored weights.
  static CustomCnn allocate(const CustomCnnConfig& config) {
    config.validate();
    CustomCnn m(config);
    for (auto& block : m.blocks_)
      for (auto& unit : block.units) unit.bn.init();
    m.head_bn_.init();
    return m;
  }

  static CustomCnn build(const CustomCnnConfig& config, std::uint64_t seed) {
    CustomCnn m = allocate(config);
    Rng rng(seed);
    for (auto& block : m.blocks_)
      for (auto& unit : block.units) unit.conv.init(rng);
    m.fc1_.init(rng);
    m.fc2_.init(rng);
    m.reseed_dropout(derive_seed(seed, {0xD60u}));
    return m;
  }

  const CustomCnnConfig& config() const { return config_; }
  std::size_t num_classes() const { return config_.num_classes; }

  void set_mode(LayerMode mode) { mode_ = mode; }
  LayerMode mode() const { return mode_; }

  /// Dropout masks are drawn from this stream; the trainer reseeds it per
  /// step so resumed runs reproduce the same masks.
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  /// Returns unnormalized logits [N, C].
  TensorT forward(const TensorT& batch) {
    require_rank(batch.shape(), 4, "CustomCnn input");
    if (batch.dim(1) != config_.input_channels)
      fail(ErrorKind::Dimension, "CustomCnn expects " + std::to_string(config_.input_channels) +
                                     " input channels, got " + batch.shape().str());
    const std::size_t factor = std::size_t(1) << blocks_.size();
    if (batch.dim(2) % factor || batch.dim(3) % factor)
      fail(ErrorKind::Precondition, "CustomCnn input spatial dims must be divisible by " + std::to_string(factor) +
                                        ", got " + batch.shape().str());
    forwarded_ = false;
    TensorT x = batch;
    for (auto& block : blocks_) {
      for (auto& unit : block.units) x = unit.relu.forward(unit.bn.forward(unit.conv.forward(x), mode_));
      x = block.pool.forward(x);
      feature_shape_ = x.shape();
    }
    x = gap_.forward(x);
    x = head_relu_.forward(head_bn_.forward(fc1_.forward(x), mode_));
    x = dropout_.forward(x, mode_, dropout_rng_);
    x = fc2_.forward(x);
    forwarded_ = true;
    return x;
  }

  /// Accumulates d(loss)/d(param) into every Param::grad.
  void backward(const TensorT& grad_logits) {
    if (!forwarded_) fail(ErrorKind::State, "CustomCnn: backward without a preceding forward");
    if (mode_ != LayerMode::Train) fail(ErrorKind::State, "CustomCnn: backward requires Train mode");
    TensorT g = fc2_.backward(grad_logits);
    g = dropout_.backward(g);
    g = fc1_.backward(head_bn_.backward(head_relu_.backward(g)));
    g = gap_.backward(g);
    for (auto b = blocks_.rbegin(); b != blocks_.rend(); ++b) {
      g = b->pool.backward(g);
      for (auto u = b->units.rbegin(); u != b->units.rend(); ++u)
        g = u->conv.backward(u->bn.backward(u->relu.backward(g)));
    }
  }

  TensorT predict_proba(const TensorT& batch) { return softmax(forward(batch)); }

  void zero_grads() {
    for (Param<Scalar>* p : parameters()) p->zero_grad();
  }

  /// Registry order: blocks in order, conv then bn per unit, then the head.
  std::vector<Param<Scalar>*> parameters() {
    std::vector<Param<Scalar>*> out;
    for (auto& block : blocks_)
      for (auto& unit : block.units) {
        unit.conv.params(out);
        unit.bn.params(out);
      }
    fc1_.params(out);
    head_bn_.params(out);
    fc2_.params(out);
    return out;
  }

  std::vector<Buffer<Scalar>> buffers() {
    std::vector<Buffer<Scalar>> out;
    for (auto& block : blocks_)
      for (auto& unit : block.units) unit.bn.buffers(out);
    head_bn_.buffers(out);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& block : blocks_)
      for (const auto& unit : block.units)
        n += unit.conv.weight.value.size() + unit.conv.bias.value.size() + 2 * unit.bn.gamma.value.size();
    return n + fc1_.weight.value.size() + fc1_.bias.value.size() + 2 * head_bn_.gamma.value.size() +
           fc2_.weight.value.size() + fc2_.bias.value.size();
  }

  std::size_t buffer_count() const {
    std::size_t n = 0;
    for (const auto& block : blocks_)
      for (const auto& unit : block.units) n += unit.bn.running_mean.size() + unit.bn.running_var.size();
    return n + head_bn_.running_mean.size() + head_bn_.running_var.size();
  }

  /// Float32 footprint of parameters plus buffers, in MiB.
  double model_size_mb() const { return 4.0 * double(param_count() + buffer_count()) / double(1 << 20); }

  /// Digest of every ReLU on/off decision and max-pool winner in the most
  /// recent forward. Equal digests mean two inputs sit on the same linear
  /// piece of the network.
  std::uint64_t activation_pattern() const {
    std::uint64_t h = 0;
    const auto relu = [&h](const ReluLayer<Scalar>& r) {
      std::uint64_t word = 0;
      std::size_t bit = 0;
      for (Scalar v : r.last_input().values()) {
        word |= std::uint64_t(v > Scalar(0)) << bit;
        if (++bit == 64) {
          h = mix64(h ^ word);
          word = 0;
          bit = 0;
        }
      }
      h = mix64(h ^ word ^ (std::uint64_t(bit) << 56));
    };
    for (const auto& block : blocks_) {
      for (const auto& unit : block.units) relu(unit.relu);
      for (std::size_t i : block.pool.last_argmax()) h = mix64(h ^ i);
    }
    relu(head_relu_);
    return h;
  }

  /// Shape of the last block's pooled output (the GAP input) from the most
  /// recent forward.
  const Shape& final_feature_shape() const { return feature_shape_; }

 private:
  struct ConvUnit {
    Conv2dLayer<Scalar> conv;
    BatchNormLayer<Scalar> bn;
    ReluLayer<Scalar> relu;
  };
  struct Block {
    std::vector<ConvUnit> units;
    MaxPoolLayer<Scalar> pool;
  };

  explicit CustomCnn(const CustomCnnConfig& config)
      : config_(config),
        fc1_("head.fc1", config.channels.back(), config.hidden),
        head_bn_("head.bn", config.hidden),
        dropout_(config.dropout_rate),
        fc2_("head.fc2", config.hidden, config.num_classes) {
    std::size_t in = config.input_channels;
    for (std::size_t b = 0; b < config.block_depths.size(); ++b) {
      Block block;
      for (std::size_t u = 0; u < config.block_depths[b]; ++u) {
        const std::string prefix = "block" + std::to_string(b + 1) + "." + std::to_string(u);
        block.units.push_back(
            ConvUnit{Conv2dLayer<Scalar>(prefix + ".conv", in, config.channels[b]),
                     BatchNormLayer<Scalar>(prefix + ".bn", config.channels[b]), ReluLayer<Scalar>()});
        in = config.channels[b];
      }
      blocks_.push_back(std::move(block));
    }
  }

  CustomCnnConfig config_;
  std::vector<Block> blocks_;
  GlobalAvgPoolLayer<Scalar> gap_;
  LinearLayer<Scalar> fc1_;
  BatchNormLayer<Scalar> head_bn_;
  ReluLayer<Scalar> head_relu_;
  DropoutLayer<Scalar> dropout_;
  LinearLayer<Scalar> fc2_;
  Rng dropout_rng_;
  LayerMode mode_ = LayerMode::Train;
  bool forwarded_ = false;
  Shape feature_shape_;
};

}  // namespace ccnn
