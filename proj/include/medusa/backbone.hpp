#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "medusa/layers.hpp"

namespace medusa {

struct BackboneConfig {
  int stage_count = 3;
  std::vector<int> stage_channels{16, 32, 64};
  int in_channels = 1;
  int height = 64;
  int width = 64;
  int blocks_per_stage = 2;
  int num_classes = 2;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  /// Spatial extents of stage j (0-based): the first stage keeps the input
  /// resolution, every later stage halves it.
  int stage_height(int j) const { return height >> j; }
  int stage_width(int j) const { return width >> j; }
  Shape input_shape(int batch) const { return Shape{batch, in_channels, height, width}; }

  bool operator==(const BackboneConfig&) const = default;
};

/// Transformation applied to a stage's output before it feeds the next stage.
template <typename T>
using StageGate = std::function<Tensor<T>(const Tensor<T>&)>;

template <typename T>
std::vector<StageGate<T>> identity_gates(int stage_count) {
  return std::vector<StageGate<T>>(static_cast<std::size_t>(stage_count), [](const Tensor<T>& f) { return f; });
}

template <typename T>
struct StageFeatures {
  std::vector<Tensor<T>> features;  // F_j, before gating
  std::vector<Tensor<T>> gated;     // gate_j(F_j)
  Tensor<T> logits;
};

/// Basic residual block: conv-bn-relu-conv-bn plus shortcut, then relu.
/// A strided or widening block uses a 1x1 projection shortcut.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& prefix, int cin, int cout, int stride, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x, Mode mode);
  void collect(StateRefs<T>& refs);

 private:
  Conv2d<T> conv1_, conv2_;
  BatchNorm<T> bn1_, bn2_;
  bool project_ = false;
  Conv2d<T> proj_;
  BatchNorm<T> proj_bn_;
};

/// Small residual classifier: stem, J stages of residual blocks (stride-2
/// entry from stage 2 on), global average pool, dense head.
template <typename T>
class Backbone {
 public:
  /// He-normal conv kernels, zero biases, all drawn from `seed`.
  static Backbone build(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  int stage_count() const { return config_.stage_count; }

  /// Runs stage j (0-based) on its input: the image for j = 0, the previous
  /// stage's gated output otherwise.
  Tensor<T> run_stage(int j, const Tensor<T>& input, Mode mode);
  /// Pools the last stage's gated output and applies the dense head.
  Tensor<T> classify(const Tensor<T>& last);

  StageFeatures<T> forward_features(const Tensor<T>& x, std::span<const StageGate<T>> gates, Mode mode);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  void collect(StateRefs<T>& refs);

 private:
  BackboneConfig config_;
  ConvBnRelu<T> stem_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
  Linear<T> head_;
};

}  // namespace medusa
