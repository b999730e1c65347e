#pragma once

#include <cstdint>
#include <vector>

#include "medusa/layers.hpp"

namespace medusa {

struct GlobalConfig {
  int depth = 3;
  int base_channels = 8;
  bool operator==(const GlobalConfig&) const = default;
};

template <typename T>
struct GlobalOutput {
  Tensor<T> a_g;        // pre-sigmoid logits, N x 1 x H x W
  Tensor<T> sigma_a_g;  // sigmoid(a_g)
  Tensor<T> latent;     // encoder bottleneck z
};

/// Encoder-decoder producing one full-resolution attention field from the
/// input image. Each encoder level is two conv-bn-relu layers followed by
/// 2x2 max pooling; each decoder level upsamples bilinearly, applies a
/// conv-bn-relu, concatenates the matching encoder skip and applies two
/// more conv-bn-relu layers. A 1x1 conv yields the single-channel logits.
template <typename T>
class GlobalAttention {
 public:
  static GlobalAttention build(int in_channels, int height, int width, const GlobalConfig& config, std::uint64_t seed);

  GlobalOutput<T> forward(const Tensor<T>& x, Mode mode);

  const GlobalConfig& config() const { return config_; }
  Shape input_shape(int batch) const { return Shape{batch, in_channels_, height_, width_}; }
  void collect(StateRefs<T>& refs);

 private:
  struct DoubleConv {
    ConvBnRelu<T> first, second;
    Tensor<T> operator()(const Tensor<T>& x, Mode mode) { return second(first(x, mode), mode); }
  };
  struct UpLevel {
    ConvBnRelu<T> up;
    DoubleConv fuse;
  };

  GlobalConfig config_;
  int in_channels_ = 1, height_ = 0, width_ = 0;
  std::vector<DoubleConv> down_;
  DoubleConv bottleneck_;
  std::vector<UpLevel> up_;  // up_[l] restores level l
  Conv2d<T> out_;
};

template <typename T>
struct HeadOutput {
  Tensor<T> a_prime;  // sigma(A_G) resized to the stage extents
  Tensor<T> a_bar;    // stage attention map in (0, 1)
};

/// Scale-specific head: resize the shared sigmoid map to the stage
/// resolution, concatenate it in front of F_j and apply one 3x3 conv with
/// c_j filters followed by a sigmoid.
template <typename T>
class ScaleHead {
 public:
  ScaleHead() = default;
  ScaleHead(int index, int channels, Rng& rng);

  HeadOutput<T> forward(const Tensor<T>& sigma_a_g, const Tensor<T>& f_j) const;

  int index() const { return index_; }
  int channels() const { return conv_.out_channels(); }
  Conv2d<T>& conv() { return conv_; }
  void collect(StateRefs<T>& refs) { conv_.collect(refs); }

 private:
  int index_ = 0;
  Conv2d<T> conv_;
};

/// F_bar = A_bar * F + F.
template <typename T>
Tensor<T> apply_attention(const Tensor<T>& f_j, const Tensor<T>& a_bar_j);

template <typename T>
struct AttentionOutputs {
  Tensor<T> a_g;
  Tensor<T> sigma_a_g;
  std::vector<Tensor<T>> a_prime;
  std::vector<Tensor<T>> a_bar;
  std::vector<Tensor<T>> f_bar;
};

}  // namespace medusa
