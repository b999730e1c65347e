#pragma once

#include <cstdint>
#include <span>

#include "medusa/tensor.hpp"

namespace medusa {

enum class Padding { same, valid };
enum class Activation { sigmoid, relu };
enum class PoolKind { max, avg, global_avg };
enum class CombineMode { mul, add, concat_channels };
enum class Mode { train, eval };

/// Fingerprint of the branch decisions (relu signs, max-pool winners) taken
/// by operations on the calling thread while the trace is alive. Two
/// evaluations with equal digests followed the same piecewise-smooth
/// branch; finite differences use it to detect kinks inside the stencil.
class DecisionTrace {
 public:
  DecisionTrace();
  ~DecisionTrace();
  DecisionTrace(const DecisionTrace&) = delete;
  DecisionTrace& operator=(const DecisionTrace&) = delete;

  static DecisionTrace* active();
  void mix(std::uint64_t value);
  std::uint64_t digest() const { return digest_; }

 private:
  DecisionTrace* previous_;
  std::uint64_t digest_ = 0x9e3779b97f4a7c15ULL;
};

/// 2-D cross-correlation. kernel is Cout x Cin x k x k, bias is 1 x Cout x 1 x 1.
/// Same padding pads k/2 on every side and needs an odd k.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride = 1,
                 Padding padding = Padding::same);

/// Bilinear resampling with half-pixel centers (no corner alignment).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  return activation(input, Activation::sigmoid);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  return activation(input, Activation::relu);
}

/// Running statistics of one batch-norm layer, stored as 1 x C x 1 x 1.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;
  double momentum = 0.1;
  double eps = 1e-8;

  explicit BatchNormState(int channels = 1)
      : running_mean(Shape{1, channels, 1, 1}, T(0)), running_var(Shape{1, channels, 1, 1}, T(1)) {}
};

/// Train mode normalizes with batch statistics and folds them into `state`;
/// eval mode uses the running statistics only.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                      Mode mode);

/// Pooling without padding. `k` and `stride` are ignored for global_avg.
/// Max pooling routes the gradient to the first maximal element in row-major
/// order.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, int k = 2, int stride = 2);

/// Affine map of the flattened per-sample features. weight is 1 x 1 x D x K,
/// bias 1 x 1 x 1 x K; the result is N x K x 1 x 1.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

/// Elementwise product / sum with broadcasting over extents equal to 1, or
/// channel concatenation in argument order.
template <typename T>
Tensor<T> combine(const Tensor<T>& a, const Tensor<T>& b, CombineMode mode);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return combine(a, b, CombineMode::add);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return combine(a, b, CombineMode::mul);
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return combine(a, b, CombineMode::concat_channels);
}

/// Sum of all elements as a 1x1x1x1 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

/// Mean softmax cross-entropy over the batch. `logits` holds N rows of K
/// values (any C*H*W = K layout); labels are class indices.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Mean binary cross-entropy over every element, computed from logits.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target);

}  // namespace medusa
