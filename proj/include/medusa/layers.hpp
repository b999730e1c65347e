#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "medusa/ops.hpp"
#include "medusa/random.hpp"

namespace medusa {

/// A named trainable tensor. Freezing drops requires_grad, so gradients
/// still flow through the parameter's consumers but never accumulate on it.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) { value.set_requires_grad(true); }

  void set_frozen(bool f) {
    frozen = f;
    value.set_requires_grad(!f);
  }
};

template <typename T>
class BatchNorm;

/// Non-owning view of every parameter and normalization layer of a model
/// component, in a stable order.
template <typename T>
struct StateRefs {
  std::vector<Parameter<T>*> params;
  std::vector<BatchNorm<T>*> norms;
};

template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double std = std::sqrt(2.0 / fan_in);
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.normal() * std);
  return t;
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& prefix, int cin, int cout, int k, int stride, Rng& rng)
      : weight_(prefix + ".weight", he_normal<T>(Shape{cout, cin, k, k}, cin * k * k, rng)),
        bias_(prefix + ".bias", Tensor<T>(Shape{1, cout, 1, 1})),
        stride_(stride) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_.value, bias_.value, stride_, Padding::same); }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& weight() const { return weight_; }
  int in_channels() const { return weight_.value.shape().c; }
  int out_channels() const { return weight_.value.shape().n; }

  void collect(StateRefs<T>& refs) {
    refs.params.push_back(&weight_);
    refs.params.push_back(&bias_);
  }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  int stride_ = 1;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& prefix, int channels)
      : name_(prefix),
        gamma_(prefix + ".gamma", Tensor<T>(Shape{1, channels, 1, 1}, T(1))),
        beta_(prefix + ".beta", Tensor<T>(Shape{1, channels, 1, 1})),
        state_(channels) {}

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    return batchnorm2d(x, gamma_.value, beta_.value, state_, mode);
  }

  const std::string& name() const { return name_; }
  BatchNormState<T>& state() { return state_; }
  const BatchNormState<T>& state() const { return state_; }

  void collect(StateRefs<T>& refs) {
    refs.params.push_back(&gamma_);
    refs.params.push_back(&beta_);
    refs.norms.push_back(this);
  }

 private:
  std::string name_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  BatchNormState<T> state_;
};

/// Fully connected layer; weights uniform in +-1/sqrt(fan_in), zero bias.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& prefix, int in, int out, Rng& rng)
      : weight_(prefix + ".weight", Tensor<T>(Shape{1, 1, in, out})), bias_(prefix + ".bias", Tensor<T>(Shape{1, 1, 1, out})) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (T& v : weight_.value.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return dense(x, weight_.value, bias_.value); }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  int in_features() const { return weight_.value.shape().h; }
  int out_features() const { return weight_.value.shape().w; }

  void collect(StateRefs<T>& refs) {
    refs.params.push_back(&weight_);
    refs.params.push_back(&bias_);
  }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
};

/// conv -> batch norm -> relu
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const std::string& prefix, int cin, int cout, int stride, Rng& rng)
      : conv_(prefix + ".conv", cin, cout, 3, stride, rng), bn_(prefix + ".bn", cout) {}

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) { return relu(bn_(conv_(x), mode)); }

  void collect(StateRefs<T>& refs) {
    conv_.collect(refs);
    bn_.collect(refs);
  }

 private:
  Conv2d<T> conv_;
  BatchNorm<T> bn_;
};

}  // namespace medusa
