#include "medusa/baselines.hpp"

#include <string>

namespace medusa {

template <typename T>
SEHead<T>::SEHead(int index, int channels, int reduction, Rng& rng) : index_(index) {
  if (reduction < 1 || channels % reduction != 0) {
    throw ConfigError("SE reduction " + std::to_string(reduction) + " does not divide " + std::to_string(channels) +
                      " channels");
  }
  const std::string p = "se.stage" + std::to_string(index + 1);
  squeeze_ = Linear<T>(p + ".squeeze", channels, channels / reduction, rng);
  excite_ = Linear<T>(p + ".excite", channels / reduction, channels, rng);
}

template <typename T>
Tensor<T> SEHead<T>::gates(const Tensor<T>& f_j) const {
  if (f_j.shape().c != channels()) {
    throw DimensionError("SE head " + std::to_string(index_ + 1) + " expects " + std::to_string(channels()) +
                         " channels, got " + f_j.shape().str());
  }
  return sigmoid(excite_(relu(squeeze_(pool2d(f_j, PoolKind::global_avg)))));
}

template <typename T>
Tensor<T> SEHead<T>::forward(const Tensor<T>& f_j) const {
  return mul(f_j, gates(f_j));
}

template class SEHead<float>;
template class SEHead<double>;

}  // namespace medusa
