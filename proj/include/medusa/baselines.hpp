#pragma once

#include "medusa/layers.hpp"

namespace medusa {

/// Squeeze-excite channel gate: global average pool, dense -> relu ->
/// dense -> sigmoid, then scale each channel of the input by its gate.
template <typename T>
class SEHead {
 public:
  SEHead() = default;
  SEHead(int index, int channels, int reduction, Rng& rng);

  Tensor<T> forward(const Tensor<T>& f_j) const;
  /// The N x C x 1 x 1 gates forward() multiplies by.
  Tensor<T> gates(const Tensor<T>& f_j) const;

  int index() const { return index_; }
  int channels() const { return squeeze_.in_features(); }
  int bottleneck() const { return squeeze_.out_features(); }
  Linear<T>& squeeze() { return squeeze_; }
  Linear<T>& excite() { return excite_; }
  void collect(StateRefs<T>& refs) {
    squeeze_.collect(refs);
    excite_.collect(refs);
  }

 private:
  int index_ = 0;
  Linear<T> squeeze_;
  Linear<T> excite_;
};

}  // namespace medusa
