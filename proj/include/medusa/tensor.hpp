#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "medusa/error.hpp"

namespace medusa {

/// Extents of a rank-4 tensor in batch x channels x height x width order.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::size_t index(int in, int ic, int ih, int iw) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw;
  }
  bool operator==(const Shape&) const = default;

  /// Throws DimensionError unless every extent is >= 1.
  void validate() const;
  std::string str() const;
};

/// Storage aligned to 64 bytes. Vectorized reductions peel a head that
/// depends on the address, so a fixed alignment keeps results bit-identical
/// from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorNode {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool recorded = false;  // produced by an operation on a tape
};

/// Dense rank-4 array with shared storage. Copies alias the same node, like
/// a handle; use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, T value) { return Tensor(shape, value); }
  static Tensor scalar(T value) { return Tensor(Shape{}, value); }

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Writable view. Only meant for leaves (parameters, inputs) before they
  /// enter a tape.
  std::span<T> mutable_data() { return node_->data; }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(int n, int c, int h, int w) const { return node_->data[shape().index(n, c, h, w)]; }
  /// Value of a 1x1x1x1 tensor.
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const;
  /// Same values, no gradient tracking, independent storage.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Adds `values` into the node's gradient, allocating it on first use.
template <typename T>
void accumulate_grad(TensorNode<T>& node, std::span<const T> values);

/// Records differentiable operations in execution order and replays their
/// backward rules in reverse. Constructing a tape makes it the active tape
/// of the calling thread until it is destroyed; operations executed while
/// no tape is active are not recorded.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const T> grad_output)>;

  struct Entry {
    std::string op;
    std::vector<std::shared_ptr<TensorNode<T>>> inputs;
    std::shared_ptr<TensorNode<T>> output;
    BackwardFn backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  /// Installs `tape` as the active tape and returns the previous one.
  static Tape* exchange_active(Tape* tape);

  /// Registers `output` as produced from `inputs`. The output is marked as
  /// requiring a gradient.
  void record(std::string op, const Tensor<T>& output, std::vector<Tensor<T>> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse
  /// order. The tape is spent afterwards; reset() before reuse.
  void backward(const Tensor<T>& loss);

  void reset();
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
  bool spent_ = false;
};

/// Suspends recording on the calling thread for its lifetime.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape<T>::exchange_active(nullptr)) {}
  ~NoGradGuard() { Tape<T>::exchange_active(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>* previous_;
};

/// True when an operation on `inputs` must be recorded.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Throws NumericError if any element is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op);

}  // namespace medusa
