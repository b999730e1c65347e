#include "medusa/tensor.hpp"

#include <cmath>
#include <sstream>

namespace medusa {

void Shape::validate() const {
  if (n < 1 || c < 1 || h < 1 || w < 1) {
    throw DimensionError("tensor extents must be >= 1, got " + str());
  }
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << 'x' << c << 'x' << h << 'x' << w << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<TensorNode<T>>()) {
  shape.validate();
  node_->shape = shape;
  node_->data.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
  shape.validate();
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor " + shape.str() + " needs " + std::to_string(shape.numel()) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = shape;
  node_->data.assign(values.begin(), values.end());
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(shape());
  out.node_->data = node_->data;
  out.node_->requires_grad = node_->requires_grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out(shape());
  out.node_->data = node_->data;
  return out;
}

template <typename T>
void accumulate_grad(TensorNode<T>& node, std::span<const T> values) {
  if (node.grad.empty()) {
    node.grad.assign(values.begin(), values.end());
    return;
  }
  for (std::size_t i = 0; i < values.size(); ++i) node.grad[i] += values[i];
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

namespace {
template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}
}  // namespace

template <typename T>
Tape<T>::Tape() : previous_(active_tape<T>()) {
  active_tape<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_tape<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_tape<T>();
}

template <typename T>
Tape<T>* Tape<T>::exchange_active(Tape* tape) {
  Tape* previous = active_tape<T>();
  active_tape<T>() = tape;
  return previous;
}

template <typename T>
void Tape<T>::record(std::string op, const Tensor<T>& output, std::vector<Tensor<T>> inputs, BackwardFn backward) {
  if (spent_) throw StateError("tape already ran backward; reset() before recording again");
  Entry entry;
  entry.op = std::move(op);
  entry.inputs.reserve(inputs.size());
  for (const auto& in : inputs) entry.inputs.push_back(in.node());
  entry.output = output.node();
  entry.output->requires_grad = true;
  entry.output->recorded = true;
  entry.backward = std::move(backward);
  entries_.push_back(std::move(entry));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (spent_) throw StateError("backward already ran on this tape; reset() first");
  if (loss.numel() != 1) throw DimensionError("backward needs a scalar loss, got " + loss.shape().str());
  const auto& root = loss.node();
  bool on_tape = false;
  for (const auto& e : entries_) {
    if (e.output == root) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape || !root->requires_grad) {
    throw StateError("backward on a tensor that was not produced on this tape");
  }
  spent_ = true;
  root->grad.assign(1, T(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.empty()) continue;
    it->backward(out.grad);
    // Intermediate gradients are no longer needed once propagated.
    if (it->output != root) {
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
  }
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  spent_ = false;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void accumulate_grad<float>(TensorNode<float>&, std::span<const float>);
template void accumulate_grad<double>(TensorNode<double>&, std::span<const double>);
template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);

}  // namespace medusa
