#include "medusa/optim.hpp"

#include <cmath>

namespace medusa {

template <typename T>
void AdamState<T>::step(std::span<Parameter<T>* const> params) {
  for (auto* p : params) {
    if (!p->frozen && !p->value.has_grad()) {
      throw StateError("parameter '" + p->name + "' has no gradient for the optimizer step");
    }
  }
  ++t_;
  for (auto* p : params) {
    if (p->frozen) continue;
    auto& st = moments_[p->name];
    const std::size_t n = p->value.numel();
    if (st.m.size() != n) {
      st.m.assign(n, T(0));
      st.v.assign(n, T(0));
    }
    ++st.steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.steps));
    auto values = p->value.mutable_data();
    const auto grad = p->value.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad[i];
      const double m = beta1 * st.m[i] + (1.0 - beta1) * g;
      const double v = beta2 * st.v[i] + (1.0 - beta2) * g * g;
      st.m[i] = static_cast<T>(m);
      st.v[i] = static_cast<T>(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + eps);
      values[i] = static_cast<T>(values[i] - update);
    }
  }
}

template class AdamState<float>;
template class AdamState<double>;

}  // namespace medusa
