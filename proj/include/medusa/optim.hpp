#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "medusa/layers.hpp"

namespace medusa {

/// Adam with bias correction. Moments and step counts are kept per
/// parameter name, so a parameter that sits frozen for a phase keeps its
/// moments and its own step count untouched.
template <typename T>
class AdamState {
 public:
  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t steps = 0;
  };

  explicit AdamState(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr(lr), beta1(beta1), beta2(beta2), eps(eps) {}

  /// Updates every unfrozen parameter from its accumulated gradient.
  /// Frozen parameters are skipped entirely. Throws StateError if an
  /// unfrozen parameter has no gradient.
  void step(std::span<Parameter<T>* const> params);

  /// Number of step() calls.
  std::int64_t t() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  void set_t(std::int64_t t) { t_ = t; }

  double lr;
  double beta1;
  double beta2;
  double eps;

 private:
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

template <typename T>
void zero_grad(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->value.zero_grad();
}

}  // namespace medusa
