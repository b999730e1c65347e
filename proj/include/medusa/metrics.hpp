#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medusa/error.hpp"

namespace medusa {

/// Binary confusion counts; the positive class is disease-positive (1).
struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  void add(int label, int prediction);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// A percentage num/den. Undefined (den == 0) ratios carry no value.
struct Percentage {
  std::int64_t num = 0;
  std::int64_t den = 0;

  bool defined() const { return den > 0; }
  /// 100 * num / den; throws StateError when undefined.
  double value() const;
  /// Percentage rounded half-up to one decimal, in tenths (97.5% -> 975),
  /// computed exactly in integers.
  std::int64_t tenths() const;
  /// "97.5", or "n/a" when undefined.
  std::string str() const;
};

struct ClassificationMetrics {
  Percentage sensitivity;  // tp / (tp + fn)
  Percentage ppv;          // tp / (tp + fp)
  Percentage accuracy;     // (tp + tn) / total
};

/// Throws StateError for an empty matrix.
ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

/// Fraction of the attention map's total weight that falls inside the
/// binary mask. Throws DimensionError on size mismatch and StateError when
/// the map carries no mass.
template <typename A, typename M>
double attention_mass(std::span<const A> attention, std::span<const M> mask) {
  if (attention.size() != mask.size()) throw DimensionError("attention map and mask differ in size");
  double inside = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < attention.size(); ++i) {
    total += attention[i];
    if (mask[i] > M(0)) inside += attention[i];
  }
  if (!(total > 0.0)) throw StateError("attention map has zero total mass");
  return inside / total;
}

/// Index of the largest logit; ties go to the lowest class index.
int argmax_class(std::span<const float> logits);
int argmax_class(std::span<const double> logits);

}  // namespace medusa
