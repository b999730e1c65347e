#include "medusa/metrics.hpp"

#include <cstdio>

namespace medusa {

void ConfusionMatrix::add(int label, int prediction) {
  if (label == 1) {
    (prediction == 1 ? tp : fn) += 1;
  } else {
    (prediction == 1 ? fp : tn) += 1;
  }
}

double Percentage::value() const {
  if (!defined()) throw StateError("percentage with zero denominator");
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::int64_t Percentage::tenths() const {
  if (!defined()) throw StateError("percentage with zero denominator");
  // floor(1000 * num / den + 1/2)
  return (2000 * num + den) / (2 * den);
}

std::string Percentage::str() const {
  if (!defined()) return "n/a";
  const std::int64_t t = tenths();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%lld", static_cast<long long>(t / 10), static_cast<long long>(t % 10));
  return buf;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0) throw StateError("negative confusion count");
  if (cm.total() == 0) throw StateError("classification metrics of an empty confusion matrix");
  return {{cm.tp, cm.tp + cm.fn}, {cm.tp, cm.tp + cm.fp}, {cm.tp + cm.tn, cm.total()}};
}

namespace {
template <typename T>
int argmax_impl(std::span<const T> logits) {
  int best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}
}  // namespace

int argmax_class(std::span<const float> logits) { return argmax_impl(logits); }
int argmax_class(std::span<const double> logits) { return argmax_impl(logits); }

}  // namespace medusa
