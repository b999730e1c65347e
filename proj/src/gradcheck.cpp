#include "medusa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace medusa {
namespace {

constexpr int kShrinks = 3;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

void require_scalar(const Tensor<double>& y) {
  if (y.numel() != 1) throw DimensionError("grad_check needs a scalar-valued function, got " + y.shape().str());
}

struct Probe {
  double value;
  std::uint64_t digest;
};

template <typename F>
Probe probe(const F& eval) {
  DecisionTrace trace;
  const double v = eval().item();
  return {v, trace.digest()};
}

// Checks one coordinate whose current value is `slot`.
template <typename F>
void check_coordinate(double& slot, double analytic, std::uint64_t base, double step, const F& eval,
                      GradCheckReport& report, const std::string& name, std::size_t index) {
  const double saved = slot;
  double h = step;
  ++report.coordinates;
  for (int attempt = 0; attempt <= kShrinks; ++attempt, h /= 10.0) {
    slot = saved + h;
    const Probe up = probe(eval);
    slot = saved - h;
    const Probe down = probe(eval);
    slot = saved;
    const double err = relative_error(analytic, (up.value - down.value) / (2.0 * h));
    if (attempt == 0) report.raw_max_error = std::max(report.raw_max_error, err);
    if (up.digest == base && down.digest == base) {
      if (err > report.max_error) {
        report.max_error = err;
        report.worst_parameter = name;
        report.worst_index = index;
      }
      return;
    }
    if (attempt == 0) ++report.kinked;
  }
  ++report.unresolved;
}

}  // namespace

GradCheckReport grad_check_report(const ScalarFn& f, const Tensor<double>& x, double step) {
  Tensor<double> probe_x = x.clone();
  probe_x.set_requires_grad(true);
  std::vector<double> analytic(probe_x.numel(), 0.0);
  std::uint64_t base = 0;
  {
    Tape<double> tape;
    DecisionTrace trace;
    Tensor<double> y = f(probe_x);
    base = trace.digest();
    require_scalar(y);
    if (y.requires_grad()) {
      tape.backward(y);
      if (probe_x.has_grad()) std::copy(probe_x.grad().begin(), probe_x.grad().end(), analytic.begin());
    }
  }
  NoGradGuard<double> no_grad;
  GradCheckReport report;
  auto values = probe_x.mutable_data();
  auto eval = [&] { return f(probe_x); };
  for (std::size_t i = 0; i < values.size(); ++i) {
    check_coordinate(values[i], analytic[i], base, step, eval, report, "x", i);
  }
  return report;
}

double grad_check(const ScalarFn& f, const Tensor<double>& x, double step) {
  return grad_check_report(f, x, step).max_error;
}

GradCheckReport grad_check_parameters(const std::function<Tensor<double>()>& loss,
                                      std::span<Parameter<double>* const> params, double step) {
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) p->value.zero_grad();
  std::uint64_t base = 0;
  {
    Tape<double> tape;
    DecisionTrace trace;
    Tensor<double> y = loss();
    base = trace.digest();
    require_scalar(y);
    tape.backward(y);
  }
  for (auto* p : params) {
    std::vector<double> g(p->value.numel(), 0.0);
    if (p->value.has_grad()) std::copy(p->value.grad().begin(), p->value.grad().end(), g.begin());
    analytic.push_back(std::move(g));
    p->value.zero_grad();
  }
  NoGradGuard<double> no_grad;
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k]->value.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      check_coordinate(values[i], analytic[k][i], base, step, loss, report, params[k]->name, i);
    }
  }
  return report;
}

}  // namespace medusa
