#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "medusa/layers.hpp"

namespace medusa {

/// Scalar-valued function of one tensor, evaluated in 64-bit.
using ScalarFn = std::function<Tensor<double>(const Tensor<double>&)>;

/// Central-difference comparison of reverse-mode gradients, one coordinate
/// at a time, with error |analytic - numeric| / max(1, |analytic|).
///
/// A stencil x +- step that takes a different relu or max-pool branch than
/// x itself straddles a kink, where central differences do not estimate
/// the derivative. Such a coordinate is counted in `kinked` and re-checked
/// with the step shrunk tenfold, up to three times; if every stencil still
/// crosses a kink it is counted in `unresolved` and left out of max_error.
/// raw_max_error is the plain error at the nominal step, kinks included.
struct GradCheckReport {
  double max_error = 0.0;
  double raw_max_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  std::size_t kinked = 0;
  std::size_t unresolved = 0;
};

/// Throws DimensionError if f is not scalar-valued.
GradCheckReport grad_check_report(const ScalarFn& f, const Tensor<double>& x, double step = 1e-4);

/// max_error of grad_check_report.
double grad_check(const ScalarFn& f, const Tensor<double>& x, double step = 1e-4);

/// Same check for every element of every listed parameter, with `loss`
/// re-evaluated after each perturbation.
GradCheckReport grad_check_parameters(const std::function<Tensor<double>()>& loss,
                                      std::span<Parameter<double>* const> params, double step = 1e-4);

}  // namespace medusa
