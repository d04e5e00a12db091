#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace pactune {

/// Scalar function of a flat parameter vector. When `grad` is non-null the
/// callee fills it with the analytic gradient.
using ValueGradFn = std::function<double(std::span<const double> x, std::vector<double>* grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compares the analytic gradient of f at x against central differences,
/// error_i = |analytic_i - fd_i| / max(1, |analytic_i|).
/// Throws NumericError naming the coordinate if f is non-finite at x +/- h e_i.
GradCheckResult finite_diff_check(const ValueGradFn& f, std::span<const double> x, double h = 1e-5);

}  // namespace pactune
