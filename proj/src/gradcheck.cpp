#include "pactune/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pactune/tensor.hpp"

namespace pactune {

GradCheckResult finite_diff_check(const ValueGradFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  std::vector<double> analytic;
  const double f0 = f(x, &analytic);
  if (!std::isfinite(f0)) throw NumericError("finite_diff_check: f is non-finite at the base point");
  if (analytic.size() != x.size())
    throw std::invalid_argument("finite_diff_check: gradient has " + std::to_string(analytic.size()) +
                                " entries for " + std::to_string(x.size()) + " coordinates");

  GradCheckResult result;
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe, nullptr);
    probe[i] = x[i] - h;
    const double down = f(probe, nullptr);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_check: f is non-finite around coordinate " + std::to_string(i));
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace pactune
