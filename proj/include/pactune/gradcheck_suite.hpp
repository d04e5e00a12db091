#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pactune {

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0.0;  // worst over all seeds
  double tolerance = 0.0;
  bool passed = false;
};

/// Finite-difference checks of every tape op (shapes up to 8x8, including
/// the broadcast forms) and of the full Stage-1 objective with respect to
/// weights, log-stds and prior log-variances. Seeds are 1..num_seeds.
std::vector<GradCheckRow> run_gradcheck_suite(int num_seeds = 20, double op_tolerance = 1e-4,
                                              double objective_tolerance = 1e-3);

}  // namespace pactune
