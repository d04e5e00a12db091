#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

namespace pactune {

/// AdamW settings used for every parameter group.
struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-3;
  double weight_decay = 0.01;
};

/// Moments for one flat block of parameters.
struct AdamState {
  std::size_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected AdamW update, in place. Decoupled weight decay
/// (params *= 1 - lr * weight_decay) is applied only when `apply_weight_decay`.
/// Returns false and leaves params and state untouched when any gradient is
/// non-finite.
bool adam_step(AdamState& state, std::span<double> params, std::span<const double> grads, double lr,
               bool apply_weight_decay, const AdamHyper& hyper = {});

struct ConstantLr {
  double value = 1e-3;
};

/// init * factor^floor(index / every), never below floor.
struct StepDecayLr {
  double init = 0.5;
  double factor = 0.9;
  std::size_t every = 10;
  double floor = 0.01;
};

using LrSchedule = std::variant<ConstantLr, StepDecayLr>;

double schedule_value(const LrSchedule& sched, std::size_t update_index);
void validate(const LrSchedule& sched);

}  // namespace pactune
