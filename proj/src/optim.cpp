#include "pactune/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pactune/errors.hpp"

namespace pactune {

bool adam_step(AdamState& state, std::span<double> params, std::span<const double> grads, double lr,
               bool apply_weight_decay, const AdamHyper& hyper) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  if (!std::all_of(grads.begin(), grads.end(), [](double g) { return std::isfinite(g); })) return false;
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const double decay = apply_weight_decay ? 1.0 - lr * hyper.weight_decay : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    if (apply_weight_decay) params[i] *= decay;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
  return true;
}

double schedule_value(const LrSchedule& sched, std::size_t update_index) {
  if (const auto* c = std::get_if<ConstantLr>(&sched)) return c->value;
  const auto& s = std::get<StepDecayLr>(sched);
  const double steps = static_cast<double>(update_index / s.every);
  return std::max(s.floor, s.init * std::pow(s.factor, steps));
}

void validate(const LrSchedule& sched) {
  if (const auto* c = std::get_if<ConstantLr>(&sched)) {
    if (!(c->value >= 0.0)) throw ConfigError("learning rate must be non-negative");
    return;
  }
  const auto& s = std::get<StepDecayLr>(sched);
  if (!(s.init > 0.0) || !(s.floor > 0.0) || s.floor > s.init)
    throw ConfigError("step-decay schedule needs 0 < floor <= init");
  if (!(s.factor > 0.0 && s.factor <= 1.0)) throw ConfigError("step-decay factor must be in (0, 1]");
  if (s.every == 0) throw ConfigError("step-decay interval must be positive");
}

}  // namespace pactune
