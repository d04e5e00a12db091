#include <doctest.h>

#include <cmath>
#include <limits>

#include "pactune/errors.hpp"
#include "pactune/optim.hpp"

using namespace pactune;

namespace {

AdamHyper no_decay() {
  AdamHyper h;
  h.weight_decay = 0.0;
  return h;
}

}  // namespace

TEST_CASE("first Adam step with a unit gradient") {
  AdamState s;
  double w[] = {0.0};
  const double g[] = {1.0};
  REQUIRE(adam_step(s, w, g, 0.1, false));
  // m_hat = 1 and v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  CHECK(w[0] == doctest::Approx(-0.1 / (1.0 + 1e-3)).epsilon(1e-15));
  CHECK(w[0] == doctest::Approx(-0.0999).epsilon(1e-3));
  CHECK(s.t == 1);
}

TEST_CASE("Adam matches a hand-rolled reference over many steps") {
  AdamState s;
  std::vector<double> w = {0.5, -1.0};
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, -1.0};
  const AdamHyper h;
  for (int t = 1; t <= 25; ++t) {
    const std::vector<double> g = {std::sin(t * 0.7), 0.1 * t - 1.0};
    REQUIRE(adam_step(s, w, g, 0.05, true, h));
    for (int i = 0; i < 2; ++i) {
      m[i] = h.beta1 * m[i] + (1 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1 - h.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(h.beta1, t));
      const double vh = v[i] / (1 - std::pow(h.beta2, t));
      ref[i] *= 1 - 0.05 * h.weight_decay;
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + h.eps);
    }
    CHECK(s.t == static_cast<std::size_t>(t));
  }
  CHECK(w[0] == doctest::Approx(ref[0]).epsilon(1e-13));
  CHECK(w[1] == doctest::Approx(ref[1]).epsilon(1e-13));
  CHECK(s.m.size() == 2);
  CHECK(s.v.size() == 2);
}

TEST_CASE("persistent zero gradient without decay leaves parameters alone") {
  AdamState s;
  double w[] = {1.5, -2.0};
  const double g[] = {0.0, 0.0};
  for (int i = 0; i < 100; ++i) adam_step(s, w, g, 0.1, false);
  CHECK(w[0] == 1.5);
  CHECK(w[1] == -2.0);
}

TEST_CASE("weight decay only acts when flagged") {
  AdamState a, b;
  double wa[] = {2.0}, wb[] = {2.0};
  const double g[] = {0.0};
  adam_step(a, wa, g, 0.1, true);
  adam_step(b, wb, g, 0.1, false);
  CHECK(wa[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  CHECK(wb[0] == 2.0);
}

TEST_CASE("updates scale linearly with the learning rate") {
  AdamState a, b;
  double wa[] = {0.0, 0.0}, wb[] = {0.0, 0.0};
  const double g[] = {0.3, -2.0};
  adam_step(a, wa, g, 0.01, false, no_decay());
  adam_step(b, wb, g, 0.04, false, no_decay());
  CHECK(wb[0] == doctest::Approx(4 * wa[0]).epsilon(1e-14));
  CHECK(wb[1] == doctest::Approx(4 * wa[1]).epsilon(1e-14));
}

TEST_CASE("non-finite gradients skip the step") {
  AdamState s;
  double w[] = {1.0, 2.0};
  const double g[] = {1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_FALSE(adam_step(s, w, g, 0.1, true));
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 2.0);
  CHECK(s.t == 0);
  const double inf[] = {INFINITY, 0.0};
  CHECK_FALSE(adam_step(s, w, inf, 0.1, true));
}

TEST_CASE("mismatched sizes are rejected") {
  AdamState s;
  double w[] = {1.0, 2.0};
  const double g[] = {1.0};
  CHECK_THROWS(adam_step(s, w, g, 0.1, false));
}

TEST_CASE("step decay schedule values") {
  const LrSchedule s = StepDecayLr{0.5, 0.9, 10, 0.01};
  CHECK(schedule_value(s, 0) == 0.5);
  CHECK(schedule_value(s, 9) == 0.5);
  CHECK(schedule_value(s, 10) == doctest::Approx(0.45).epsilon(1e-15));
  CHECK(schedule_value(s, 25) == doctest::Approx(0.405).epsilon(1e-15));
  CHECK(schedule_value(s, 10000) == 0.01);
}

TEST_CASE("schedules are pure functions of the index") {
  const LrSchedule s = StepDecayLr{};
  const double first = schedule_value(s, 37);
  for (std::size_t i = 0; i < 100; ++i) schedule_value(s, i);
  CHECK(schedule_value(s, 37) == first);
  CHECK(schedule_value(ConstantLr{0.1}, 0) == 0.1);
  CHECK(schedule_value(ConstantLr{0.1}, 123456) == 0.1);
}

TEST_CASE("step decay never rises and stops at the floor") {
  const LrSchedule s = StepDecayLr{0.5, 0.9, 10, 0.01};
  double prev = 1.0;
  for (std::size_t i = 0; i < 2000; ++i) {
    const double v = schedule_value(s, i);
    CHECK(v <= prev);
    CHECK(v >= 0.01);
    prev = v;
  }
}

TEST_CASE("schedule validation") {
  CHECK_NOTHROW(validate(LrSchedule{StepDecayLr{}}));
  CHECK_THROWS_AS(validate(LrSchedule{StepDecayLr{0.5, 0.9, 10, 0.6}}), ConfigError);
  CHECK_THROWS_AS(validate(LrSchedule{StepDecayLr{0.0, 0.9, 10, 0.0}}), ConfigError);
  CHECK_THROWS_AS(validate(LrSchedule{StepDecayLr{0.5, 0.9, 0, 0.01}}), ConfigError);
  CHECK_THROWS_AS(validate(LrSchedule{StepDecayLr{0.5, 1.5, 10, 0.01}}), ConfigError);
  CHECK_THROWS_AS(validate(LrSchedule{ConstantLr{-0.1}}), ConfigError);
}
