#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pactune/errors.hpp"
#include "pactune/experiment.hpp"
#include "pactune/gradcheck.hpp"
#include "pactune/pacbayes.hpp"
#include "support.hpp"

using namespace pactune;

namespace {

double kl_1d(double var_q, double var_p, double dmu) {
  const double mu_q[] = {dmu}, vq[] = {var_q}, mu_p[] = {0.0};
  return kl_diag_vs_isotropic(mu_q, vq, mu_p, var_p);
}

BoundConfig bound(double delta, std::size_t m) {
  BoundConfig c;
  c.delta = delta;
  c.m = m;
  return c;
}

MlpClassifier small_model(std::uint64_t seed, bool freeze = false) {
  Rng rng(seed);
  MlpClassifier m({3, 5, 4, 3});
  m.init_weights(rng);
  m.set_freeze_first_layer(freeze);
  return m;
}

}  // namespace

TEST_CASE("KL of identical distributions is exactly zero") {
  const double mu[] = {0.3, -1.2, 4.0}, var[] = {0.7, 0.7, 0.7};
  CHECK(kl_diag_vs_isotropic(mu, var, mu, 0.7) == 0.0);
}

TEST_CASE("KL closed-form examples") {
  CHECK(kl_1d(2.0, 1.0, 1.0) == doctest::Approx(1.0 - 0.5 * std::numbers::ln2).epsilon(1e-15));
  CHECK(kl_1d(2.0, 1.0, 1.0) == doctest::Approx(0.65343).epsilon(1e-5));
  const double mu_q[] = {3.0, 4.0}, var_q[] = {1.0, 1.0}, mu_p[] = {0.0, 0.0};
  CHECK(kl_diag_vs_isotropic(mu_q, var_q, mu_p, 1.0) == doctest::Approx(12.5).epsilon(1e-15));
}

TEST_CASE("KL rejects non-positive variances and mismatched lengths") {
  const double mu[] = {0.0}, bad[] = {0.0}, ok[] = {1.0}, mu2[] = {0.0, 0.0};
  CHECK_THROWS_AS(kl_diag_vs_isotropic(mu, bad, mu, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(kl_diag_vs_isotropic(mu, ok, mu, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(kl_diag_vs_isotropic(mu, ok, mu2, 1.0), std::invalid_argument);
}

TEST_CASE("KL is non-negative and zero only at identical distributions") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    std::vector<double> mu_q(d), var_q(d), mu_p(d);
    for (std::size_t j = 0; j < d; ++j) {
      mu_q[j] = rng.normal();
      mu_p[j] = rng.normal();
      var_q[j] = std::exp(rng.uniform(-4.0, 2.0));
    }
    const double var_p = std::exp(rng.uniform(-4.0, 2.0));
    CHECK(kl_diag_vs_isotropic(mu_q, var_q, mu_p, var_p) > 0.0);
  }
}

TEST_CASE("KL toward the prior decreases as the posterior variance approaches it") {
  const double lambda = 0.3;
  std::vector<double> mu(4, 0.5);
  double prev = INFINITY;
  for (int i = 1; i <= 100; ++i) {
    const double c = i / 100.0;
    std::vector<double> var(4, c * lambda);
    const double kl = kl_diag_vs_isotropic(mu, var, mu, lambda);
    CHECK(kl < prev);
    prev = kl;
  }
  CHECK(prev == doctest::Approx(0.0));
}

TEST_CASE("l_pac examples") {
  // delta = 1/e makes ln(1/delta) = 1.
  CHECK(l_pac(0.0, bound(std::exp(-1.0), 1), 1.0, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
  const double delta = 0.05;
  const double kl = 3.0 - std::log(1.0 / delta);
  CHECK(l_pac(kl, bound(delta, 100), 0.5, 1.0) == doctest::Approx(0.56).epsilon(1e-14));
}

TEST_CASE("l_pac rejects non-positive gamma and K") {
  CHECK_THROWS_AS(l_pac(0.0, bound(0.05, 1), 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(l_pac(0.0, bound(0.05, 1), 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("l_pac increases strictly with KL") {
  double prev = -1.0;
  for (double kl = 0.0; kl < 50.0; kl += 0.5) {
    const double v = l_pac(kl, bound(0.05, 40), 2.0, 0.3);
    CHECK(v > prev);
    CHECK(v >= 0.0);
    prev = v;
  }
}

TEST_CASE("optimal gamma examples") {
  CHECK(optimal_gamma(3.0, 100, 1.0, 0.01, 10.0) == doctest::Approx(std::sqrt(0.03)).epsilon(1e-15));
  CHECK(optimal_gamma(3.0, 100, 1.0, 0.5, 10.0) == 0.5);
  CHECK(optimal_gamma(0.0, 100, 1.0, 0.25, 10.0) == 0.25);
  CHECK_THROWS_AS(optimal_gamma(3.0, 100, 1.0, 2.0, 1.0), std::invalid_argument);
}

TEST_CASE("optimal gamma beats a fine grid on the example") {
  const BoundConfig c = bound(0.05, 100);
  const double kl = 3.0 - std::log(1.0 / c.delta);
  const double best = l_pac(kl, c, optimal_gamma(3.0, 100, 1.0, 0.001, 10.0), 1.0);
  for (int i = 1; i <= 10000; ++i) CHECK(best <= l_pac(kl, c, i * 0.001, 1.0) + 1e-15);
}

TEST_CASE("estimate_K modes") {
  const double none[] = {0.0};
  CHECK(estimate_K(none, FixedK{5.0}) == 5.0);
  std::vector<double> constant(500, 0.7);
  CHECK(estimate_K(constant, RunningK{}) == KEstimator::kFloor);
  std::vector<double> alternating;
  for (int i = 0; i < 5000; ++i) alternating.push_back(i % 2 ? 2.0 : 0.0);
  CHECK(estimate_K(alternating, RunningK{}) == doctest::Approx(1.0).epsilon(0.02));
  CHECK_THROWS_AS(estimate_K({}, RunningK{}), std::invalid_argument);
}

TEST_CASE("streaming K estimator agrees with the batch form") {
  Rng rng(3);
  KEstimator est(0.95);
  std::vector<double> history;
  for (int i = 0; i < 300; ++i) {
    history.push_back(rng.uniform(0.0, 3.0));
    est.observe(history.back());
    CHECK(est.value() == estimate_K(history, RunningK{0.95}));
  }
  CHECK(est.count() == 300);
}

TEST_CASE("perturb_params with vanishing noise returns the parameters") {
  const std::vector<double> params = {1.0, -2.5, 1e-3};
  const std::vector<double> p(3, -40.0);
  Rng rng(1);
  const auto [out, tau] = perturb_params(params, p, rng);
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(out[j] - params[j]) < 1e-15);
  CHECK(tau.size() == 3);
}

TEST_CASE("perturb_params is reproducible and uses exp(p) as the scale") {
  const std::vector<double> params = {0.5, -0.5};
  const std::vector<double> p = {std::log(0.1), std::log(2.0)};
  Rng a(9), b(9);
  const auto ra = perturb_params(params, p, a);
  const auto rb = perturb_params(params, p, b);
  CHECK(ra == rb);
  CHECK(ra.first[0] == doctest::Approx(0.5 + 0.1 * ra.second[0]));
  CHECK(ra.first[1] == doctest::Approx(-0.5 + 2.0 * ra.second[1]));
}

TEST_CASE("perturbations are centered on the parameters") {
  const std::vector<double> params = {1.0, -3.0, 0.25};
  const std::vector<double> p = {std::log(0.5), 0.0, std::log(2.0)};
  const int n = 100000;
  std::vector<double> mean(3, 0.0);
  Rng rng(21);
  for (int i = 0; i < n; ++i) {
    const auto [out, tau] = perturb_params(params, p, rng);
    for (std::size_t j = 0; j < 3; ++j) mean[j] += out[j] / n;
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(mean[j] - params[j]) < 3 * std::exp(p[j]) / std::sqrt(n));
}

TEST_CASE("noise initialization follows the log-magnitude rule") {
  MlpClassifier m = small_model(2, true);
  const NoiseState n = NoiseState::initialize(m);
  CHECK(n.p_backbone.size() == trainable_count(m, ParamGroup::Backbone));
  CHECK(n.p_head.size() == trainable_count(m, ParamGroup::Head));
  const auto wb = flatten_trainable(m, ParamGroup::Backbone);
  const auto wh = flatten_trainable(m, ParamGroup::Head);
  CHECK(n.anchor_backbone == wb);
  CHECK(n.anchor_head == wh);
  for (std::size_t j = 0; j < wb.size(); ++j) CHECK(n.p_backbone[j] == std::log(std::max(std::abs(wb[j]), 1e-4)));
  for (std::size_t j = 0; j < wh.size(); ++j)
    CHECK(n.p_head[j] == doctest::Approx(std::log(std::max(std::abs(wh[j]), 1e-4)) + std::log(10.0)));
  CHECK(std::exp(n.log_lambda) == doctest::Approx(n.mean_variance(ParamGroup::Backbone)));
  CHECK(std::exp(n.log_beta) == doctest::Approx(n.mean_variance(ParamGroup::Head)));
}

TEST_CASE("noise file round trip keeps every value") {
  NoiseState n = NoiseState::initialize(small_model(3));
  n.log_lambda = -1.0 / 3.0;
  const NoiseFile f{n, "anchor.json"};
  const NoiseFile g = noise_from_string(noise_to_string(f));
  CHECK(g.noise.p_backbone == n.p_backbone);
  CHECK(g.noise.p_head == n.p_head);
  CHECK(g.noise.log_lambda == n.log_lambda);
  CHECK(g.noise.log_beta == n.log_beta);
  CHECK(g.anchor_checkpoint == "anchor.json");
  CHECK(noise_to_string(g) == noise_to_string(f));
  CHECK_THROWS_AS(noise_from_string("{\"version\": 2}"), std::invalid_argument);
  CHECK_THROWS_AS(load_noise("/nonexistent/noise.json"), IoError);
}

TEST_CASE("bound config validation") {
  CHECK_NOTHROW(validate(bound(0.05, 1)));
  CHECK_THROWS_AS(validate(bound(0.0, 1)), ConfigError);
  CHECK_THROWS_AS(validate(bound(1.0, 1)), ConfigError);
  CHECK_THROWS_AS(validate(bound(0.05, 0)), ConfigError);
  BoundConfig c = bound(0.05, 1);
  c.gamma = AutoGamma{2.0, 1.0};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c.gamma = FixedGamma{0.0};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = bound(0.05, 1);
  c.k = FixedK{0.0};
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("objective terms add up and KL terms are non-negative") {
  Rng rng(4);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    MlpClassifier m = small_model(seed, seed % 2 == 0);
    NoiseState n = NoiseState::initialize(m);
    std::vector<double> w = flatten_trainable(m);
    for (double& v : w) v += rng.uniform(-0.5, 0.5);
    assign_trainable(m, w);
    const Dataset batch = testing::random_batch(9, 3, 3, rng);
    BoundConfig c = bound(0.05, 50);
    if (seed % 3 == 0) c.gamma = AutoGamma{0.1, 5.0};
    const BoundTerms t = objective_J(m, n, batch, c, 0.4, rng);
    CHECK(t.j_total == t.l_train + t.l_pac);
    CHECK(t.l_pac >= 0.0);
    CHECK(t.kl_backbone >= 0.0);
    CHECK(t.kl_head >= 0.0);
    CHECK(t.l_pac == doctest::Approx(l_pac(t.kl_backbone + t.kl_head, c, t.gamma_used, t.k_used)).epsilon(1e-13));
  }
}

TEST_CASE("objective in the noise-free limit") {
  // p = -40 at the anchors with unit priors: L_train is the clean loss, and
  // each coordinate contributes 0.5 (e^-80 - 1 + 80) to the KL.
  MlpClassifier m = small_model(6);
  NoiseState n = NoiseState::uniform(m, -40.0);
  n.log_lambda = 0.0;
  n.log_beta = 0.0;
  Rng rng(2);
  const Dataset batch = testing::random_batch(12, 3, 3, rng);
  const BoundTerms t = objective_J(m, n, batch, bound(0.05, 12), 1.0, rng);
  CHECK(std::abs(t.l_train - loss_and_grad(m, batch, nullptr)) < 1e-12);
  const double per_coord = 0.5 * (std::exp(-80.0) - 1.0 + 80.0);
  CHECK(t.kl_backbone == doctest::Approx(per_coord * n.p_backbone.size()).epsilon(1e-13));
  CHECK(t.kl_head == doctest::Approx(per_coord * n.p_head.size()).epsilon(1e-13));
}

TEST_CASE("objective gradient with respect to p matches finite differences") {
  MlpClassifier m = small_model(8, true);
  const NoiseState n0 = NoiseState::initialize(m);
  Rng rng(8);
  const Dataset batch = testing::random_batch(10, 3, 3, rng);
  const BoundConfig c = bound(0.05, 30);
  std::vector<double> x = n0.p_backbone;
  x.insert(x.end(), n0.p_head.begin(), n0.p_head.end());
  auto f = [&](std::span<const double> v, std::vector<double>* g) {
    NoiseState n = n0;
    std::copy_n(v.begin(), n.p_backbone.size(), n.p_backbone.begin());
    std::copy(v.begin() + n.p_backbone.size(), v.end(), n.p_head.begin());
    Rng draw(5);
    ObjectiveGradients og;
    const double j = objective_J(m, n, batch, c, 0.6, draw, g ? &og : nullptr).j_total;
    if (g) {
      *g = og.p_backbone;
      g->insert(g->end(), og.p_head.begin(), og.p_head.end());
    }
    return j;
  };
  CHECK(finite_diff_check(f, x).max_rel_error < 1e-3);
}

TEST_CASE("KL gradient pulls weights toward the anchors") {
  MlpClassifier m = small_model(10, true);
  NoiseState n = NoiseState::initialize(m);
  n.log_lambda = std::log(0.2);
  n.log_beta = std::log(0.7);
  Rng rng(10);
  std::vector<double> w = flatten_trainable(m);
  for (double& v : w) v += rng.uniform(-1.0, 1.0);
  assign_trainable(m, w);
  const Dataset batch = testing::random_batch(10, 3, 3, rng);
  BoundConfig c = bound(0.05, 25);
  c.gamma = FixedGamma{3.0};
  ObjectiveGradients full, loss_only;
  Rng d1(4), d2(4);
  objective_J(m, n, batch, c, 0.5, d1, &full, 1.0);
  objective_J(m, n, batch, c, 0.5, d2, &loss_only, 0.0);
  const std::size_t nb = n.anchor_backbone.size();
  for (std::size_t j = 0; j < w.size(); ++j) {
    const bool head = j >= nb;
    const double anchor = head ? n.anchor_head[j - nb] : n.anchor_backbone[j];
    const double prior = head ? 0.7 : 0.2;
    const double expected = (w[j] - anchor) / (3.0 * 25.0 * prior);
    CHECK(full.weights[j] - loss_only.weights[j] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("pac weight zero leaves the reported bound unchanged") {
  MlpClassifier m = small_model(12);
  const NoiseState n = NoiseState::initialize(m);
  Rng rng(1);
  const Dataset batch = testing::random_batch(8, 3, 3, rng);
  Rng d1(3), d2(3);
  ObjectiveGradients g;
  const BoundTerms a = objective_J(m, n, batch, bound(0.05, 8), 0.5, d1, &g, 1.0);
  const BoundTerms b = objective_J(m, n, batch, bound(0.05, 8), 0.5, d2, &g, 0.0);
  CHECK(a.j_total == b.j_total);
  CHECK(g.log_lambda == 0.0);
  CHECK(g.log_beta == 0.0);
}

TEST_CASE("expected training loss grows with the noise scale") {
  TaskConfig tc;
  tc.source_n = 600;
  const TaskData data = load_task(tc);
  PretrainConfig pc;
  pc.hidden = {16};
  pc.epochs = 10;
  const MlpClassifier model = pretrain(data.source, pc);
  std::vector<std::size_t> rows(64);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Dataset batch = data.source.subset(rows);
  const NoiseState noise = NoiseState::initialize(model);
  std::vector<double> p = noise.p_backbone;
  p.insert(p.end(), noise.p_head.begin(), noise.p_head.end());
  const std::vector<double> w = flatten_trainable(model);

  std::vector<double> means;
  for (double scale : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    std::vector<double> ps = p;
    for (double& v : ps) v = scale == 0.0 ? -745.0 : v + std::log(scale);
    Rng rng(123);
    double sum = 0.0;
    for (int draw = 0; draw < 200; ++draw) {
      MlpClassifier m = model;
      assign_trainable(m, perturb_params(w, ps, rng).first);
      sum += loss_and_grad(m, batch, nullptr);
    }
    means.push_back(sum / 200.0);
  }
  int violations = 0;
  for (std::size_t i = 1; i < means.size(); ++i) violations += means[i] < means[i - 1];
  CHECK(violations <= 1);
  CHECK(means.back() > means.front());
}

TEST_CASE("generic bound diagnostic") {
  CHECK(generic_bound(0.2, 3.0, 0.05, 100) ==
        doctest::Approx(0.2 + std::sqrt((std::log(20.0) + 3.0) / 200.0)).epsilon(1e-15));
}
