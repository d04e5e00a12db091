#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pactune/data.hpp"
#include "pactune/model.hpp"
#include "pactune/rng.hpp"

namespace pactune {

/// Learned noise for PAC-Bayes training.
///
/// Posterior: each trainable weight w_j carries N(w_j, exp(2 p_j)), with
/// separate p arrays for the backbone and the head (flattened in slot
/// order, see flatten_trainable). Prior: N(anchor, lambda I) for the
/// backbone and N(anchor, beta I) for the head, with
/// lambda = exp(log_lambda), beta = exp(log_beta). Anchors are the weights
/// at the start of fine-tuning.
struct NoiseState {
  std::vector<double> p_backbone;
  std::vector<double> p_head;
  double log_lambda = 0.0;
  double log_beta = 0.0;
  std::vector<double> anchor_backbone;
  std::vector<double> anchor_head;

  /// p_j = ln(max(|w_j|, 1e-4)), plus ln(10) on the head so the head starts
  /// noisier than the backbone. Each prior log-variance starts at
  /// ln(mean(exp(2p))) of its group; anchors are the current weights.
  static NoiseState initialize(const MlpClassifier& model);

  /// Every p set to `value`; priors and anchors as in initialize().
  static NoiseState uniform(const MlpClassifier& model, double value);

  std::vector<double> variances(ParamGroup g) const;
  std::vector<double> variances() const;  // backbone then head
  double mean_variance(ParamGroup g) const;
  double mean_variance() const;

  friend bool operator==(const NoiseState&, const NoiseState&) = default;
};

struct NoiseFile {
  static constexpr int kFormatVersion = 1;
  NoiseState noise;  // anchors are not serialized
  std::string anchor_checkpoint;
};

std::string noise_to_string(const NoiseFile& f);
NoiseFile noise_from_string(const std::string& text);
void save_noise(const std::filesystem::path& path, const NoiseFile& f);
NoiseFile load_noise(const std::filesystem::path& path);

struct FixedGamma {
  double value = 10.0;
};
/// Closed-form minimizer of l_pac over [lo, hi], recomputed every step.
struct AutoGamma {
  double lo = 0.5;
  double hi = 10.0;
};
using GammaMode = std::variant<FixedGamma, AutoGamma>;

struct FixedK {
  double value = 1.0;
};
/// Exponential moving estimate of the standard deviation of per-batch
/// training losses.
struct RunningK {
  double ema_decay = 0.99;
};
using KMode = std::variant<FixedK, RunningK>;

struct BoundConfig {
  double delta = 0.05;
  std::size_t m = 1;  // training-set size
  GammaMode gamma = FixedGamma{};
  KMode k = RunningK{};
};

void validate(const BoundConfig& cfg);

struct BoundTerms {
  double l_train = 0.0;
  double kl_backbone = 0.0;
  double kl_head = 0.0;
  double gamma_used = 0.0;
  double k_used = 0.0;
  double l_pac = 0.0;
  double j_total = 0.0;
};

/// KL(N(mu_q, diag var_q) || N(mu_p, var_p I)) =
///   0.5 [ sum var_q/var_p + |mu_q - mu_p|^2/var_p - d + sum ln(var_p/var_q) ].
double kl_diag_vs_isotropic(std::span<const double> mu_q, std::span<const double> var_q,
                            std::span<const double> mu_p, double var_p);

/// (ln(1/delta) + kl_total) / (gamma m) + gamma k^2.
double l_pac(double kl_total, const BoundConfig& cfg, double gamma, double k);

/// argmin over gamma in [lo, hi] of A/(gamma m) + gamma k^2, i.e.
/// clip(sqrt(A / (m k^2)), lo, hi). A = 0 gives lo.
double optimal_gamma(double a, std::size_t m, double k, double lo, double hi);

/// Read-only diagnostic: l_train + sqrt((ln(1/delta) + kl) / (2m)).
double generic_bound(double l_train, double kl_total, double delta, std::size_t m);

/// Streaming form of the running K estimate.
class KEstimator {
 public:
  static constexpr double kFloor = 1e-3;

  explicit KEstimator(double ema_decay = 0.99) : decay_(ema_decay) {}
  void observe(double loss);
  double value() const;
  std::size_t count() const { return count_; }

 private:
  double decay_;
  double mean_ = 0.0;
  double var_ = 0.0;
  std::size_t count_ = 0;
};

/// K for a loss history. FixedK ignores the history; RunningK requires a
/// non-empty history and returns the floored EMA standard deviation.
double estimate_K(std::span<const double> loss_history, const KMode& mode);

/// perturbed_j = params_j + exp(p_j) tau_j with tau ~ N(0, I) drawn in
/// index order.
std::pair<std::vector<double>, std::vector<double>> perturb_params(std::span<const double> params,
                                                                   std::span<const double> p, Rng& rng);

/// Gradients of the optimized objective, in the NoiseState layouts.
struct ObjectiveGradients {
  std::vector<double> weights;  // flat trainable layout
  std::vector<double> p_backbone;
  std::vector<double> p_head;
  double log_lambda = 0.0;
  double log_beta = 0.0;
};

/// One-sample estimate of the PAC-Bayes training objective
///   J = L_train(perturbed weights) + l_pac(KL_backbone + KL_head).
/// One tau per trainable weight is drawn from `rng` (flat trainable order).
/// gamma follows cfg.gamma and is treated as a constant for the gradient;
/// `k` is supplied by the caller. The optimized scalar is
/// l_train + pac_weight * l_pac, while the returned terms always report the
/// unweighted bound. When `grads` is non-null it receives the gradient of the
/// optimized scalar.
BoundTerms objective_J(const MlpClassifier& model, const NoiseState& noise, const Dataset& batch,
                       const BoundConfig& cfg, double k, Rng& rng, ObjectiveGradients* grads = nullptr,
                       double pac_weight = 1.0);

}  // namespace pactune
