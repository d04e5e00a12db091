#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "pactune/data.hpp"
#include "pactune/model.hpp"
#include "pactune/optim.hpp"
#include "pactune/pacbayes.hpp"
#include "pactune/rng.hpp"

namespace pactune {

/// Fixed noise variances eta (the perturbation is sqrt(eta) * tau).
struct IsotropicNoise {
  double eta_backbone = 0.0;
  double eta_head = 0.0;
};

/// Per-parameter variances exp(2p) learned by bound minimization.
struct LearnedNoise {
  const NoiseState* noise = nullptr;
};

using NoiseSource = std::variant<IsotropicNoise, LearnedNoise>;

struct PgdConfig {
  NoiseSource noise = IsotropicNoise{};
  double lr_backbone = 1e-3;
  double lr_head = 1e-2;
  AdamHyper adam;
  bool weight_decay = true;
};

/// AdamW over the model's trainable weights with one moment block per group,
/// so the backbone and head can run at different learning rates.
struct WeightOptimizer {
  AdamState backbone;
  AdamState head;
  std::size_t skipped_steps = 0;

  /// Applies grads (flat trainable layout) to the model in place.
  void step(MlpClassifier& model, std::span<const double> grads, double lr_backbone, double lr_head,
            const AdamHyper& hyper, bool weight_decay);
};

/// Gradient of a scalar loss at a perturbed point.
using LossGradFn = std::function<double(std::span<const double> x, std::vector<double>& grad)>;

struct PerturbedGradient {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> tau;
};

/// Draws tau ~ N(0, I) (one per coordinate, in order), evaluates f and its
/// gradient at x + noise_std * tau, and returns them. x itself is untouched.
PerturbedGradient perturbed_gradient(std::span<const double> x, std::span<const double> noise_std,
                                     const LossGradFn& f, Rng& rng);

/// Per-parameter noise standard deviations for a noise source, in the flat
/// trainable layout.
std::vector<double> noise_std(const MlpClassifier& model, const NoiseSource& source);

/// One perturbed gradient descent step: perturb the trainable weights, take
/// the cross-entropy gradient there, then update the clean weights through
/// the optimizer. Every call draws exactly trainable_count(model) normals
/// from `noise_rng`, including when the noise variance is zero. Returns the
/// loss at the perturbed point.
double pgd_step(MlpClassifier& model, const Dataset& batch, const PgdConfig& cfg, WeightOptimizer& opt,
                Rng& noise_rng);

/// Plain (noise-free) optimizer step on the cross-entropy loss.
double plain_step(MlpClassifier& model, const Dataset& batch, const PgdConfig& cfg, WeightOptimizer& opt);

struct LayerNoiseResult {
  double loss = 0.0;
  std::size_t layer = 0;
};

/// Noise-injection baseline: one layer, chosen uniformly among layers with
/// trainable parameters, has its weight and bias perturbed by sigma * N(0, 1)
/// before the gradient; the clean weights are then updated.
LayerNoiseResult random_layer_noise_step(MlpClassifier& model, const Dataset& batch, double sigma,
                                         const PgdConfig& cfg, WeightOptimizer& opt, Rng& noise_rng);

}  // namespace pactune
