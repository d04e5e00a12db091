#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pactune/data.hpp"
#include "pactune/model.hpp"
#include "pactune/optim.hpp"
#include "pactune/pacbayes.hpp"
#include "pactune/pgd.hpp"
#include "pactune/rng.hpp"

namespace pactune {

struct Metrics {
  double accuracy = 0.0;
  double mcc = 0.0;
};

/// Accuracy and Matthews correlation. For two classes mcc is
/// (TP TN - FP FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)); for more classes the
/// multi-class generalization is used. A zero denominator gives mcc = 0.
Metrics metrics(std::span<const int> preds, std::span<const int> labels);

/// Noise-free (posterior mean) evaluation.
Metrics evaluate(const MlpClassifier& model, const Dataset& data);

/// Parameter indices ordered from most to least important, i.e. by
/// ascending learned variance; ties keep index order.
std::vector<std::size_t> importance_ranking(std::span<const double> variances);

struct EpochRecord {
  int epoch = 0;
  std::string stage;  // "stage1", "stage2", "vanilla", "noise-injection"
  double j_total = 0.0;
  double l_train = 0.0;
  double l_pac = 0.0;
  double train_loss = 0.0;  // noise-free loss on the whole training set
  std::optional<double> kl_backbone;
  std::optional<double> kl_head;
  std::optional<double> gamma;
  std::optional<double> k;
  double mean_var_backbone = 0.0;
  double mean_var_head = 0.0;
  double dev_accuracy = 0.0;
  double dev_mcc = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Independent random streams of one run: batch order and injected noise.
/// Keeping them apart lets noise-free and noisy runs see identical batches.
struct RunStreams {
  Rng order;
  Rng noise;
  explicit RunStreams(std::uint64_t seed) : order(derive_seed(seed, 1)), noise(derive_seed(seed, 2)) {}
};

/// Shared settings for L_train-only fine-tuning (Stage 2 and baselines).
struct FineTuneConfig {
  int epochs = 150;
  std::size_t batch_size = 32;
  double lr_backbone = 1e-3;
  double lr_head = 1e-2;
  AdamHyper adam;
  bool weight_decay = true;
};

struct Stage1Config {
  int epochs = 150;
  std::size_t batch_size = 32;
  BoundConfig bound;
  double lr_backbone = 1e-3;
  double lr_head = 1e-2;
  LrSchedule lr_noise_backbone = ConstantLr{0.1};  // p_backbone and log_lambda
  LrSchedule lr_noise_head = StepDecayLr{};        // p_head and log_beta
  AdamHyper adam;
  bool weight_decay = true;
  /// Weight of l_pac in the optimized objective; 0 trains the noise on
  /// L_train alone.
  double pac_weight = 1.0;
};

void validate(const FineTuneConfig& cfg);
void validate(const Stage1Config& cfg);

struct NoiseOptimizer {
  AdamState p_backbone;
  AdamState p_head;
  AdamState log_lambda;
  AdamState log_beta;
  std::size_t updates = 0;
};

struct Stage1Result {
  MlpClassifier model;
  NoiseState noise;
  std::vector<EpochRecord> trace;
  WeightOptimizer optimizer;
};

/// Minimizes the bound over weights, posterior log-stds and prior
/// log-variances. Throws DivergenceError if the objective turns non-finite.
Stage1Result stage1_train(MlpClassifier model, NoiseState noise, const Dataset& train, const Dataset& dev,
                          const Stage1Config& cfg, RunStreams& streams, int first_epoch = 0);

struct TrainResult {
  MlpClassifier model;
  std::vector<EpochRecord> trace;
  WeightOptimizer optimizer;
};

/// Perturbed gradient descent with the frozen learned noise.
TrainResult stage2_train(MlpClassifier model, const NoiseState& noise, const Dataset& train, const Dataset& dev,
                         const FineTuneConfig& cfg, RunStreams& streams, WeightOptimizer optimizer = {},
                         int first_epoch = 0);

/// Plain AdamW on the cross-entropy.
TrainResult vanilla_finetune(MlpClassifier model, const Dataset& train, const Dataset& dev,
                             const FineTuneConfig& cfg, RunStreams& streams, WeightOptimizer optimizer = {},
                             int first_epoch = 0);

/// Random-layer noise injection baseline.
TrainResult noise_injection_finetune(MlpClassifier model, const Dataset& train, const Dataset& dev,
                                     const FineTuneConfig& cfg, double sigma, RunStreams& streams,
                                     WeightOptimizer optimizer = {}, int first_epoch = 0);

struct PacTuningResult {
  MlpClassifier model;
  NoiseState noise;  // the Stage-1 output used by Stage 2
  std::vector<EpochRecord> trace;
  int stage_boundary = 0;
};

/// Stage 1 followed by Stage 2; anchors are the incoming weights. The
/// weight optimizer state carries over between the stages.
PacTuningResult pac_tuning(const MlpClassifier& model, const Dataset& train, const Dataset& dev,
                           const Stage1Config& stage1, const FineTuneConfig& stage2, RunStreams& streams);

/// Shuffled mini-batches covering every row once.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

}  // namespace pactune
