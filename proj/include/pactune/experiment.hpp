#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pactune/data.hpp"
#include "pactune/model.hpp"
#include "pactune/train.hpp"

namespace pactune {

/// Names of the built-in transfer tasks.
const std::vector<std::string>& builtin_task_names();

/// Source (pretraining) and target (fine-tuning) generator specs for a
/// built-in task. Each task adds pure-noise feature columns so a few-shot
/// learner can overfit features the pretrained backbone learned to ignore.
///
///   blobs-rotate   4 Gaussian blobs; target class means rotated and shifted
///   spirals-shift  two spirals; target shifted and noisier
///   xor-noise      2-D XOR; target noisier and slightly rotated
TransferPair builtin_task(const std::string& name, std::size_t source_n, std::size_t target_n,
                          std::uint64_t data_seed);

struct TaskConfig {
  std::string name = "blobs-rotate";  // a built-in name or "csv"
  std::size_t source_n = 2000;
  std::size_t target_n = 1000;
  std::uint64_t data_seed = 0;
  std::string source_csv;
  std::string target_csv;
  std::string label_column;
};

struct TaskData {
  Dataset source;
  Dataset target;
};

TaskData load_task(const TaskConfig& cfg);

struct PretrainConfig {
  std::vector<std::size_t> hidden = {32, 32};
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Trains a fresh classifier on the source task (all layers trainable).
MlpClassifier pretrain(const Dataset& source, const PretrainConfig& cfg);

enum class Method { PacTuning, Vanilla, NoiseInjection };

const char* method_name(Method m);
Method parse_method(const std::string& s);

inline FineTuneConfig finetune_with_epochs(int epochs) {
  FineTuneConfig c;
  c.epochs = epochs;
  return c;
}

struct FinetuneSettings {
  std::size_t n_shot = 100;
  bool freeze_first_layer = true;
  Stage1Config stage1;
  FineTuneConfig stage2 = finetune_with_epochs(50);    // PAC-tuning Stage 2
  FineTuneConfig baseline = finetune_with_epochs(35);  // vanilla and noise injection
  double noise_injection_sigma = 0.05;
};

struct RunResult {
  Method method = Method::Vanilla;
  std::uint64_t seed = 0;
  std::size_t n_shot = 0;
  MlpClassifier anchor;  // weights at the start of fine-tuning
  MlpClassifier model;   // final weights
  std::optional<NoiseState> noise;
  std::vector<EpochRecord> trace;
  int stage_boundary = 0;
  Metrics final_dev;
  double final_train_loss = 0.0;  // noise-free, whole training set
};

/// One fine-tuning run: few-shot sample of the target pool, head
/// replacement on the pretrained model, then the chosen method. All
/// randomness derives from `seed`.
RunResult finetune_run(Method method, const MlpClassifier& pretrained, const Dataset& target_pool,
                       const FinetuneSettings& settings, std::uint64_t seed);

}  // namespace pactune
