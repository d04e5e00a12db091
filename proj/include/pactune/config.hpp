#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pactune/experiment.hpp"

namespace pactune {

struct BenchmarkPlan {
  std::vector<std::string> tasks = builtin_task_names();
  std::vector<Method> methods = {Method::PacTuning, Method::Vanilla, Method::NoiseInjection};
  std::vector<std::size_t> n_shots = {100};
};

/// Everything a command needs. The JSON form mirrors these fields; see
/// the README for the full key list.
struct ExperimentConfig {
  TaskConfig task;
  PretrainConfig pretrain;
  std::string pretrained_checkpoint;  // empty: pretrain in-process
  Method method = Method::PacTuning;
  FinetuneSettings finetune;
  std::vector<std::uint64_t> seeds = {1, 2, 10, 26, 100};
  BenchmarkPlan benchmark;
  std::string output_dir = "out";
  int workers = 1;
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

/// Parses a config document. Missing keys keep their defaults; unknown keys
/// and type changes are rejected.
ExperimentConfig config_from_json(const nlohmann::ordered_json& j);

/// Merges `overlay` into `base` leaf by leaf. Keys missing from `base` are
/// rejected with their dotted path, as are type changes.
void merge_strict(nlohmann::ordered_json& base, const nlohmann::ordered_json& overlay,
                  const std::string& path = {});

/// Applies "dotted.key=value". The value is read as JSON when it parses
/// and as a plain string otherwise.
void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

/// Defaults, then the optional file, then each override in order; the
/// result is parsed and validated.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides);

/// Checks cross-field constraints. Throws ConfigError.
void validate(const ExperimentConfig& cfg);

}  // namespace pactune
