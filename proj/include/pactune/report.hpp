#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pactune/config.hpp"
#include "pactune/experiment.hpp"

namespace pactune {

nlohmann::ordered_json epoch_json(const EpochRecord& rec);

/// Mean/min/max variance per group plus the prior variances.
nlohmann::ordered_json noise_summary_json(const NoiseState& noise);

/// One JSON object per epoch, then a summary object carrying the resolved
/// config, final metrics and the learned-noise summary. Each line ends in '\n'.
std::string run_record_jsonl(const RunResult& run, const std::string& task, const ExperimentConfig& cfg);

/// Runs fn(0..n-1) on at most `workers` threads. Exceptions are rethrown
/// after all workers finish, lowest index first.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct BenchmarkRunInfo {
  std::size_t id = 0;
  std::string task;
  Method method = Method::Vanilla;
  std::size_t n_shot = 0;
  std::uint64_t seed = 0;
};

struct BenchmarkAggregate {
  std::string task;
  Method method = Method::Vanilla;
  std::size_t n_shot = 0;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation, 0 for one run
  double mean_mcc = 0.0;
  double std_mcc = 0.0;
  double mean_train_loss = 0.0;
};

struct BenchmarkReport {
  std::vector<BenchmarkRunInfo> plan;  // run-id order
  std::vector<RunResult> runs;         // same order
  std::vector<BenchmarkAggregate> aggregates;
};

/// Run ids enumerate task, then n_shot, then method, then seed.
std::vector<BenchmarkRunInfo> benchmark_plan(const ExperimentConfig& cfg);

/// Pretrains once per task, then fine-tunes every planned run. The result
/// does not depend on `cfg.workers`.
BenchmarkReport run_benchmark(const ExperimentConfig& cfg);

std::vector<BenchmarkAggregate> aggregate(const std::vector<BenchmarkRunInfo>& plan, const std::vector<RunResult>& runs);

/// Config line, one line per run, then one line per aggregate.
std::string benchmark_jsonl(const BenchmarkReport& report, const ExperimentConfig& cfg);

}  // namespace pactune
