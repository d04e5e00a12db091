#include "pactune/report.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <thread>

namespace pactune {

using nlohmann::ordered_json;

namespace {

ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

ordered_json group_summary(const std::vector<double>& var) {
  if (var.empty()) return {{"count", 0}, {"mean", nullptr}, {"min", nullptr}, {"max", nullptr}};
  const auto [lo, hi] = std::minmax_element(var.begin(), var.end());
  return {{"count", var.size()}, {"mean", mean_of(var)}, {"min", *lo}, {"max", *hi}};
}

}  // namespace

ordered_json epoch_json(const EpochRecord& rec) {
  return {{"type", "epoch"},
          {"epoch", rec.epoch},
          {"stage", rec.stage},
          {"j_total", rec.j_total},
          {"l_train", rec.l_train},
          {"l_pac", rec.l_pac},
          {"train_loss", rec.train_loss},
          {"kl_backbone", optional_json(rec.kl_backbone)},
          {"kl_head", optional_json(rec.kl_head)},
          {"gamma", optional_json(rec.gamma)},
          {"k", optional_json(rec.k)},
          {"mean_var_backbone", rec.mean_var_backbone},
          {"mean_var_head", rec.mean_var_head},
          {"dev_accuracy", rec.dev_accuracy},
          {"dev_mcc", rec.dev_mcc}};
}

ordered_json noise_summary_json(const NoiseState& noise) {
  return {{"backbone", group_summary(noise.variances(ParamGroup::Backbone))},
          {"head", group_summary(noise.variances(ParamGroup::Head))},
          {"prior_var_backbone", std::exp(noise.log_lambda)},
          {"prior_var_head", std::exp(noise.log_beta)}};
}

std::string run_record_jsonl(const RunResult& run, const std::string& task, const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& rec : run.trace) out += epoch_json(rec).dump() + "\n";
  ordered_json summary = {{"type", "summary"},
                          {"task", task},
                          {"method", method_name(run.method)},
                          {"seed", run.seed},
                          {"n_shot", run.n_shot},
                          {"epochs", run.trace.size()},
                          {"stage_boundary", run.stage_boundary},
                          {"final",
                           {{"dev_accuracy", run.final_dev.accuracy},
                            {"dev_mcc", run.final_dev.mcc},
                            {"train_loss", run.final_train_loss}}},
                          {"noise", run.noise ? noise_summary_json(*run.noise) : ordered_json(nullptr)},
                          {"config", to_json(cfg)}};
  out += summary.dump() + "\n";
  return out;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<BenchmarkRunInfo> benchmark_plan(const ExperimentConfig& cfg) {
  std::vector<BenchmarkRunInfo> plan;
  for (const auto& task : cfg.benchmark.tasks)
    for (std::size_t n_shot : cfg.benchmark.n_shots)
      for (Method m : cfg.benchmark.methods)
        for (std::uint64_t seed : cfg.seeds) plan.push_back({plan.size(), task, m, n_shot, seed});
  return plan;
}

BenchmarkReport run_benchmark(const ExperimentConfig& cfg) {
  BenchmarkReport report;
  report.plan = benchmark_plan(cfg);

  const auto& tasks = cfg.benchmark.tasks;
  std::vector<TaskData> data(tasks.size());
  std::vector<MlpClassifier> pretrained(tasks.size());
  parallel_for(tasks.size(), cfg.workers, [&](std::size_t i) {
    TaskConfig tc = cfg.task;
    tc.name = tasks[i];
    data[i] = load_task(tc);
    pretrained[i] = pretrain(data[i].source, cfg.pretrain);
  });
  std::map<std::string, std::size_t> task_index;
  for (std::size_t i = 0; i < tasks.size(); ++i) task_index.emplace(tasks[i], i);

  report.runs.resize(report.plan.size());
  parallel_for(report.plan.size(), cfg.workers, [&](std::size_t r) {
    const BenchmarkRunInfo& info = report.plan[r];
    const std::size_t t = task_index.at(info.task);
    FinetuneSettings settings = cfg.finetune;
    settings.n_shot = info.n_shot;
    report.runs[r] = finetune_run(info.method, pretrained[t], data[t].target, settings, info.seed);
  });
  report.aggregates = aggregate(report.plan, report.runs);
  return report;
}

std::vector<BenchmarkAggregate> aggregate(const std::vector<BenchmarkRunInfo>& plan, const std::vector<RunResult>& runs) {
  std::vector<BenchmarkAggregate> out;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < plan.size(); ++r) {
    const auto& info = plan[r];
    auto it = std::find_if(out.begin(), out.end(), [&](const BenchmarkAggregate& a) {
      return a.task == info.task && a.method == info.method && a.n_shot == info.n_shot;
    });
    if (it == out.end()) {
      out.push_back({info.task, info.method, info.n_shot});
      members.emplace_back();
      it = out.end() - 1;
    }
    members[static_cast<std::size_t>(it - out.begin())].push_back(r);
  }
  for (std::size_t a = 0; a < out.size(); ++a) {
    std::vector<double> acc, mcc, loss;
    for (std::size_t r : members[a]) {
      acc.push_back(runs[r].final_dev.accuracy);
      mcc.push_back(runs[r].final_dev.mcc);
      loss.push_back(runs[r].final_train_loss);
    }
    out[a].runs = acc.size();
    out[a].mean_accuracy = mean_of(acc);
    out[a].std_accuracy = sample_std(acc);
    out[a].mean_mcc = mean_of(mcc);
    out[a].std_mcc = sample_std(mcc);
    out[a].mean_train_loss = mean_of(loss);
  }
  return out;
}

std::string benchmark_jsonl(const BenchmarkReport& report, const ExperimentConfig& cfg) {
  std::string out = ordered_json{{"type", "config"}, {"config", to_json(cfg)}}.dump() + "\n";
  for (std::size_t r = 0; r < report.plan.size(); ++r) {
    const auto& info = report.plan[r];
    const auto& run = report.runs[r];
    out += ordered_json{{"type", "run"},
                        {"id", info.id},
                        {"task", info.task},
                        {"method", method_name(info.method)},
                        {"n_shot", info.n_shot},
                        {"seed", info.seed},
                        {"dev_accuracy", run.final_dev.accuracy},
                        {"dev_mcc", run.final_dev.mcc},
                        {"train_loss", run.final_train_loss}}
               .dump() +
           "\n";
  }
  for (const auto& a : report.aggregates) {
    out += ordered_json{{"type", "aggregate"},
                        {"task", a.task},
                        {"method", method_name(a.method)},
                        {"n_shot", a.n_shot},
                        {"runs", a.runs},
                        {"mean_accuracy", a.mean_accuracy},
                        {"std_accuracy", a.std_accuracy},
                        {"mean_mcc", a.mean_mcc},
                        {"std_mcc", a.std_mcc},
                        {"mean_train_loss", a.mean_train_loss}}
               .dump() +
           "\n";
  }
  return out;
}

}  // namespace pactune
