#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "pactune/config.hpp"
#include "pactune/errors.hpp"
#include "pactune/experiment.hpp"
#include "pactune/gradcheck_suite.hpp"
#include "pactune/model.hpp"
#include "pactune/pacbayes.hpp"
#include "pactune/report.hpp"
#include "pactune/tensor.hpp"

namespace pactune {

namespace fs = std::filesystem;

namespace {

/// Files are written as "<name>.partial" and renamed on commit. Without a
/// commit the destructor deletes them, along with any directories it made.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;

  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(partial(f), ec);
    for (auto it = made_dirs_.rbegin(); it != made_dirs_.rend(); ++it)
      if (fs::is_empty(*it, ec)) fs::remove(*it, ec);
  }

  void write(const fs::path& rel, const std::string& content) {
    const fs::path target = dir_ / rel;
    make_dirs(target.parent_path());
    files_.push_back(target);
    std::ofstream out(partial(target), std::ios::binary);
    if (!out) throw IoError("cannot write " + partial(target).string());
    out << content;
    out.close();
    if (!out) throw IoError("failed while writing " + partial(target).string());
  }

  void commit() {
    for (const auto& f : files_) {
      std::error_code ec;
      fs::rename(partial(f), f, ec);
      if (ec) throw IoError("cannot move " + partial(f).string() + " into place: " + ec.message());
    }
    committed_ = true;
  }

 private:
  static fs::path partial(const fs::path& p) { return fs::path(p.string() + ".partial"); }

  void make_dirs(const fs::path& d) {
    if (d.empty()) return;
    std::vector<fs::path> missing;
    for (fs::path p = d; !p.empty() && !fs::exists(p); p = p.parent_path()) {
      missing.push_back(p);
      if (p == p.parent_path()) break;
    }
    for (auto it = missing.rbegin(); it != missing.rend(); ++it) {
      std::error_code ec;
      fs::create_directory(*it, ec);
      if (ec) throw IoError("cannot create directory " + it->string() + ": " + ec.message());
      made_dirs_.push_back(*it);
    }
  }

  fs::path dir_;
  std::vector<fs::path> files_;
  std::vector<fs::path> made_dirs_;
  bool committed_ = false;
};

struct GlobalFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::vector<std::string> sets;
};

ExperimentConfig load_config(const GlobalFlags& g) {
  std::vector<std::string> overrides = g.sets;
  if (g.seed) overrides.push_back("seeds=[" + std::to_string(*g.seed) + "]");
  if (g.out) overrides.push_back("output_dir=" + *g.out);
  if (g.workers) overrides.push_back("workers=" + std::to_string(*g.workers));
  std::optional<fs::path> file;
  if (g.config) file = *g.config;
  return resolve_config(file, overrides);
}

Checkpoint pretrained_model(const ExperimentConfig& cfg, const TaskData& data) {
  if (!cfg.pretrained_checkpoint.empty()) return load_checkpoint(cfg.pretrained_checkpoint);
  return {pretrain(data.source, cfg.pretrain), {cfg.pretrain.seed, cfg.task.name, cfg.pretrain.epochs}};
}

int cmd_generate_data(const ExperimentConfig& cfg) {
  if (cfg.task.name == "csv") throw ConfigError("generate-data needs a built-in task, not 'csv'");
  const TaskData data = load_task(cfg.task);
  Outputs out(cfg.output_dir);
  out.write("source.csv", to_csv_string(data.source));
  out.write("target.csv", to_csv_string(data.target));
  out.commit();
  std::cout << "wrote " << data.source.size() << " source and " << data.target.size() << " target rows to "
            << cfg.output_dir << "\n";
  return kExitOk;
}

int cmd_pretrain(const ExperimentConfig& cfg) {
  const TaskData data = load_task(cfg.task);
  Checkpoint ck{pretrain(data.source, cfg.pretrain), {cfg.pretrain.seed, cfg.task.name, cfg.pretrain.epochs}};
  const Metrics m = evaluate(ck.model, data.source);
  Outputs out(cfg.output_dir);
  out.write("pretrained.json", checkpoint_to_string(ck));
  out.commit();
  std::printf("source accuracy %.4f, checkpoint %s\n", m.accuracy, (fs::path(cfg.output_dir) / "pretrained.json").c_str());
  return kExitOk;
}

int cmd_finetune(const ExperimentConfig& cfg) {
  const TaskData data = load_task(cfg.task);
  const Checkpoint pre = pretrained_model(cfg, data);
  const std::uint64_t seed = cfg.seeds.front();
  const RunResult run = finetune_run(cfg.method, pre.model, data.target, cfg.finetune, seed);
  const int last_epoch = run.trace.empty() ? 0 : run.trace.back().epoch + 1;

  Outputs out(cfg.output_dir);
  out.write("run.jsonl", run_record_jsonl(run, cfg.task.name, cfg));
  out.write("anchor.json", checkpoint_to_string({run.anchor, {seed, cfg.task.name, 0}}));
  out.write("model.json", checkpoint_to_string({run.model, {seed, cfg.task.name, last_epoch}}));
  if (run.noise) out.write("noise.json", noise_to_string({*run.noise, "anchor.json"}));
  out.commit();
  std::printf("%s seed %llu: dev accuracy %.4f, dev mcc %.4f, train loss %.4f\n", method_name(run.method),
              static_cast<unsigned long long>(seed), run.final_dev.accuracy, run.final_dev.mcc, run.final_train_loss);
  return kExitOk;
}

std::string run_file_name(const BenchmarkRunInfo& info) {
  return "runs/" + std::to_string(info.id) + "-" + info.task + "-" + method_name(info.method) + "-n" +
         std::to_string(info.n_shot) + "-s" + std::to_string(info.seed) + ".jsonl";
}

int cmd_benchmark(const ExperimentConfig& cfg) {
  const BenchmarkReport report = run_benchmark(cfg);
  Outputs out(cfg.output_dir);
  for (std::size_t r = 0; r < report.plan.size(); ++r)
    out.write(run_file_name(report.plan[r]), run_record_jsonl(report.runs[r], report.plan[r].task, cfg));
  out.write("benchmark.jsonl", benchmark_jsonl(report, cfg));
  out.commit();
  std::printf("%-16s %-16s %6s %4s %18s %18s\n", "task", "method", "n_shot", "runs", "accuracy", "mcc");
  for (const auto& a : report.aggregates)
    std::printf("%-16s %-16s %6zu %4zu %9.4f +- %.4f %9.4f +- %.4f\n", a.task.c_str(), method_name(a.method), a.n_shot,
                a.runs, a.mean_accuracy, a.std_accuracy, a.mean_mcc, a.std_mcc);
  return kExitOk;
}

int cmd_gradcheck() {
  const auto rows = run_gradcheck_suite();
  bool all = true;
  std::printf("%-28s %14s %10s  %s\n", "check", "max rel error", "tolerance", "result");
  for (const auto& r : rows) {
    std::printf("%-28s %14.3e %10.0e  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance, r.passed ? "pass" : "FAIL");
    all = all && r.passed;
  }
  return all ? kExitOk : kExitFailure;
}

int cmd_inspect_noise(const ExperimentConfig& cfg, const std::string& noise_path) {
  const NoiseFile nf = load_noise(noise_path);
  const auto variances = nf.noise.variances();
  const auto order = importance_ranking(variances);
  std::vector<std::size_t> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;

  std::ostringstream csv;
  csv.precision(17);
  csv << "index,group,variance,rank\n";
  const std::size_t nb = nf.noise.p_backbone.size();
  for (std::size_t i = 0; i < variances.size(); ++i)
    csv << i << ',' << (i < nb ? "backbone" : "head") << ',' << variances[i] << ',' << rank[i] << '\n';

  Outputs out(cfg.output_dir);
  out.write("importance.csv", csv.str());
  out.commit();
  std::printf("ranked %zu parameters, wrote %s\n", variances.size(),
              (fs::path(cfg.output_dir) / "importance.csv").c_str());
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Two-stage PAC-Bayes fine-tuning experiments on small classifiers", "pactune"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON config file (unknown keys are rejected)");
  app.add_option("--seed", g.seed, "run with this single seed (replaces the seeds list)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--workers", g.workers, "benchmark worker threads")->check(CLI::PositiveNumber);
  app.add_option("--set", g.sets, "override one config leaf, dotted.key=value (repeatable)");

  auto* gen = app.add_subcommand("generate-data", "write the task's source and target sets as CSV");
  auto* pre = app.add_subcommand("pretrain", "train on the source set and save a checkpoint");
  auto* fin = app.add_subcommand("finetune", "fine-tune on a few-shot target sample with the configured method");
  auto* bench = app.add_subcommand("benchmark", "run every task x n_shot x method x seed and aggregate");
  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  auto* insp = app.add_subcommand("inspect-noise", "rank parameters by learned noise variance");
  std::string noise_path;
  insp->add_option("noise_file", noise_path, "noise JSON written by finetune")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck();
    const ExperimentConfig cfg = load_config(g);
    if (gen->parsed()) return cmd_generate_data(cfg);
    if (pre->parsed()) return cmd_pretrain(cfg);
    if (fin->parsed()) return cmd_finetune(cfg);
    if (bench->parsed()) return cmd_benchmark(cfg);
    if (insp->parsed()) return cmd_inspect_noise(cfg, noise_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace pactune
