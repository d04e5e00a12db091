#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "pactune/config.hpp"
#include "pactune/data.hpp"
#include "pactune/pacbayes.hpp"
#include "support.hpp"

using namespace pactune;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Small budgets so every command finishes in a second or two.
const std::vector<std::string> kFast = {
    "--set", "task.source_n=300", "--set", "task.target_n=200", "--set", "model.hidden=[8]",
    "--set", "pretrain.epochs=3", "--set", "stage1.epochs=3",   "--set", "stage2.epochs=2",
    "--set", "baseline.epochs=2", "--set", "n_shot=20"};

int run(const std::vector<std::string>& args, bool fast = true) {
  std::vector<std::string> argv = {"pactune"};
  if (fast) argv.insert(argv.end(), kFast.begin(), kFast.end());
  argv.insert(argv.end(), args.begin(), args.end());
  return run_cli(argv);
}

std::vector<ordered_json> read_jsonl(const fs::path& p) {
  std::vector<ordered_json> lines;
  std::istringstream in(testing::read_file(p));
  for (std::string line; std::getline(in, line);) lines.push_back(ordered_json::parse(line));
  return lines;
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST_CASE("argument errors exit with the config code") {
  testing::TempDir dir("cli");
  CHECK(run({"--out", dir / "o"}, false) == kExitConfig);
  CHECK(run({"--out", dir / "o", "no-such-command"}, false) == kExitConfig);
  CHECK(run({"--out", dir / "o", "--set", "stage1.nope=1", "generate-data"}) == kExitConfig);
  CHECK(run({"--out", dir / "o", "--set", "workers=0", "generate-data"}) == kExitConfig);
  CHECK(run({"--out", dir / "o", "--config", dir / "missing.json", "generate-data"}) == kExitIo);
  CHECK_FALSE(fs::exists(dir / "o"));
}

TEST_CASE("generate-data writes CSV files that load back") {
  testing::TempDir dir("cli");
  REQUIRE(run({"--out", dir / "d", "generate-data"}) == kExitOk);
  const Dataset target = load_csv(dir / "d" / "target.csv").data;
  TaskConfig tc;
  tc.source_n = 300;
  tc.target_n = 200;
  const TaskData data = load_task(tc);
  REQUIRE(target.size() == data.target.size());
  CHECK(target.num_classes == data.target.num_classes);
  CHECK(target.y == data.target.y);
  CHECK(count_files(dir / "d") == 2);
}

TEST_CASE("gradcheck passes") {
  CHECK(run({"gradcheck"}, false) == kExitOk);
}

TEST_CASE("pretrain then finetune from the checkpoint") {
  testing::TempDir dir("cli");
  REQUIRE(run({"--out", dir / "p", "pretrain"}) == kExitOk);
  const fs::path ck = dir / "p" / "pretrained.json";
  REQUIRE(fs::exists(ck));
  REQUIRE(run({"--out", dir / "f", "--seed", "7", "--set", "pretrain.checkpoint=" + ck.string(), "finetune"}) ==
          kExitOk);
  for (const char* f : {"run.jsonl", "anchor.json", "model.json", "noise.json"}) CHECK(fs::exists(dir / "f" / f));

  const auto lines = read_jsonl(dir / "f" / "run.jsonl");
  REQUIRE(lines.size() == 6);
  for (std::size_t e = 0; e < 5; ++e) CHECK(lines[e].at("epoch") == e);
  const ordered_json& summary = lines.back();
  CHECK(summary.at("type") == "summary");
  CHECK(summary.at("seed") == 7);
  CHECK(summary.at("stage_boundary") == 3);

  // The echoed config is the fully resolved one.
  const ExperimentConfig expect =
      resolve_config(std::nullopt, {"task.source_n=300", "task.target_n=200", "model.hidden=[8]", "pretrain.epochs=3",
                                    "stage1.epochs=3", "stage2.epochs=2", "baseline.epochs=2", "n_shot=20",
                                    "pretrain.checkpoint=" + ck.string(), "seeds=[7]",
                                    "output_dir=" + (dir / "f").string()});
  CHECK(summary.at("config") == to_json(expect));
  CHECK(to_json(config_from_json(summary.at("config"))) == summary.at("config"));

  REQUIRE(run({"--out", dir / "i", "inspect-noise", (dir / "f" / "noise.json").string()}) == kExitOk);
  std::istringstream csv(testing::read_file(dir / "i" / "importance.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "index,group,variance,rank");
  const NoiseFile nf = load_noise(dir / "f" / "noise.json");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == nf.noise.variances().size());
}

TEST_CASE("finetune with a missing checkpoint is an I/O error and leaves nothing behind") {
  testing::TempDir dir("cli");
  CHECK(run({"--out", dir / "f", "--set", "pretrain.checkpoint=" + (dir / "none.json").string(), "finetune"}) ==
        kExitIo);
  CHECK_FALSE(fs::exists(dir / "f"));
}

TEST_CASE("divergence exits with its own code") {
  testing::TempDir dir("cli");
  CHECK(run({"--out", dir / "f", "--set", "method=vanilla", "--set", "baseline.lr_head=1e308", "--set",
             "baseline.weight_decay=false", "--set", "baseline.epochs=5", "finetune"}) == kExitDivergence);
  CHECK_FALSE(fs::exists(dir / "f"));
}

TEST_CASE("benchmark aggregates agree with the per-run lines") {
  testing::TempDir dir("cli");
  REQUIRE(run({"--out", dir / "b", "--set", "benchmark.tasks=[\"xor-noise\"]", "--set", "seeds=[1,2]", "--workers",
               "2", "benchmark"}) == kExitOk);
  const auto lines = read_jsonl(dir / "b" / "benchmark.jsonl");
  REQUIRE(lines.size() == 1 + 6 + 3);
  CHECK(lines[0].at("type") == "config");
  CHECK(count_files(dir / "b" / "runs") == 6);
  for (std::size_t a = 7; a < lines.size(); ++a) {
    const ordered_json& agg = lines[a];
    std::vector<double> acc;
    for (std::size_t r = 1; r < 7; ++r)
      if (lines[r].at("method") == agg.at("method")) acc.push_back(lines[r].at("dev_accuracy").get<double>());
    REQUIRE(acc.size() == 2);
    const double mean = (acc[0] + acc[1]) / 2;
    const double sd = std::abs(acc[0] - acc[1]) / std::sqrt(2.0);  // sample std of two values
    CHECK(agg.at("runs") == 2);
    CHECK(agg.at("mean_accuracy").get<double>() == doctest::Approx(mean).epsilon(1e-12));
    CHECK(agg.at("std_accuracy").get<double>() == doctest::Approx(sd).epsilon(1e-12));
  }
  for (const auto& e : fs::recursive_directory_iterator(dir / "b"))
    CHECK(e.path().extension() != ".partial");
}

TEST_CASE("a single-seed aggregate equals its run") {
  testing::TempDir dir("cli");
  REQUIRE(run({"--out", dir / "b", "--set", "benchmark.tasks=[\"blobs-rotate\"]", "--set",
               "benchmark.methods=[\"vanilla\"]", "--seed", "3", "benchmark"}) == kExitOk);
  const auto lines = read_jsonl(dir / "b" / "benchmark.jsonl");
  REQUIRE(lines.size() == 3);
  CHECK(lines[2].at("mean_accuracy") == lines[1].at("dev_accuracy"));
  CHECK(lines[2].at("mean_mcc") == lines[1].at("dev_mcc"));
  CHECK(lines[2].at("std_accuracy") == 0.0);
  const auto run_lines = read_jsonl(dir / "b" / "runs" / "0-blobs-rotate-vanilla-n100-s3.jsonl");
  REQUIRE_FALSE(run_lines.empty());
  CHECK(run_lines.back().at("final").at("dev_accuracy") == lines[1].at("dev_accuracy"));
}

TEST_CASE("a failed write removes every partial output") {
  testing::TempDir dir("cli");
  fs::create_directories(dir / "b" / "benchmark.jsonl.partial");
  CHECK(run({"--out", dir / "b", "--set", "benchmark.tasks=[\"blobs-rotate\"]", "--set",
             "benchmark.methods=[\"vanilla\"]", "--seed", "3", "benchmark"}) == kExitIo);
  CHECK_FALSE(fs::exists(dir / "b" / "runs"));
  CHECK_FALSE(fs::exists(dir / "b" / "benchmark.jsonl"));
  std::size_t leftovers = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "b")) leftovers += e.is_regular_file();
  CHECK(leftovers == 0);
}
