#include <doctest.h>

#include "pactune/config.hpp"
#include "pactune/errors.hpp"
#include "support.hpp"

using namespace pactune;
using nlohmann::ordered_json;

namespace {

std::string config_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST_CASE("defaults survive a JSON round trip") {
  const ordered_json j = to_json(ExperimentConfig{});
  CHECK(to_json(config_from_json(j)) == j);
  CHECK(j.at("seeds") == ordered_json::array({1, 2, 10, 26, 100}));
  CHECK(j.at("adam").at("beta2") == 0.98);
  CHECK(j.at("adam").at("eps") == 1e-3);
  CHECK(j.at("stage1").at("lr_noise_head").at("kind") == "step_decay");
  CHECK(j.at("stage1").at("lr_noise_head").at("init") == 0.5);
  CHECK(j.at("stage1").at("lr_noise_backbone").at("value") == 0.1);
}

TEST_CASE("a non-default config round-trips") {
  ExperimentConfig c;
  c.task.name = "xor-noise";
  c.method = Method::NoiseInjection;
  c.finetune.stage1.bound.gamma = AutoGamma{0.2, 4.0};
  c.finetune.stage1.bound.k = FixedK{0.3};
  c.finetune.stage1.lr_noise_backbone = StepDecayLr{0.2, 0.5, 3, 0.05};
  c.finetune.stage1.lr_noise_head = ConstantLr{0.02};
  c.pretrain.hidden = {8, 4, 2};
  c.benchmark.n_shots = {20, 50};
  const ordered_json j = to_json(c);
  CHECK(to_json(config_from_json(j)) == j);
}

TEST_CASE("partial documents keep defaults for missing keys") {
  const ExperimentConfig c = config_from_json(ordered_json::parse(R"({"stage1": {"epochs": 7}, "n_shot": 20})"));
  CHECK(c.finetune.stage1.epochs == 7);
  CHECK(c.finetune.n_shot == 20);
  CHECK(c.finetune.stage1.batch_size == 32);
  CHECK(c.pretrain.hidden == std::vector<std::size_t>{32, 32});
}

TEST_CASE("unknown keys are rejected with their dotted path") {
  const std::string msg = config_error([] { config_from_json(ordered_json::parse(R"({"stage1": {"epoch": 3}})")); });
  CHECK(msg.find("stage1.epoch") != std::string::npos);
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"dropout": 0.1})")); }).find("dropout") !=
        std::string::npos);
}

TEST_CASE("type changes are rejected") {
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"stage1": {"epochs": "many"}})")); })
            .find("stage1.epochs") != std::string::npos);
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"model": {"freeze_first_layer": 1}})")); }) !=
        "no error");
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"stage1": 5})")); }) != "no error");
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"stage1": {"epochs": 2.5}})")); }) != "no error");
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"seeds": [1, -2]})")); }) != "no error");
}

TEST_CASE("enumerated values are checked") {
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"method": "lora"})")); }).find("lora") !=
        std::string::npos);
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"bound": {"gamma": {"mode": "x"}}})")); }) !=
        "no error");
  CHECK(config_error([] { config_from_json(ordered_json::parse(R"({"bound": {"k": {"mode": "x"}}})")); }) !=
        "no error");
  CHECK(config_error([] {
          config_from_json(ordered_json::parse(R"({"stage1": {"lr_noise_head": {"kind": "cosine"}}})"));
        }) != "no error");
}

TEST_CASE("dotted overrides") {
  ordered_json doc = to_json(ExperimentConfig{});
  apply_override(doc, "stage1.epochs=12");
  apply_override(doc, "bound.gamma.value=2.5");
  apply_override(doc, "task.name=spirals-shift");
  apply_override(doc, "output_dir=\"quoted\"");
  apply_override(doc, "seeds=[3]");
  apply_override(doc, "model.hidden=[8,8]");
  apply_override(doc, "pretrain.checkpoint=12");
  const ExperimentConfig c = config_from_json(doc);
  CHECK(c.finetune.stage1.epochs == 12);
  CHECK(std::get<FixedGamma>(c.finetune.stage1.bound.gamma).value == 2.5);
  CHECK(c.task.name == "spirals-shift");
  CHECK(c.output_dir == "quoted");
  CHECK(c.seeds == std::vector<std::uint64_t>{3});
  CHECK(c.pretrain.hidden == std::vector<std::size_t>{8, 8});
  CHECK(c.pretrained_checkpoint == "12");
}

TEST_CASE("malformed overrides are rejected") {
  ordered_json doc = to_json(ExperimentConfig{});
  CHECK_THROWS_AS(apply_override(doc, "stage1.epochs"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "stage1..epochs=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "stage1.nope=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "stage1.epochs=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "stage1.epochs.x=3"), ConfigError);
}

TEST_CASE("resolve applies file then overrides and validates") {
  testing::TempDir dir("cfg");
  testing::write_file(dir / "c.json", R"({"stage1": {"epochs": 9}, "n_shot": 50})");
  const ExperimentConfig c = resolve_config(dir / "c.json", {"n_shot=20"});
  CHECK(c.finetune.stage1.epochs == 9);
  CHECK(c.finetune.n_shot == 20);
  testing::write_file(dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(resolve_config(dir / "bad.json", {}), ConfigError);
  CHECK_THROWS_AS(resolve_config(dir / "missing.json", {}), IoError);
}

TEST_CASE("cross-field validation") {
  auto rejects = [](const std::string& o) { return config_error([&] { resolve_config(std::nullopt, {o}); }); };
  CHECK(rejects("task.name=mnist") != "no error");
  CHECK(rejects("task.name=csv") != "no error");
  CHECK(rejects("n_shot=1000") != "no error");
  CHECK(rejects("benchmark.n_shots=[5000]") != "no error");
  CHECK(rejects("seeds=[]") != "no error");
  CHECK(rejects("workers=0") != "no error");
  CHECK(rejects("bound.delta=1.5") != "no error");
  CHECK(rejects("stage2.epochs=0") != "no error");
  CHECK(rejects("adam.beta1=1") != "no error");
  CHECK(rejects("benchmark.tasks=[\"csv\"]") != "no error");
  CHECK(rejects("model.hidden=[0]") != "no error");
  CHECK(rejects("stage1.pac_weight=-1") != "no error");
  CHECK_NOTHROW(resolve_config(std::nullopt, {}));
}

TEST_CASE("adam settings reach every stage") {
  const ExperimentConfig c = resolve_config(std::nullopt, {"adam.eps=1e-8"});
  CHECK(c.finetune.stage1.adam.eps == 1e-8);
  CHECK(c.finetune.stage2.adam.eps == 1e-8);
  CHECK(c.finetune.baseline.adam.eps == 1e-8);
}
