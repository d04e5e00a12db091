#include "pactune/experiment.hpp"

#include <numbers>
#include <stdexcept>

#include "pactune/errors.hpp"

namespace pactune {

const std::vector<std::string>& builtin_task_names() {
  static const std::vector<std::string> names = {"blobs-rotate", "spirals-shift", "xor-noise"};
  return names;
}

TransferPair builtin_task(const std::string& name, std::size_t source_n, std::size_t target_n,
                          std::uint64_t data_seed) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  TransferPair pair;
  pair.source.n = source_n;
  pair.target.n = target_n;
  pair.source.seed = derive_seed(data_seed, 100);
  pair.target.seed = derive_seed(data_seed, 101);
  pair.source.nuisance_dims = 6;
  pair.target.nuisance_dims = 6;
  if (name == "blobs-rotate") {
    pair.source.generator = Blobs{.k = 4, .d = 2, .separation = 4.0, .std = 1.0};
    pair.target.generator = Blobs{.k = 4, .d = 2, .separation = 4.0, .std = 1.0};
    pair.target.transform = {.rotation_rad = 30.0 * kDeg, .shift = {0.5, -0.5}};
  } else if (name == "spirals-shift") {
    pair.source.generator = TwoSpirals{.noise = 0.1};
    pair.target.generator = TwoSpirals{.noise = 0.2};
    pair.target.transform = {.rotation_rad = 0.0, .shift = {0.3, 0.3}};
  } else if (name == "xor-noise") {
    pair.source.generator = Xor{.d = 2, .noise = 0.1};
    pair.target.generator = Xor{.d = 2, .noise = 0.3};
    pair.target.transform = {.rotation_rad = 15.0 * kDeg, .shift = {}};
  } else {
    throw ConfigError("unknown task '" + name + "'");
  }
  return pair;
}

TaskData load_task(const TaskConfig& cfg) {
  if (cfg.name == "csv") {
    if (cfg.source_csv.empty() || cfg.target_csv.empty())
      throw ConfigError("task 'csv' needs task.source_csv and task.target_csv");
    TaskData t{load_csv(cfg.source_csv, cfg.label_column).data, load_csv(cfg.target_csv, cfg.label_column).data};
    if (t.source.dim() != t.target.dim()) throw ConfigError("source and target CSV files differ in feature count");
    return t;
  }
  const TransferPair pair = builtin_task(cfg.name, cfg.source_n, cfg.target_n, cfg.data_seed);
  return {generate(pair.source), generate(pair.target)};
}

MlpClassifier pretrain(const Dataset& source, const PretrainConfig& cfg) {
  std::vector<std::size_t> sizes{source.dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(source.num_classes);
  MlpClassifier model(sizes);
  Rng init(derive_seed(cfg.seed, 20));
  model.init_weights(init);

  FineTuneConfig ft;
  ft.epochs = cfg.epochs;
  ft.batch_size = cfg.batch_size;
  ft.lr_backbone = cfg.lr;
  ft.lr_head = cfg.lr;
  RunStreams streams(derive_seed(cfg.seed, 21));
  Dataset no_dev;
  no_dev.x = Tensor::zeros({0, source.dim()});
  no_dev.num_classes = source.num_classes;
  return vanilla_finetune(std::move(model), source, no_dev, ft, streams).model;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::PacTuning: return "pac-tuning";
    case Method::Vanilla: return "vanilla";
    case Method::NoiseInjection: return "noise-injection";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "pac-tuning") return Method::PacTuning;
  if (s == "vanilla") return Method::Vanilla;
  if (s == "noise-injection") return Method::NoiseInjection;
  throw ConfigError("unknown method '" + s + "' (expected pac-tuning, vanilla or noise-injection)");
}

RunResult finetune_run(Method method, const MlpClassifier& pretrained, const Dataset& target_pool,
                       const FinetuneSettings& settings, std::uint64_t seed) {
  if (pretrained.input_dim() != target_pool.dim())
    throw ConfigError("pretrained model expects " + std::to_string(pretrained.input_dim()) +
                      " features but the target task has " + std::to_string(target_pool.dim()));
  const FewShotSplit split = few_shot_sample(target_pool, settings.n_shot, derive_seed(seed, 10));

  RunResult r;
  r.method = method;
  r.seed = seed;
  r.n_shot = settings.n_shot;
  r.anchor = pretrained;
  r.anchor.set_freeze_first_layer(settings.freeze_first_layer);
  Rng head_rng(derive_seed(seed, 11));
  r.anchor.replace_head(target_pool.num_classes, head_rng);

  RunStreams streams(derive_seed(seed, 12));
  switch (method) {
    case Method::PacTuning: {
      PacTuningResult p = pac_tuning(r.anchor, split.train, split.dev, settings.stage1, settings.stage2, streams);
      r.model = std::move(p.model);
      r.noise = std::move(p.noise);
      r.trace = std::move(p.trace);
      r.stage_boundary = p.stage_boundary;
      break;
    }
    case Method::Vanilla: {
      TrainResult t = vanilla_finetune(r.anchor, split.train, split.dev, settings.baseline, streams);
      r.model = std::move(t.model);
      r.trace = std::move(t.trace);
      break;
    }
    case Method::NoiseInjection: {
      TrainResult t = noise_injection_finetune(r.anchor, split.train, split.dev, settings.baseline,
                                               settings.noise_injection_sigma, streams);
      r.model = std::move(t.model);
      r.trace = std::move(t.trace);
      break;
    }
  }
  r.final_dev = {r.trace.back().dev_accuracy, r.trace.back().dev_mcc};
  r.final_train_loss = r.trace.back().train_loss;
  return r;
}

}  // namespace pactune
