#include "pactune/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "pactune/errors.hpp"

namespace pactune {

using nlohmann::ordered_json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* type_label(const ordered_json& j) {
  if (j.is_number()) return "number";
  return j.type_name();
}

const ordered_json& field(const ordered_json& j, const std::string& key, const std::string& path) {
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError("missing config key '" + join(path, key) + "'");
  return *it;
}

double read_double(const ordered_json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_number()) throw ConfigError("'" + join(path, key) + "' must be a number");
  return v.get<double>();
}

std::uint64_t read_uint_value(const ordered_json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  throw ConfigError("'" + where + "' must be a non-negative integer");
}

std::uint64_t read_uint(const ordered_json& j, const std::string& key, const std::string& path) {
  return read_uint_value(field(j, key, path), join(path, key));
}

int read_int(const ordered_json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()))) {
    const double d = v.get<double>();
    if (std::abs(d) <= std::numeric_limits<int>::max()) return static_cast<int>(d);
  }
  throw ConfigError("'" + join(path, key) + "' must be an integer");
}

bool read_bool(const ordered_json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_boolean()) throw ConfigError("'" + join(path, key) + "' must be true or false");
  return v.get<bool>();
}

std::string read_string(const ordered_json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_string()) throw ConfigError("'" + join(path, key) + "' must be a string");
  return v.get<std::string>();
}

const ordered_json& read_array(const ordered_json& j, const std::string& key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_array()) throw ConfigError("'" + join(path, key) + "' must be an array");
  return v;
}

ordered_json schedule_json(const LrSchedule& s) {
  const ConstantLr c = std::holds_alternative<ConstantLr>(s) ? std::get<ConstantLr>(s) : ConstantLr{};
  const StepDecayLr d = std::holds_alternative<StepDecayLr>(s) ? std::get<StepDecayLr>(s) : StepDecayLr{};
  return {{"kind", std::holds_alternative<ConstantLr>(s) ? "constant" : "step_decay"},
          {"value", c.value},
          {"init", d.init},
          {"factor", d.factor},
          {"every", d.every},
          {"floor", d.floor}};
}

LrSchedule parse_schedule(const ordered_json& j, const std::string& path) {
  const std::string kind = read_string(j, "kind", path);
  if (kind == "constant") return ConstantLr{read_double(j, "value", path)};
  if (kind == "step_decay")
    return StepDecayLr{read_double(j, "init", path), read_double(j, "factor", path), read_uint(j, "every", path),
                       read_double(j, "floor", path)};
  throw ConfigError("'" + join(path, "kind") + "' must be \"constant\" or \"step_decay\", got \"" + kind + "\"");
}

ordered_json adam_json(const AdamHyper& a) {
  return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

ordered_json finetune_json(const FineTuneConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_backbone", c.lr_backbone},
          {"lr_head", c.lr_head},
          {"weight_decay", c.weight_decay}};
}

FineTuneConfig parse_finetune(const ordered_json& j, const std::string& path, const AdamHyper& adam) {
  FineTuneConfig c;
  c.epochs = read_int(j, "epochs", path);
  c.batch_size = read_uint(j, "batch_size", path);
  c.lr_backbone = read_double(j, "lr_backbone", path);
  c.lr_head = read_double(j, "lr_head", path);
  c.weight_decay = read_bool(j, "weight_decay", path);
  c.adam = adam;
  return c;
}

bool is_task_name(const std::string& name) {
  const auto& names = builtin_task_names();
  return name == "csv" || std::find(names.begin(), names.end(), name) != names.end();
}

}  // namespace

ordered_json to_json(const ExperimentConfig& cfg) {
  const FinetuneSettings& f = cfg.finetune;
  const BoundConfig& b = f.stage1.bound;
  const FixedGamma fg = std::holds_alternative<FixedGamma>(b.gamma) ? std::get<FixedGamma>(b.gamma) : FixedGamma{};
  const AutoGamma ag = std::holds_alternative<AutoGamma>(b.gamma) ? std::get<AutoGamma>(b.gamma) : AutoGamma{};
  const FixedK fk = std::holds_alternative<FixedK>(b.k) ? std::get<FixedK>(b.k) : FixedK{};
  const RunningK rk = std::holds_alternative<RunningK>(b.k) ? std::get<RunningK>(b.k) : RunningK{};

  ordered_json j;
  j["task"] = {{"name", cfg.task.name},
               {"source_n", cfg.task.source_n},
               {"target_n", cfg.task.target_n},
               {"data_seed", cfg.task.data_seed},
               {"source_csv", cfg.task.source_csv},
               {"target_csv", cfg.task.target_csv},
               {"label_column", cfg.task.label_column}};
  j["model"] = {{"hidden", cfg.pretrain.hidden}, {"freeze_first_layer", f.freeze_first_layer}};
  j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                   {"batch_size", cfg.pretrain.batch_size},
                   {"lr", cfg.pretrain.lr},
                   {"seed", cfg.pretrain.seed},
                   {"checkpoint", cfg.pretrained_checkpoint}};
  j["method"] = method_name(cfg.method);
  j["n_shot"] = f.n_shot;
  j["adam"] = adam_json(f.stage1.adam);
  j["bound"] = {{"delta", b.delta},
                {"gamma",
                 {{"mode", std::holds_alternative<FixedGamma>(b.gamma) ? "fixed" : "auto"},
                  {"value", fg.value},
                  {"lo", ag.lo},
                  {"hi", ag.hi}}},
                {"k",
                 {{"mode", std::holds_alternative<RunningK>(b.k) ? "running" : "fixed"},
                  {"ema_decay", rk.ema_decay},
                  {"value", fk.value}}}};
  j["stage1"] = {{"epochs", f.stage1.epochs},
                 {"batch_size", f.stage1.batch_size},
                 {"lr_backbone", f.stage1.lr_backbone},
                 {"lr_head", f.stage1.lr_head},
                 {"lr_noise_backbone", schedule_json(f.stage1.lr_noise_backbone)},
                 {"lr_noise_head", schedule_json(f.stage1.lr_noise_head)},
                 {"weight_decay", f.stage1.weight_decay},
                 {"pac_weight", f.stage1.pac_weight}};
  j["stage2"] = finetune_json(f.stage2);
  j["baseline"] = finetune_json(f.baseline);
  j["baseline"]["noise_injection_sigma"] = f.noise_injection_sigma;
  j["seeds"] = cfg.seeds;
  ordered_json methods = ordered_json::array();
  for (Method m : cfg.benchmark.methods) methods.push_back(method_name(m));
  j["benchmark"] = {{"tasks", cfg.benchmark.tasks}, {"methods", methods}, {"n_shots", cfg.benchmark.n_shots}};
  j["output_dir"] = cfg.output_dir;
  j["workers"] = cfg.workers;
  return j;
}

void merge_strict(ordered_json& base, const ordered_json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ConfigError("config" + (path.empty() ? "" : " '" + path + "'") + " must be an object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string where = join(path, it.key());
    auto target = base.find(it.key());
    if (target == base.end()) throw ConfigError("unknown config key '" + where + "'");
    if (target->is_object()) {
      merge_strict(*target, it.value(), where);
      continue;
    }
    const bool same_kind = (target->is_number() && it.value().is_number()) || target->type() == it.value().type();
    if (!same_kind)
      throw ConfigError("config key '" + where + "' expects a " + type_label(*target) + ", got a " +
                        type_label(it.value()));
    *target = it.value();
  }
}

void apply_override(ordered_json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like dotted.key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    parts.push_back(part);
  }
  const ordered_json* leaf = &doc;
  for (const auto& part : parts) {
    if (!leaf->is_object() || !leaf->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    leaf = &(*leaf)[part];
  }

  ordered_json value = ordered_json::parse(raw, nullptr, false);
  if (value.is_discarded() || (leaf->is_string() && !value.is_string())) value = raw;

  ordered_json patch = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = ordered_json{{*it, patch}};
  merge_strict(doc, patch);
}

ExperimentConfig config_from_json(const ordered_json& input) {
  ordered_json j = to_json(ExperimentConfig{});
  merge_strict(j, input);

  ExperimentConfig cfg;
  const auto& t = j["task"];
  cfg.task.name = read_string(t, "name", "task");
  cfg.task.source_n = read_uint(t, "source_n", "task");
  cfg.task.target_n = read_uint(t, "target_n", "task");
  cfg.task.data_seed = read_uint(t, "data_seed", "task");
  cfg.task.source_csv = read_string(t, "source_csv", "task");
  cfg.task.target_csv = read_string(t, "target_csv", "task");
  cfg.task.label_column = read_string(t, "label_column", "task");

  const auto& m = j["model"];
  cfg.pretrain.hidden.clear();
  for (const auto& h : read_array(m, "hidden", "model")) cfg.pretrain.hidden.push_back(read_uint_value(h, "model.hidden"));
  cfg.finetune.freeze_first_layer = read_bool(m, "freeze_first_layer", "model");

  const auto& p = j["pretrain"];
  cfg.pretrain.epochs = read_int(p, "epochs", "pretrain");
  cfg.pretrain.batch_size = read_uint(p, "batch_size", "pretrain");
  cfg.pretrain.lr = read_double(p, "lr", "pretrain");
  cfg.pretrain.seed = read_uint(p, "seed", "pretrain");
  cfg.pretrained_checkpoint = read_string(p, "checkpoint", "pretrain");

  cfg.method = parse_method(read_string(j, "method", ""));
  cfg.finetune.n_shot = read_uint(j, "n_shot", "");

  const auto& a = j["adam"];
  AdamHyper adam{read_double(a, "beta1", "adam"), read_double(a, "beta2", "adam"), read_double(a, "eps", "adam"),
                 read_double(a, "weight_decay", "adam")};

  const auto& b = j["bound"];
  BoundConfig bound;
  bound.delta = read_double(b, "delta", "bound");
  const auto& g = b["gamma"];
  const std::string gmode = read_string(g, "mode", "bound.gamma");
  if (gmode == "fixed")
    bound.gamma = FixedGamma{read_double(g, "value", "bound.gamma")};
  else if (gmode == "auto")
    bound.gamma = AutoGamma{read_double(g, "lo", "bound.gamma"), read_double(g, "hi", "bound.gamma")};
  else
    throw ConfigError("'bound.gamma.mode' must be \"fixed\" or \"auto\", got \"" + gmode + "\"");
  const auto& k = b["k"];
  const std::string kmode = read_string(k, "mode", "bound.k");
  if (kmode == "running")
    bound.k = RunningK{read_double(k, "ema_decay", "bound.k")};
  else if (kmode == "fixed")
    bound.k = FixedK{read_double(k, "value", "bound.k")};
  else
    throw ConfigError("'bound.k.mode' must be \"running\" or \"fixed\", got \"" + kmode + "\"");

  const auto& s1 = j["stage1"];
  Stage1Config& st1 = cfg.finetune.stage1;
  st1.epochs = read_int(s1, "epochs", "stage1");
  st1.batch_size = read_uint(s1, "batch_size", "stage1");
  st1.lr_backbone = read_double(s1, "lr_backbone", "stage1");
  st1.lr_head = read_double(s1, "lr_head", "stage1");
  st1.lr_noise_backbone = parse_schedule(s1["lr_noise_backbone"], "stage1.lr_noise_backbone");
  st1.lr_noise_head = parse_schedule(s1["lr_noise_head"], "stage1.lr_noise_head");
  st1.weight_decay = read_bool(s1, "weight_decay", "stage1");
  st1.pac_weight = read_double(s1, "pac_weight", "stage1");
  st1.adam = adam;
  st1.bound = bound;

  cfg.finetune.stage2 = parse_finetune(j["stage2"], "stage2", adam);
  cfg.finetune.baseline = parse_finetune(j["baseline"], "baseline", adam);
  cfg.finetune.noise_injection_sigma = read_double(j["baseline"], "noise_injection_sigma", "baseline");

  cfg.seeds.clear();
  for (const auto& s : read_array(j, "seeds", "")) cfg.seeds.push_back(read_uint_value(s, "seeds"));

  const auto& bm = j["benchmark"];
  cfg.benchmark.tasks.clear();
  for (const auto& s : read_array(bm, "tasks", "benchmark")) {
    if (!s.is_string()) throw ConfigError("'benchmark.tasks' entries must be strings");
    cfg.benchmark.tasks.push_back(s.get<std::string>());
  }
  cfg.benchmark.methods.clear();
  for (const auto& s : read_array(bm, "methods", "benchmark")) {
    if (!s.is_string()) throw ConfigError("'benchmark.methods' entries must be strings");
    cfg.benchmark.methods.push_back(parse_method(s.get<std::string>()));
  }
  cfg.benchmark.n_shots.clear();
  for (const auto& s : read_array(bm, "n_shots", "benchmark"))
    cfg.benchmark.n_shots.push_back(read_uint_value(s, "benchmark.n_shots"));

  cfg.output_dir = read_string(j, "output_dir", "");
  cfg.workers = read_int(j, "workers", "");
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (!is_task_name(cfg.task.name)) throw ConfigError("unknown task '" + cfg.task.name + "'");
  if (cfg.task.name == "csv") {
    if (cfg.task.source_csv.empty() || cfg.task.target_csv.empty())
      throw ConfigError("task 'csv' needs task.source_csv and task.target_csv");
  } else {
    if (cfg.task.source_n < 2 || cfg.task.target_n < 2) throw ConfigError("task.source_n and task.target_n must be at least 2");
  }
  for (std::size_t h : cfg.pretrain.hidden)
    if (h == 0) throw ConfigError("model.hidden sizes must be positive");
  if (cfg.pretrain.epochs < 1) throw ConfigError("pretrain.epochs must be at least 1");
  if (cfg.pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be positive");
  if (!(cfg.pretrain.lr >= 0.0)) throw ConfigError("pretrain.lr must be non-negative");

  const FinetuneSettings& f = cfg.finetune;
  if (f.n_shot < 1) throw ConfigError("n_shot must be at least 1");
  const AdamHyper& a = f.stage1.adam;
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(a.eps > 0.0)) throw ConfigError("adam.eps must be positive");
  if (!(a.weight_decay >= 0.0)) throw ConfigError("adam.weight_decay must be non-negative");
  validate(f.stage1);
  validate(f.stage2);
  validate(f.baseline);
  if (!(f.noise_injection_sigma >= 0.0)) throw ConfigError("baseline.noise_injection_sigma must be non-negative");

  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (cfg.benchmark.tasks.empty() || cfg.benchmark.methods.empty() || cfg.benchmark.n_shots.empty())
    throw ConfigError("benchmark.tasks, benchmark.methods and benchmark.n_shots must not be empty");
  for (const auto& t : cfg.benchmark.tasks) {
    if (!is_task_name(t)) throw ConfigError("unknown task '" + t + "' in benchmark.tasks");
    if (t == "csv" && (cfg.task.source_csv.empty() || cfg.task.target_csv.empty()))
      throw ConfigError("benchmark task 'csv' needs task.source_csv and task.target_csv");
  }
  for (std::size_t n : cfg.benchmark.n_shots)
    if (n < 1) throw ConfigError("benchmark.n_shots entries must be at least 1");
  if (cfg.task.name != "csv") {
    for (std::size_t n : cfg.benchmark.n_shots)
      if (n >= cfg.task.target_n) throw ConfigError("benchmark n_shot " + std::to_string(n) + " leaves no dev rows");
    if (f.n_shot >= cfg.task.target_n) throw ConfigError("n_shot must be smaller than task.target_n");
  }
  if (cfg.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (cfg.workers < 1) throw ConfigError("workers must be at least 1");
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides) {
  ordered_json doc = to_json(ExperimentConfig{});
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError("cannot open config file " + file->string());
    ordered_json user;
    try {
      user = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    merge_strict(doc, user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig cfg = config_from_json(doc);
  validate(cfg);
  return cfg;
}

}  // namespace pactune
