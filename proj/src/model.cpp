#include "pactune/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pactune/data.hpp"
#include "pactune/errors.hpp"

namespace pactune {

using ojson = nlohmann::ordered_json;

const char* group_name(ParamGroup g) { return g == ParamGroup::Backbone ? "backbone" : "head"; }

ParamGroup parse_group(const std::string& s) {
  if (s == "backbone") return ParamGroup::Backbone;
  if (s == "head") return ParamGroup::Head;
  throw std::invalid_argument("unknown parameter group '" + s + "'");
}

MlpClassifier::MlpClassifier(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("MlpClassifier: need at least input and output sizes");
  for (std::size_t s : sizes_)
    if (s == 0) throw std::invalid_argument("MlpClassifier: layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
    layers_.push_back({Tensor::zeros({sizes_[l], sizes_[l + 1]}), Tensor::zeros({sizes_[l + 1]})});
}

ParamSlot MlpClassifier::slot_info(std::size_t s) const {
  ParamSlot info;
  info.layer = s / 2;
  info.is_bias = (s % 2) == 1;
  info.group = info.layer + 1 == layers_.size() ? ParamGroup::Head : ParamGroup::Backbone;
  // A one-layer model has no separate first layer to freeze.
  info.trainable = !(freeze_first_ && info.layer == 0 && layers_.size() > 1);
  return info;
}

Tensor& MlpClassifier::slot(std::size_t s) {
  Linear& l = layers_.at(s / 2);
  return s % 2 ? l.bias : l.weight;
}

const Tensor& MlpClassifier::slot(std::size_t s) const {
  const Linear& l = layers_.at(s / 2);
  return s % 2 ? l.bias : l.weight;
}

namespace {

void init_layer(Linear& l, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.rows()));
  for (double& w : l.weight.data()) w = rng.uniform(-bound, bound);
  for (double& b : l.bias.data()) b = 0.0;
}

}  // namespace

void MlpClassifier::init_weights(Rng& rng) {
  for (Linear& l : layers_) init_layer(l, rng);
}

void MlpClassifier::replace_head(std::size_t classes, Rng& rng) {
  if (classes < 1) throw std::invalid_argument("replace_head: classes must be positive");
  sizes_.back() = classes;
  Linear& head = layers_.back();
  head.weight = Tensor::zeros({sizes_[sizes_.size() - 2], classes});
  head.bias = Tensor::zeros({classes});
  init_layer(head, rng);
}

Var MlpClassifier::forward(Tape& tape, std::span<const Var> params, Var x) const {
  if (params.size() != num_slots())
    throw ShapeError("forward: expected " + std::to_string(num_slots()) + " parameter vars, got " +
                     std::to_string(params.size()));
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || xv.cols() != input_dim())
    throw ShapeError("forward: input of shape " + shape_str(xv.shape()) + " for a model with input size " +
                     std::to_string(input_dim()));
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = tape.bias_add(tape.matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers_.size()) h = tape.tanh(h);
  }
  return h;
}

Tensor MlpClassifier::logits(const Tensor& x) const {
  Tape tape;
  std::vector<Var> params;
  for (std::size_t s = 0; s < num_slots(); ++s) params.push_back(tape.constant(slot(s)));
  return tape.value(forward(tape, params, tape.constant(x)));
}

std::vector<int> MlpClassifier::predict(const Tensor& x) const {
  const Tensor z = logits(x);
  const std::size_t n = z.rows(), k = z.cols();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (z[i * k + j] > z[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::size_t trainable_count(const MlpClassifier& m, ParamGroup g) {
  std::size_t n = 0;
  for (std::size_t s = 0; s < m.num_slots(); ++s) {
    const ParamSlot info = m.slot_info(s);
    if (info.trainable && info.group == g) n += m.slot(s).size();
  }
  return n;
}

std::size_t trainable_count(const MlpClassifier& m) {
  return trainable_count(m, ParamGroup::Backbone) + trainable_count(m, ParamGroup::Head);
}

std::vector<double> flatten_trainable(const MlpClassifier& m) {
  std::vector<double> out;
  out.reserve(trainable_count(m));
  for (std::size_t s = 0; s < m.num_slots(); ++s)
    if (m.slot_info(s).trainable) out.insert(out.end(), m.slot(s).data().begin(), m.slot(s).data().end());
  return out;
}

std::vector<double> flatten_trainable(const MlpClassifier& m, ParamGroup g) {
  std::vector<double> out;
  for (std::size_t s = 0; s < m.num_slots(); ++s) {
    const ParamSlot info = m.slot_info(s);
    if (info.trainable && info.group == g)
      out.insert(out.end(), m.slot(s).data().begin(), m.slot(s).data().end());
  }
  return out;
}

void assign_trainable(MlpClassifier& m, std::span<const double> flat) {
  if (flat.size() != trainable_count(m))
    throw ShapeError("assign_trainable: " + std::to_string(flat.size()) + " values for " +
                     std::to_string(trainable_count(m)) + " trainable parameters");
  std::size_t off = 0;
  for (std::size_t s = 0; s < m.num_slots(); ++s) {
    if (!m.slot_info(s).trainable) continue;
    auto dst = m.slot(s).data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

double loss_and_grad(const MlpClassifier& m, const Dataset& batch, std::vector<double>* grad) {
  Tape tape;
  std::vector<Var> params;
  for (std::size_t s = 0; s < m.num_slots(); ++s) params.push_back(tape.leaf(m.slot(s), m.slot_info(s).trainable));
  const Var loss = tape.softmax_cross_entropy(m.forward(tape, params, tape.constant(batch.x)), batch.y);
  if (grad) {
    tape.backward(loss);
    grad->clear();
    grad->reserve(trainable_count(m));
    for (std::size_t s = 0; s < m.num_slots(); ++s) {
      if (!m.slot_info(s).trainable) continue;
      const Tensor g = tape.grad(params[s]);
      grad->insert(grad->end(), g.data().begin(), g.data().end());
    }
  }
  return tape.value(loss).item();
}

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  const MlpClassifier& m = ckpt.model;
  ojson j;
  j["version"] = Checkpoint::kFormatVersion;
  j["layer_sizes"] = m.layer_sizes();
  ojson params = ojson::array();
  ojson groups = ojson::array();
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    params.push_back({{"weight", m.layer(l).weight.storage()}, {"bias", m.layer(l).bias.storage()}});
    groups.push_back(group_name(m.slot_info(2 * l).group));
  }
  j["params"] = std::move(params);
  j["groups"] = std::move(groups);
  j["provenance"] = {{"seed", ckpt.provenance.seed}, {"task", ckpt.provenance.task}, {"epoch", ckpt.provenance.epoch}};
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != Checkpoint::kFormatVersion)
      throw std::invalid_argument("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.model = MlpClassifier(j.at("layer_sizes").get<std::vector<std::size_t>>());
    MlpClassifier& m = ckpt.model;
    const auto& params = j.at("params");
    const auto& groups = j.at("groups");
    if (params.size() != m.num_layers() || groups.size() != m.num_layers())
      throw std::invalid_argument("checkpoint: params/groups do not match layer_sizes");
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      auto w = params[l].at("weight").get<std::vector<double>>();
      auto b = params[l].at("bias").get<std::vector<double>>();
      if (w.size() != m.layer(l).weight.size() || b.size() != m.layer(l).bias.size())
        throw std::invalid_argument("checkpoint: layer " + std::to_string(l) + " has the wrong number of values");
      m.layer(l).weight.storage() = std::move(w);
      m.layer(l).bias.storage() = std::move(b);
      if (parse_group(groups[l].get<std::string>()) != m.slot_info(2 * l).group)
        throw std::invalid_argument("checkpoint: group tag of layer " + std::to_string(l) + " is inconsistent");
    }
    const auto& prov = j.at("provenance");
    ckpt.provenance.seed = prov.at("seed").get<std::uint64_t>();
    ckpt.provenance.task = prov.at("task").get<std::string>();
    ckpt.provenance.epoch = prov.at("epoch").get<std::int64_t>();
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_to_string(ckpt);
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace pactune
