#include "pactune/pacbayes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pactune/errors.hpp"
#include "pactune/tensor.hpp"

namespace pactune {

namespace {

constexpr double kMinMagnitude = 1e-4;

std::vector<double> log_magnitudes(std::span<const double> w, double offset) {
  std::vector<double> p(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) p[i] = std::log(std::max(std::abs(w[i]), kMinMagnitude)) + offset;
  return p;
}

double log_mean_variance(std::span<const double> p) {
  if (p.empty()) return 0.0;
  double s = 0.0;
  for (double v : p) s += std::exp(2.0 * v);
  return std::log(s / static_cast<double>(p.size()));
}

}  // namespace

NoiseState NoiseState::initialize(const MlpClassifier& model) {
  NoiseState n;
  n.anchor_backbone = flatten_trainable(model, ParamGroup::Backbone);
  n.anchor_head = flatten_trainable(model, ParamGroup::Head);
  n.p_backbone = log_magnitudes(n.anchor_backbone, 0.0);
  n.p_head = log_magnitudes(n.anchor_head, std::log(10.0));
  n.log_lambda = log_mean_variance(n.p_backbone);
  n.log_beta = log_mean_variance(n.p_head);
  return n;
}

NoiseState NoiseState::uniform(const MlpClassifier& model, double value) {
  NoiseState n = initialize(model);
  std::fill(n.p_backbone.begin(), n.p_backbone.end(), value);
  std::fill(n.p_head.begin(), n.p_head.end(), value);
  return n;
}

std::vector<double> NoiseState::variances(ParamGroup g) const {
  const auto& p = g == ParamGroup::Backbone ? p_backbone : p_head;
  std::vector<double> v(p.size());
  std::transform(p.begin(), p.end(), v.begin(), [](double x) { return std::exp(2.0 * x); });
  return v;
}

std::vector<double> NoiseState::variances() const {
  auto v = variances(ParamGroup::Backbone);
  auto h = variances(ParamGroup::Head);
  v.insert(v.end(), h.begin(), h.end());
  return v;
}

double NoiseState::mean_variance(ParamGroup g) const {
  const auto v = variances(g);
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double NoiseState::mean_variance() const {
  const auto v = variances();
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string noise_to_string(const NoiseFile& f) {
  nlohmann::ordered_json j;
  j["version"] = NoiseFile::kFormatVersion;
  j["p_backbone"] = f.noise.p_backbone;
  j["p_head"] = f.noise.p_head;
  j["log_lambda"] = f.noise.log_lambda;
  j["log_beta"] = f.noise.log_beta;
  j["anchor_checkpoint"] = f.anchor_checkpoint;
  return j.dump() + "\n";
}

NoiseFile noise_from_string(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != NoiseFile::kFormatVersion)
      throw std::invalid_argument("noise file: unsupported version");
    NoiseFile f;
    f.noise.p_backbone = j.at("p_backbone").get<std::vector<double>>();
    f.noise.p_head = j.at("p_head").get<std::vector<double>>();
    f.noise.log_lambda = j.at("log_lambda").get<double>();
    f.noise.log_beta = j.at("log_beta").get<double>();
    f.anchor_checkpoint = j.at("anchor_checkpoint").get<std::string>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("noise file: ") + e.what());
  }
}

void save_noise(const std::filesystem::path& path, const NoiseFile& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write noise file " + path.string());
  out << noise_to_string(f);
  if (!out) throw IoError("write failed for noise file " + path.string());
}

NoiseFile load_noise(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read noise file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return noise_from_string(ss.str());
}

void validate(const BoundConfig& cfg) {
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) throw ConfigError("bound: delta must lie in (0, 1)");
  if (cfg.m < 1) throw ConfigError("bound: m must be at least 1");
  if (const auto* f = std::get_if<FixedGamma>(&cfg.gamma)) {
    if (!(f->value > 0.0)) throw ConfigError("bound: fixed gamma must be positive");
  } else {
    const auto& a = std::get<AutoGamma>(cfg.gamma);
    if (!(a.lo > 0.0) || a.lo > a.hi) throw ConfigError("bound: auto gamma needs 0 < lo <= hi");
  }
  if (const auto* f = std::get_if<FixedK>(&cfg.k)) {
    if (!(f->value > 0.0)) throw ConfigError("bound: fixed K must be positive");
  } else {
    const auto& r = std::get<RunningK>(cfg.k);
    if (!(r.ema_decay > 0.0 && r.ema_decay < 1.0)) throw ConfigError("bound: K ema_decay must lie in (0, 1)");
  }
}

double kl_diag_vs_isotropic(std::span<const double> mu_q, std::span<const double> var_q,
                            std::span<const double> mu_p, double var_p) {
  if (mu_q.size() != var_q.size() || mu_q.size() != mu_p.size())
    throw std::invalid_argument("kl_diag_vs_isotropic: mean/variance arrays differ in length");
  if (!(var_p > 0.0)) throw std::invalid_argument("kl_diag_vs_isotropic: prior variance must be positive");
  double s = 0.0;
  for (std::size_t j = 0; j < mu_q.size(); ++j) {
    if (!(var_q[j] > 0.0))
      throw std::invalid_argument("kl_diag_vs_isotropic: posterior variance " + std::to_string(j) +
                                  " is not positive");
    const double diff = mu_q[j] - mu_p[j];
    s += var_q[j] / var_p + diff * diff / var_p - 1.0 + std::log(var_p / var_q[j]);
  }
  return 0.5 * s;
}

double l_pac(double kl_total, const BoundConfig& cfg, double gamma, double k) {
  if (!(gamma > 0.0)) throw std::invalid_argument("l_pac: gamma must be positive");
  if (!(k > 0.0)) throw std::invalid_argument("l_pac: K must be positive");
  if (!(kl_total >= 0.0)) throw std::invalid_argument("l_pac: KL must be non-negative");
  return (std::log(1.0 / cfg.delta) + kl_total) / (gamma * static_cast<double>(cfg.m)) + gamma * k * k;
}

double optimal_gamma(double a, std::size_t m, double k, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("optimal_gamma: lower bound exceeds upper bound");
  if (!(a >= 0.0)) throw std::invalid_argument("optimal_gamma: A must be non-negative");
  if (!(k > 0.0) || m < 1) throw std::invalid_argument("optimal_gamma: need K > 0 and m >= 1");
  const double g = std::sqrt(a / (static_cast<double>(m) * k * k));
  return std::clamp(g, lo, hi);
}

double generic_bound(double l_train, double kl_total, double delta, std::size_t m) {
  return l_train + std::sqrt((std::log(1.0 / delta) + kl_total) / (2.0 * static_cast<double>(m)));
}

void KEstimator::observe(double loss) {
  if (count_ == 0) {
    mean_ = loss;
    var_ = 0.0;
  } else {
    const double diff = loss - mean_;
    const double incr = (1.0 - decay_) * diff;
    mean_ += incr;
    var_ = decay_ * (var_ + diff * incr);
  }
  ++count_;
}

double KEstimator::value() const { return std::max(kFloor, std::sqrt(var_)); }

double estimate_K(std::span<const double> loss_history, const KMode& mode) {
  if (const auto* f = std::get_if<FixedK>(&mode)) return f->value;
  if (loss_history.empty()) throw std::invalid_argument("estimate_K: running estimate needs a loss history");
  KEstimator est(std::get<RunningK>(mode).ema_decay);
  for (double l : loss_history) est.observe(l);
  return est.value();
}

std::pair<std::vector<double>, std::vector<double>> perturb_params(std::span<const double> params,
                                                                   std::span<const double> p, Rng& rng) {
  if (params.size() != p.size()) throw std::invalid_argument("perturb_params: params and p differ in length");
  std::vector<double> tau = rng.normals(params.size());
  std::vector<double> out(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) out[j] = params[j] + std::exp(p[j]) * tau[j];
  return {std::move(out), std::move(tau)};
}

namespace {

// Running pieces of one group's KL, accumulated slot by slot on the tape.
struct KlParts {
  std::vector<Var> var_sums;
  std::vector<Var> sq_dist_sums;
  std::vector<Var> p_sums;
  std::size_t d = 0;
};

Var sum_all(Tape& tape, const std::vector<Var>& vs) {
  Var acc = vs.front();
  for (std::size_t i = 1; i < vs.size(); ++i) acc = tape.add(acc, vs[i]);
  return acc;
}

// 0.5 * (sum var + sum dist^2) * exp(-log_prior) + 0.5 d log_prior - sum p - 0.5 d
Var group_kl(Tape& tape, const KlParts& parts, Var log_prior) {
  if (parts.d == 0) return tape.constant(0.0);
  const double d = static_cast<double>(parts.d);
  const Var inv_prior = tape.exp(tape.scale(log_prior, -1.0));
  const Var spread = tape.add(sum_all(tape, parts.var_sums), sum_all(tape, parts.sq_dist_sums));
  Var kl = tape.scale(tape.mul(spread, inv_prior), 0.5);
  kl = tape.add(kl, tape.scale(log_prior, 0.5 * d));
  kl = tape.sub(kl, sum_all(tape, parts.p_sums));
  return tape.add_scalar(kl, -0.5 * d);
}

}  // namespace

BoundTerms objective_J(const MlpClassifier& model, const NoiseState& noise, const Dataset& batch,
                       const BoundConfig& cfg, double k, Rng& rng, ObjectiveGradients* grads, double pac_weight) {
  if (batch.size() == 0) throw std::invalid_argument("objective_J: empty batch");
  if (noise.p_backbone.size() != trainable_count(model, ParamGroup::Backbone) ||
      noise.p_head.size() != trainable_count(model, ParamGroup::Head) ||
      noise.anchor_backbone.size() != noise.p_backbone.size() || noise.anchor_head.size() != noise.p_head.size())
    throw std::invalid_argument("objective_J: noise state does not match the model's trainable parameters");

  const std::vector<double> tau_all = rng.normals(trainable_count(model));

  Tape tape;
  std::vector<Var> effective(model.num_slots());
  std::vector<Var> weight_vars(model.num_slots());
  std::vector<Var> p_vars(model.num_slots());
  const Var log_lambda = tape.leaf(Tensor::scalar(noise.log_lambda), true);
  const Var log_beta = tape.leaf(Tensor::scalar(noise.log_beta), true);
  KlParts backbone, head;

  std::size_t flat_off = 0, off_b = 0, off_h = 0;
  for (std::size_t s = 0; s < model.num_slots(); ++s) {
    const ParamSlot info = model.slot_info(s);
    const Tensor& w = model.slot(s);
    if (!info.trainable) {
      effective[s] = tape.constant(w);
      continue;
    }
    const bool is_head = info.group == ParamGroup::Head;
    std::size_t& off = is_head ? off_h : off_b;
    const auto& p_src = is_head ? noise.p_head : noise.p_backbone;
    const auto& anchor_src = is_head ? noise.anchor_head : noise.anchor_backbone;
    const auto first = static_cast<std::ptrdiff_t>(off);
    const auto last = static_cast<std::ptrdiff_t>(off + w.size());

    weight_vars[s] = tape.leaf(w, true);
    p_vars[s] = tape.leaf(Tensor(w.shape(), {p_src.begin() + first, p_src.begin() + last}), true);
    const Var tau = tape.constant(Tensor(w.shape(), {tau_all.begin() + static_cast<std::ptrdiff_t>(flat_off),
                                                     tau_all.begin() + static_cast<std::ptrdiff_t>(flat_off + w.size())}));
    const Var anchor = tape.constant(Tensor(w.shape(), {anchor_src.begin() + first, anchor_src.begin() + last}));

    const Var sigma = tape.exp(p_vars[s]);
    effective[s] = tape.add(weight_vars[s], tape.mul(sigma, tau));

    KlParts& parts = is_head ? head : backbone;
    parts.var_sums.push_back(tape.sum(tape.square(sigma)));
    parts.sq_dist_sums.push_back(tape.sum(tape.square(tape.sub(weight_vars[s], anchor))));
    parts.p_sums.push_back(tape.sum(p_vars[s]));
    parts.d += w.size();

    off += w.size();
    flat_off += w.size();
  }

  const Var logits = model.forward(tape, effective, tape.constant(batch.x));
  const Var l_train = tape.softmax_cross_entropy(logits, batch.y);
  const Var kl_b = group_kl(tape, backbone, log_lambda);
  const Var kl_h = group_kl(tape, head, log_beta);
  const Var kl_total = tape.add(kl_b, kl_h);

  BoundTerms terms;
  terms.l_train = tape.value(l_train).item();
  terms.kl_backbone = tape.value(kl_b).item();
  terms.kl_head = tape.value(kl_h).item();
  terms.k_used = k;
  const double log_inv_delta = std::log(1.0 / cfg.delta);
  const double m = static_cast<double>(cfg.m);
  if (const auto* f = std::get_if<FixedGamma>(&cfg.gamma)) {
    terms.gamma_used = f->value;
  } else {
    const auto& a = std::get<AutoGamma>(cfg.gamma);
    const double kl_now = std::max(0.0, terms.kl_backbone + terms.kl_head);
    terms.gamma_used = optimal_gamma(log_inv_delta + kl_now, cfg.m, k, a.lo, a.hi);
  }
  const double gamma = terms.gamma_used;

  Var pac = tape.scale(tape.add_scalar(kl_total, log_inv_delta), 1.0 / (gamma * m));
  pac = tape.add_scalar(pac, gamma * k * k);
  terms.l_pac = tape.value(pac).item();
  terms.j_total = terms.l_train + terms.l_pac;

  if (grads) {
    const Var objective = tape.add(l_train, tape.scale(pac, pac_weight));
    tape.backward(objective);
    grads->weights.clear();
    grads->p_backbone.clear();
    grads->p_head.clear();
    for (std::size_t s = 0; s < model.num_slots(); ++s) {
      const ParamSlot info = model.slot_info(s);
      if (!info.trainable) continue;
      const Tensor gw = tape.grad(weight_vars[s]);
      const Tensor gp = tape.grad(p_vars[s]);
      grads->weights.insert(grads->weights.end(), gw.data().begin(), gw.data().end());
      auto& dst = info.group == ParamGroup::Head ? grads->p_head : grads->p_backbone;
      dst.insert(dst.end(), gp.data().begin(), gp.data().end());
    }
    grads->log_lambda = tape.grad(log_lambda).item();
    grads->log_beta = tape.grad(log_beta).item();
  }
  return terms;
}

}  // namespace pactune
