#include "pactune/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pactune/errors.hpp"

namespace pactune {

Metrics metrics(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("metrics: predictions and labels differ in length");
  Metrics out;
  if (labels.empty()) return out;
  int k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (preds[i] < 0 || labels[i] < 0) throw std::invalid_argument("metrics: negative class id");
    k = std::max({k, preds[i] + 1, labels[i] + 1});
  }
  std::vector<double> t(static_cast<std::size_t>(k), 0.0), p(static_cast<std::size_t>(k), 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t[static_cast<std::size_t>(labels[i])] += 1.0;
    p[static_cast<std::size_t>(preds[i])] += 1.0;
    if (preds[i] == labels[i]) correct += 1.0;
  }
  const double s = static_cast<double>(labels.size());
  out.accuracy = correct / s;
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t c = 0; c < t.size(); ++c) {
    pt += p[c] * t[c];
    pp += p[c] * p[c];
    tt += t[c] * t[c];
  }
  const double denom = (s * s - pp) * (s * s - tt);
  out.mcc = denom > 0.0 ? (correct * s - pt) / std::sqrt(denom) : 0.0;
  return out;
}

Metrics evaluate(const MlpClassifier& model, const Dataset& data) {
  if (data.size() == 0) return {};
  const auto preds = model.predict(data.x);
  return metrics(preds, data.y);
}

std::vector<std::size_t> importance_ranking(std::span<const double> variances) {
  std::vector<std::size_t> order(variances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return variances[a] < variances[b]; });
  return order;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return batches;
}

void validate(const FineTuneConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("fine-tune epochs must be at least 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  if (cfg.lr_backbone < 0.0 || cfg.lr_head < 0.0) throw ConfigError("learning rates must be non-negative");
}

void validate(const Stage1Config& cfg) {
  if (cfg.epochs < 1) throw ConfigError("stage-1 epochs must be at least 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  if (cfg.lr_backbone < 0.0 || cfg.lr_head < 0.0) throw ConfigError("learning rates must be non-negative");
  if (cfg.pac_weight < 0.0) throw ConfigError("pac_weight must be non-negative");
  validate(cfg.bound);
  validate(cfg.lr_noise_backbone);
  validate(cfg.lr_noise_head);
}

namespace {

void fill_eval(EpochRecord& rec, const MlpClassifier& model, const Dataset& train, const Dataset& dev) {
  try {
    rec.train_loss = loss_and_grad(model, train, nullptr);
    const Metrics m = evaluate(model, dev);
    rec.dev_accuracy = m.accuracy;
    rec.dev_mcc = m.mcc;
  } catch (const NumericError& err) {
    throw DivergenceError(std::string("evaluation diverged after epoch ") + std::to_string(rec.epoch) + ": " +
                              err.what(),
                          rec.epoch);
  }
}

void check_epoch(const EpochRecord& rec) {
  if (!std::isfinite(rec.j_total) || !std::isfinite(rec.l_train))
    throw DivergenceError("training diverged: non-finite objective at epoch " + std::to_string(rec.epoch),
                          rec.epoch);
}

void scalar_adam(AdamState& state, double& value, double grad, double lr, const AdamHyper& hyper) {
  adam_step(state, std::span<double>(&value, 1), std::span<const double>(&grad, 1), lr, false, hyper);
}

enum class StepKind { Plain, Learned, RandomLayer };

TrainResult loss_only_training(MlpClassifier model, const Dataset& train, const Dataset& dev,
                               const FineTuneConfig& cfg, RunStreams& streams, WeightOptimizer opt,
                               int first_epoch, StepKind kind, const NoiseState* noise, double sigma,
                               const char* stage) {
  validate(cfg);
  PgdConfig pgd;
  pgd.lr_backbone = cfg.lr_backbone;
  pgd.lr_head = cfg.lr_head;
  pgd.adam = cfg.adam;
  pgd.weight_decay = cfg.weight_decay;
  if (kind == StepKind::Learned) pgd.noise = LearnedNoise{noise};

  TrainResult result{std::move(model), {}, std::move(opt)};
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = first_epoch + e;
    rec.stage = stage;
    double loss_sum = 0.0;
    const auto batches = make_batches(train.size(), cfg.batch_size, streams.order);
    try {
      for (const auto& rows : batches) {
        const Dataset batch = train.subset(rows);
        double loss = 0.0;
        switch (kind) {
          case StepKind::Plain: loss = plain_step(result.model, batch, pgd, result.optimizer); break;
          case StepKind::Learned: loss = pgd_step(result.model, batch, pgd, result.optimizer, streams.noise); break;
          case StepKind::RandomLayer:
            loss = random_layer_noise_step(result.model, batch, sigma, pgd, result.optimizer, streams.noise).loss;
            break;
        }
        loss_sum += loss;
      }
    } catch (const NumericError& err) {
      throw DivergenceError(std::string("training diverged at epoch ") + std::to_string(rec.epoch) + ": " +
                                err.what(),
                            rec.epoch);
    }
    rec.l_train = loss_sum / static_cast<double>(batches.size());
    rec.l_pac = 0.0;
    rec.j_total = rec.l_train;
    if (noise) {
      rec.mean_var_backbone = noise->mean_variance(ParamGroup::Backbone);
      rec.mean_var_head = noise->mean_variance(ParamGroup::Head);
    }
    fill_eval(rec, result.model, train, dev);
    check_epoch(rec);
    result.trace.push_back(rec);
  }
  return result;
}

}  // namespace

Stage1Result stage1_train(MlpClassifier model, NoiseState noise, const Dataset& train, const Dataset& dev,
                          const Stage1Config& cfg, RunStreams& streams, int first_epoch) {
  Stage1Config effective = cfg;
  effective.bound.m = train.size();
  validate(effective);

  Stage1Result result{std::move(model), std::move(noise), {}, {}};
  NoiseOptimizer nopt;
  std::optional<KEstimator> k_est;
  if (const auto* r = std::get_if<RunningK>(&effective.bound.k)) k_est.emplace(r->ema_decay);

  for (int e = 0; e < effective.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = first_epoch + e;
    rec.stage = "stage1";
    BoundTerms acc;
    const auto batches = make_batches(train.size(), effective.batch_size, streams.order);
    try {
      for (const auto& rows : batches) {
        const Dataset batch = train.subset(rows);
        const double k = k_est ? k_est->value() : std::get<FixedK>(effective.bound.k).value;
        ObjectiveGradients g;
        const BoundTerms t =
            objective_J(result.model, result.noise, batch, effective.bound, k, streams.noise, &g, effective.pac_weight);
        if (!std::isfinite(t.j_total)) throw NumericError("objective is non-finite");

        result.optimizer.step(result.model, g.weights, effective.lr_backbone, effective.lr_head, effective.adam,
                              effective.weight_decay);
        const double lr_b = schedule_value(effective.lr_noise_backbone, nopt.updates);
        const double lr_h = schedule_value(effective.lr_noise_head, nopt.updates);
        adam_step(nopt.p_backbone, result.noise.p_backbone, g.p_backbone, lr_b, false, effective.adam);
        adam_step(nopt.p_head, result.noise.p_head, g.p_head, lr_h, false, effective.adam);
        scalar_adam(nopt.log_lambda, result.noise.log_lambda, g.log_lambda, lr_b, effective.adam);
        scalar_adam(nopt.log_beta, result.noise.log_beta, g.log_beta, lr_h, effective.adam);
        ++nopt.updates;
        if (k_est) k_est->observe(t.l_train);

        acc.l_train += t.l_train;
        acc.l_pac += t.l_pac;
        acc.kl_backbone += t.kl_backbone;
        acc.kl_head += t.kl_head;
        acc.gamma_used += t.gamma_used;
        acc.k_used += t.k_used;
      }
    } catch (const NumericError& err) {
      throw DivergenceError(std::string("stage 1 diverged at epoch ") + std::to_string(rec.epoch) + ": " +
                                err.what(),
                            rec.epoch);
    }
    const double nb = static_cast<double>(batches.size());
    rec.l_train = acc.l_train / nb;
    rec.l_pac = acc.l_pac / nb;
    rec.j_total = rec.l_train + rec.l_pac;
    rec.kl_backbone = acc.kl_backbone / nb;
    rec.kl_head = acc.kl_head / nb;
    rec.gamma = acc.gamma_used / nb;
    rec.k = acc.k_used / nb;
    rec.mean_var_backbone = result.noise.mean_variance(ParamGroup::Backbone);
    rec.mean_var_head = result.noise.mean_variance(ParamGroup::Head);
    fill_eval(rec, result.model, train, dev);
    check_epoch(rec);
    result.trace.push_back(rec);
  }
  return result;
}

TrainResult stage2_train(MlpClassifier model, const NoiseState& noise, const Dataset& train, const Dataset& dev,
                         const FineTuneConfig& cfg, RunStreams& streams, WeightOptimizer optimizer,
                         int first_epoch) {
  return loss_only_training(std::move(model), train, dev, cfg, streams, std::move(optimizer), first_epoch,
                            StepKind::Learned, &noise, 0.0, "stage2");
}

TrainResult vanilla_finetune(MlpClassifier model, const Dataset& train, const Dataset& dev,
                             const FineTuneConfig& cfg, RunStreams& streams, WeightOptimizer optimizer,
                             int first_epoch) {
  return loss_only_training(std::move(model), train, dev, cfg, streams, std::move(optimizer), first_epoch,
                            StepKind::Plain, nullptr, 0.0, "vanilla");
}

TrainResult noise_injection_finetune(MlpClassifier model, const Dataset& train, const Dataset& dev,
                                     const FineTuneConfig& cfg, double sigma, RunStreams& streams,
                                     WeightOptimizer optimizer, int first_epoch) {
  if (sigma < 0.0) throw ConfigError("noise-injection sigma must be non-negative");
  return loss_only_training(std::move(model), train, dev, cfg, streams, std::move(optimizer), first_epoch,
                            StepKind::RandomLayer, nullptr, sigma, "noise-injection");
}

PacTuningResult pac_tuning(const MlpClassifier& model, const Dataset& train, const Dataset& dev,
                           const Stage1Config& stage1, const FineTuneConfig& stage2, RunStreams& streams) {
  Stage1Result s1 = stage1_train(model, NoiseState::initialize(model), train, dev, stage1, streams);
  PacTuningResult out;
  out.noise = s1.noise;
  out.stage_boundary = stage1.epochs;
  TrainResult s2 = stage2_train(std::move(s1.model), out.noise, train, dev, stage2, streams,
                                std::move(s1.optimizer), stage1.epochs);
  out.model = std::move(s2.model);
  out.trace = std::move(s1.trace);
  out.trace.insert(out.trace.end(), s2.trace.begin(), s2.trace.end());
  return out;
}

}  // namespace pactune
