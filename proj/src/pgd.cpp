#include "pactune/pgd.hpp"

#include <cmath>
#include <stdexcept>

namespace pactune {

void WeightOptimizer::step(MlpClassifier& model, std::span<const double> grads, double lr_backbone,
                           double lr_head, const AdamHyper& hyper, bool weight_decay) {
  std::vector<double> flat = flatten_trainable(model);
  if (grads.size() != flat.size()) throw std::invalid_argument("WeightOptimizer: gradient size mismatch");
  const std::size_t nb = trainable_count(model, ParamGroup::Backbone);
  const std::span<double> all(flat);
  bool ok = true;
  if (nb > 0) ok = adam_step(backbone, all.first(nb), grads.first(nb), lr_backbone, weight_decay, hyper) && ok;
  if (flat.size() > nb)
    ok = adam_step(head, all.subspan(nb), grads.subspan(nb), lr_head, weight_decay, hyper) && ok;
  if (!ok) ++skipped_steps;
  assign_trainable(model, flat);
}

PerturbedGradient perturbed_gradient(std::span<const double> x, std::span<const double> noise_std,
                                     const LossGradFn& f, Rng& rng) {
  if (x.size() != noise_std.size()) throw std::invalid_argument("perturbed_gradient: size mismatch");
  PerturbedGradient out;
  out.tau = rng.normals(x.size());
  std::vector<double> shifted(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) shifted[i] = x[i] + noise_std[i] * out.tau[i];
  out.loss = f(shifted, out.grad);
  return out;
}

std::vector<double> noise_std(const MlpClassifier& model, const NoiseSource& source) {
  const std::size_t nb = trainable_count(model, ParamGroup::Backbone);
  const std::size_t nh = trainable_count(model, ParamGroup::Head);
  std::vector<double> out;
  out.reserve(nb + nh);
  if (const auto* iso = std::get_if<IsotropicNoise>(&source)) {
    if (iso->eta_backbone < 0.0 || iso->eta_head < 0.0)
      throw std::invalid_argument("isotropic noise variances must be non-negative");
    out.assign(nb, std::sqrt(iso->eta_backbone));
    out.insert(out.end(), nh, std::sqrt(iso->eta_head));
    return out;
  }
  const NoiseState* n = std::get<LearnedNoise>(source).noise;
  if (!n || n->p_backbone.size() != nb || n->p_head.size() != nh)
    throw std::invalid_argument("learned noise does not match the model's trainable parameters");
  // sqrt(exp(2p)) = exp(p)
  for (double p : n->p_backbone) out.push_back(std::exp(p));
  for (double p : n->p_head) out.push_back(std::exp(p));
  return out;
}

double pgd_step(MlpClassifier& model, const Dataset& batch, const PgdConfig& cfg, WeightOptimizer& opt,
                Rng& noise_rng) {
  const std::vector<double> clean = flatten_trainable(model);
  const std::vector<double> stds = noise_std(model, cfg.noise);
  MlpClassifier probe = model;
  const auto eval = perturbed_gradient(
      clean, stds,
      [&](std::span<const double> x, std::vector<double>& g) {
        assign_trainable(probe, x);
        return loss_and_grad(probe, batch, &g);
      },
      noise_rng);
  opt.step(model, eval.grad, cfg.lr_backbone, cfg.lr_head, cfg.adam, cfg.weight_decay);
  return eval.loss;
}

double plain_step(MlpClassifier& model, const Dataset& batch, const PgdConfig& cfg, WeightOptimizer& opt) {
  std::vector<double> grad;
  const double loss = loss_and_grad(model, batch, &grad);
  opt.step(model, grad, cfg.lr_backbone, cfg.lr_head, cfg.adam, cfg.weight_decay);
  return loss;
}

LayerNoiseResult random_layer_noise_step(MlpClassifier& model, const Dataset& batch, double sigma,
                                         const PgdConfig& cfg, WeightOptimizer& opt, Rng& noise_rng) {
  if (sigma < 0.0) throw std::invalid_argument("random_layer_noise_step: sigma must be non-negative");
  std::vector<std::size_t> candidates;
  for (std::size_t l = 0; l < model.num_layers(); ++l)
    if (model.slot_info(2 * l).trainable) candidates.push_back(l);
  if (candidates.empty()) throw std::invalid_argument("random_layer_noise_step: model has no trainable layer");

  LayerNoiseResult result;
  result.layer = candidates[noise_rng.below(candidates.size())];
  MlpClassifier probe = model;
  for (std::size_t s : {2 * result.layer, 2 * result.layer + 1})
    for (double& w : probe.slot(s).data()) w += sigma * noise_rng.normal();
  std::vector<double> grad;
  result.loss = loss_and_grad(probe, batch, &grad);
  opt.step(model, grad, cfg.lr_backbone, cfg.lr_head, cfg.adam, cfg.weight_decay);
  return result;
}

}  // namespace pactune
