#include "pactune/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "pactune/data.hpp"
#include "pactune/gradcheck.hpp"
#include "pactune/model.hpp"
#include "pactune/pacbayes.hpp"
#include "pactune/rng.hpp"
#include "pactune/tensor.hpp"

namespace pactune {

namespace {

enum class Domain { Any, Positive, AwayFromZero };

struct InputSpec {
  Shape shape;
  Domain domain = Domain::Any;
};

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct OpCase {
  std::string name;
  std::function<std::vector<InputSpec>(Rng&)> inputs;
  std::function<Builder(Rng&, const std::vector<InputSpec>&)> make;
};

std::size_t dim(Rng& rng) { return 1 + rng.below(8); }

double draw(Rng& rng, Domain d) {
  switch (d) {
    case Domain::Positive: return rng.uniform(0.5, 2.0);
    case Domain::AwayFromZero: {
      const double mag = rng.uniform(0.1, 1.5);
      return rng.uniform() < 0.5 ? -mag : mag;
    }
    case Domain::Any: break;
  }
  return rng.uniform(-1.5, 1.5);
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// Reduces a non-scalar output with fixed random weights so every output
// element carries a distinct upstream gradient.
double check_op(const OpCase& op, std::uint64_t seed) {
  Rng rng(seed);
  const auto specs = op.inputs(rng);
  const Builder build = op.make(rng, specs);
  std::vector<double> x;
  for (const auto& s : specs)
    for (std::size_t i = 0; i < shape_size(s.shape); ++i) x.push_back(draw(rng, s.domain));

  std::vector<double> weights;
  auto f = [&](std::span<const double> v, std::vector<double>* grad) {
    Tape tape;
    std::vector<Var> leaves;
    std::size_t offset = 0;
    for (const auto& s : specs) {
      Tensor t = Tensor::zeros(s.shape);
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.data().begin());
      offset += t.size();
      leaves.push_back(tape.leaf(std::move(t), true));
    }
    Var out = build(tape, leaves);
    if (tape.value(out).rank() != 0) {
      const Tensor& o = tape.value(out);
      if (weights.size() != o.size()) {
        Rng wr(seed ^ 0x5eedULL);
        weights.resize(o.size());
        for (double& w : weights) w = wr.uniform(-1.0, 1.0);
      }
      Tensor w = Tensor::zeros(o.shape());
      std::copy(weights.begin(), weights.end(), w.data().begin());
      out = tape.sum(tape.mul(out, tape.constant(std::move(w))));
    }
    if (grad) {
      tape.backward(out);
      grad->clear();
      for (Var l : leaves) {
        const Tensor g = tape.grad(l);
        grad->insert(grad->end(), g.data().begin(), g.data().end());
      }
    }
    return tape.value(out).item();
  };
  return finite_diff_check(f, x).max_rel_error;
}

Builder binary_builder(Var (Tape::*fn)(Var, Var)) {
  return [fn](Tape& t, const std::vector<Var>& in) { return (t.*fn)(in[0], in[1]); };
}

Builder unary_builder(Var (Tape::*fn)(Var)) {
  return [fn](Tape& t, const std::vector<Var>& in) { return (t.*fn)(in[0]); };
}

std::vector<OpCase> op_cases() {
  auto same = [](Domain d) {
    return [d](Rng& r) {
      const Shape s{dim(r), dim(r)};
      return std::vector<InputSpec>{{s, d}, {s, d}};
    };
  };
  auto row_vector = [](Rng& r) {
    const std::size_t rows = dim(r), cols = dim(r);
    return std::vector<InputSpec>{{{rows, cols}, Domain::Any}, {{cols}, Domain::Any}};
  };
  auto with_scalar = [](Rng& r) {
    return std::vector<InputSpec>{{{dim(r), dim(r)}, Domain::Any}, {{}, Domain::Any}};
  };
  auto matrix = [](Domain d) {
    return [d](Rng& r) { return std::vector<InputSpec>{{{dim(r), dim(r)}, d}}; };
  };
  auto fixed = [](Builder b) { return [b](Rng&, const std::vector<InputSpec>&) { return b; }; };

  std::vector<OpCase> cases;
  cases.push_back({"add", same(Domain::Any), fixed(binary_builder(&Tape::add))});
  cases.push_back({"add (row broadcast)", row_vector, fixed(binary_builder(&Tape::add))});
  cases.push_back({"sub", same(Domain::Any), fixed(binary_builder(&Tape::sub))});
  cases.push_back({"sub (scalar broadcast)", with_scalar, fixed(binary_builder(&Tape::sub))});
  cases.push_back({"mul", same(Domain::Any), fixed(binary_builder(&Tape::mul))});
  cases.push_back({"mul (row broadcast)", row_vector, fixed(binary_builder(&Tape::mul))});
  cases.push_back({"mul (scalar broadcast)", with_scalar, fixed(binary_builder(&Tape::mul))});
  cases.push_back({"matmul",
                   [](Rng& r) {
                     const std::size_t n = dim(r), k = dim(r), m = dim(r);
                     return std::vector<InputSpec>{{{n, k}, Domain::Any}, {{k, m}, Domain::Any}};
                   },
                   fixed(binary_builder(&Tape::matmul))});
  cases.push_back({"bias_add", row_vector, fixed(binary_builder(&Tape::bias_add))});
  cases.push_back({"tanh", matrix(Domain::Any), fixed(unary_builder(&Tape::tanh))});
  cases.push_back({"relu", matrix(Domain::AwayFromZero), fixed(unary_builder(&Tape::relu))});
  cases.push_back({"exp", matrix(Domain::Any), fixed(unary_builder(&Tape::exp))});
  cases.push_back({"log", matrix(Domain::Positive), fixed(unary_builder(&Tape::log))});
  cases.push_back({"sum", matrix(Domain::Any), fixed(unary_builder(&Tape::sum))});
  cases.push_back({"mean", matrix(Domain::Any), fixed(unary_builder(&Tape::mean))});
  cases.push_back({"square", matrix(Domain::Any), fixed(unary_builder(&Tape::square))});
  cases.push_back({"softmax_cross_entropy",
                   [](Rng& r) { return std::vector<InputSpec>{{{dim(r), 1 + dim(r)}, Domain::Any}}; },
                   [](Rng& r, const std::vector<InputSpec>& specs) -> Builder {
                     std::vector<int> labels(specs[0].shape[0]);
                     for (int& l : labels) l = static_cast<int>(r.below(specs[0].shape[1]));
                     return [labels](Tape& t, const std::vector<Var>& in) {
                       return t.softmax_cross_entropy(in[0], labels);
                     };
                   }});
  cases.push_back({"gather_rows", matrix(Domain::Any),
                   [](Rng& r, const std::vector<InputSpec>& specs) -> Builder {
                     std::vector<std::size_t> rows(dim(r));
                     for (auto& i : rows) i = r.below(specs[0].shape[0]);
                     return [rows](Tape& t, const std::vector<Var>& in) { return t.gather_rows(in[0], rows); };
                   }});
  return cases;
}

// J as a function of [trainable weights, p_backbone, p_head, log_lambda,
// log_beta] with the perturbation draw pinned by reseeding.
double check_objective(std::uint64_t seed) {
  Rng rng(seed);
  MlpClassifier model({5, 6, 5, 3});
  model.init_weights(rng);
  model.set_freeze_first_layer(seed % 2 == 0);
  NoiseState noise = NoiseState::initialize(model);
  // Move away from the anchors and spread the log-stds so every KL term is active.
  std::vector<double> w = flatten_trainable(model);
  for (double& v : w) v += rng.uniform(-0.3, 0.3);
  assign_trainable(model, w);
  for (double& p : noise.p_backbone) p = rng.uniform(-3.0, -1.0);
  for (double& p : noise.p_head) p = rng.uniform(-3.0, -1.0);
  noise.log_lambda = rng.uniform(-3.0, 0.0);
  noise.log_beta = rng.uniform(-3.0, 0.0);

  Dataset batch;
  const std::size_t n = 12;
  batch.x = Tensor::zeros({n, 5});
  for (double& v : batch.x.data()) v = rng.normal();
  batch.num_classes = 3;
  for (std::size_t i = 0; i < n; ++i) batch.y.push_back(static_cast<int>(rng.below(3)));

  BoundConfig cfg;
  cfg.m = 40;
  cfg.gamma = FixedGamma{2.0};
  const double k = 0.7;
  const std::uint64_t draw_seed = derive_seed(seed, 77);

  const std::size_t nw = w.size(), nb = noise.p_backbone.size(), nh = noise.p_head.size();
  std::vector<double> x = w;
  x.insert(x.end(), noise.p_backbone.begin(), noise.p_backbone.end());
  x.insert(x.end(), noise.p_head.begin(), noise.p_head.end());
  x.push_back(noise.log_lambda);
  x.push_back(noise.log_beta);

  auto f = [&](std::span<const double> v, std::vector<double>* grad) {
    MlpClassifier m = model;
    assign_trainable(m, v.subspan(0, nw));
    NoiseState ns = noise;
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(nw), nb, ns.p_backbone.begin());
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(nw + nb), nh, ns.p_head.begin());
    ns.log_lambda = v[nw + nb + nh];
    ns.log_beta = v[nw + nb + nh + 1];
    Rng draw(draw_seed);
    ObjectiveGradients g;
    const BoundTerms t = objective_J(m, ns, batch, cfg, k, draw, grad ? &g : nullptr);
    if (grad) {
      *grad = g.weights;
      grad->insert(grad->end(), g.p_backbone.begin(), g.p_backbone.end());
      grad->insert(grad->end(), g.p_head.begin(), g.p_head.end());
      grad->push_back(g.log_lambda);
      grad->push_back(g.log_beta);
    }
    return t.j_total;
  };
  return finite_diff_check(f, x).max_rel_error;
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(int num_seeds, double op_tolerance, double objective_tolerance) {
  std::vector<GradCheckRow> rows;
  for (const auto& op : op_cases()) {
    GradCheckRow row{op.name, 0.0, op_tolerance, false};
    for (int s = 1; s <= num_seeds; ++s)
      row.max_rel_error = std::max(row.max_rel_error, check_op(op, static_cast<std::uint64_t>(s)));
    row.passed = row.max_rel_error < op_tolerance;
    rows.push_back(row);
  }
  GradCheckRow j{"objective J", 0.0, objective_tolerance, false};
  for (int s = 1; s <= num_seeds; ++s)
    j.max_rel_error = std::max(j.max_rel_error, check_objective(static_cast<std::uint64_t>(s)));
  j.passed = j.max_rel_error < objective_tolerance;
  rows.push_back(j);
  return rows;
}

}  // namespace pactune
