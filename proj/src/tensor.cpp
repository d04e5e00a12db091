#include "pactune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace pactune {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a) {
  throw ShapeError(std::string(op_name(kind)) + ": unsupported shape " + shape_str(a));
}

// Can `small` be broadcast against `big` (scalar, or vector over the last axis)?
bool broadcastable(const Shape& small, const Shape& big) {
  if (small == big) return true;
  if (small.empty()) return true;
  return small.size() == 1 && big.size() == 2 && small[0] == big[1];
}

// Index into an operand of shape `s` for flat output index i of shape `out`.
std::size_t bcast_index(const Shape& s, const Shape& out, std::size_t i) {
  if (s == out) return i;
  if (s.empty()) return 0;
  return i % out.back();
}

Tensor reduce_to(const Tensor& full, const Shape& target) {
  if (full.shape() == target) return full;
  Tensor out = Tensor::zeros(target);
  for (std::size_t i = 0; i < full.size(); ++i) out[bcast_index(target, full.shape(), i)] += full[i];
  return out;
}

void check_finite(OpKind kind, const Tensor& t) {
  if (!t.all_finite())
    throw NumericError(std::string(op_name(kind)) + ": non-finite value in output of shape " +
                       shape_str(t.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size())
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Square: return "square";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::GatherRows: return "gather_rows";
  }
  return "?";
}

Var Tape::push(Node node) {
  if (node.kind != OpKind::Leaf) check_finite(node.kind, node.value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::Leaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::binary(OpKind kind, Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  Shape out_shape;
  if (broadcastable(y.shape(), x.shape()))
    out_shape = x.shape();
  else if (broadcastable(x.shape(), y.shape()))
    out_shape = y.shape();
  else
    shape_fail(kind, x.shape(), y.shape());

  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = x[bcast_index(x.shape(), out_shape, i)];
    const double v = y[bcast_index(y.shape(), out_shape, i)];
    switch (kind) {
      case OpKind::Add: out[i] = u + v; break;
      case OpKind::Sub: out[i] = u - v; break;
      case OpKind::Mul: out[i] = u * v; break;
      default: shape_fail(kind, x.shape(), y.shape());
    }
  }
  Node n;
  n.kind = kind;
  n.lhs = a.id;
  n.rhs = b.id;
  n.arity = 2;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }

Var Tape::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) shape_fail(OpKind::MatMul, x.shape(), y.shape());
  const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += xv * y[p * m + j];
    }
  Node node;
  node.kind = OpKind::MatMul;
  node.lhs = a.id;
  node.rhs = b.id;
  node.arity = 2;
  node.requires_grad = requires_grad(a) || requires_grad(b);
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::bias_add(Var xv, Var bv) {
  const Tensor& x = value(xv);
  const Tensor& b = value(bv);
  if (x.rank() != 2 || b.rank() != 1 || b.size() != x.cols()) shape_fail(OpKind::BiasAdd, x.shape(), b.shape());
  Tensor out = x;
  const std::size_t cols = x.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % cols];
  Node node;
  node.kind = OpKind::BiasAdd;
  node.lhs = xv.id;
  node.rhs = bv.id;
  node.arity = 2;
  node.requires_grad = requires_grad(xv) || requires_grad(bv);
  node.value = std::move(out);
  return push(std::move(node));
}

Var Tape::unary(OpKind kind, Var a) {
  const Tensor& x = value(a);
  Tensor out;
  switch (kind) {
    case OpKind::Sum:
    case OpKind::Mean: {
      if (kind == OpKind::Mean && x.size() == 0) shape_fail(kind, x.shape());
      double s = 0.0;
      for (double v : x.data()) s += v;
      out = Tensor::scalar(kind == OpKind::Mean ? s / static_cast<double>(x.size()) : s);
      break;
    }
    default: {
      out = x;
      for (double& v : out.data()) {
        switch (kind) {
          case OpKind::Tanh: v = std::tanh(v); break;
          case OpKind::Relu: v = v > 0.0 ? v : 0.0; break;
          case OpKind::Exp: v = std::exp(v); break;
          case OpKind::Log: v = std::log(v); break;
          case OpKind::Square: v = v * v; break;
          default: shape_fail(kind, x.shape());
        }
      }
    }
  }
  Node n;
  n.kind = kind;
  n.lhs = a.id;
  n.arity = 1;
  n.requires_grad = requires_grad(a);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::tanh(Var x) { return unary(OpKind::Tanh, x); }
Var Tape::relu(Var x) { return unary(OpKind::Relu, x); }
Var Tape::exp(Var x) { return unary(OpKind::Exp, x); }
Var Tape::log(Var x) { return unary(OpKind::Log, x); }
Var Tape::sum(Var x) { return unary(OpKind::Sum, x); }
Var Tape::mean(Var x) { return unary(OpKind::Mean, x); }
Var Tape::square(Var x) { return unary(OpKind::Square, x); }

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = value(logits);
  if (z.rank() != 2) shape_fail(OpKind::SoftmaxCrossEntropy, z.shape());
  const std::size_t n = z.rows(), k = z.cols();
  if (labels.size() != n)
    throw ShapeError(std::string("softmax_cross_entropy: ") + std::to_string(labels.size()) +
                     " labels for logits of shape " + shape_str(z.shape()));
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  Tensor probs = Tensor::zeros({n, k});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(k) + " classes");
    const double* row = z.data().data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
    loss += lse - row[static_cast<std::size_t>(labels[i])];
  }
  Node node;
  node.kind = OpKind::SoftmaxCrossEntropy;
  node.lhs = logits.id;
  node.arity = 1;
  node.requires_grad = requires_grad(logits);
  node.value = Tensor::scalar(loss / static_cast<double>(n));
  node.saved = std::move(probs);
  node.labels.assign(labels.begin(), labels.end());
  return push(std::move(node));
}

Var Tape::gather_rows(Var xv, std::span<const std::size_t> rows) {
  const Tensor& x = value(xv);
  if (x.rank() != 2) shape_fail(OpKind::GatherRows, x.shape());
  const std::size_t cols = x.cols();
  Tensor out = Tensor::zeros({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows())
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for shape " +
                       shape_str(x.shape()));
    std::copy_n(x.data().data() + rows[i] * cols, cols, out.data().data() + i * cols);
  }
  Node node;
  node.kind = OpKind::GatherRows;
  node.lhs = xv.id;
  node.arity = 1;
  node.requires_grad = requires_grad(xv);
  node.value = std::move(out);
  node.rows.assign(rows.begin(), rows.end());
  return push(std::move(node));
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  const Tensor reduced = reduce_to(g, nodes_[id].value.shape());
  if (!has_grad_[id]) {
    grads_[id] = reduced;
    has_grad_[id] = true;
    return;
  }
  Tensor& acc = grads_[id];
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += reduced[i];
}

void Tape::backward(Var root) {
  if (value(root).size() != 1 || value(root).rank() != 0)
    throw ShapeError("backward: root must be a scalar, got shape " + shape_str(value(root).shape()));
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), false);
  if (!nodes_[root.id].requires_grad) return;
  grads_[root.id] = Tensor::scalar(1.0);
  has_grad_[root.id] = true;

  for (std::size_t id = root.id + 1; id-- > 0;) {
    if (!has_grad_[id]) continue;
    const Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    switch (n.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::Add:
        accumulate(n.lhs, g);
        accumulate(n.rhs, g);
        break;
      case OpKind::Sub: {
        accumulate(n.lhs, g);
        Tensor neg = g;
        for (double& v : neg.data()) v = -v;
        accumulate(n.rhs, neg);
        break;
      }
      case OpKind::Mul: {
        const Tensor& a = nodes_[n.lhs].value;
        const Tensor& b = nodes_[n.rhs].value;
        const Shape& out = n.value.shape();
        Tensor ga = g, gb = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] *= b[bcast_index(b.shape(), out, i)];
          gb[i] *= a[bcast_index(a.shape(), out, i)];
        }
        accumulate(n.lhs, ga);
        accumulate(n.rhs, gb);
        break;
      }
      case OpKind::MatMul: {
        const Tensor& a = nodes_[n.lhs].value;
        const Tensor& b = nodes_[n.rhs].value;
        const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
        if (nodes_[n.lhs].requires_grad) {
          Tensor ga = Tensor::zeros(a.shape());
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t p = 0; p < inner; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * b[p * cols + j];
              ga[i * inner + p] = s;
            }
          accumulate(n.lhs, ga);
        }
        if (nodes_[n.rhs].requires_grad) {
          Tensor gb = Tensor::zeros(b.shape());
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t p = 0; p < inner; ++p) {
              const double av = a[i * inner + p];
              for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += av * g[i * cols + j];
            }
          accumulate(n.rhs, gb);
        }
        break;
      }
      case OpKind::BiasAdd:
        accumulate(n.lhs, g);
        accumulate(n.rhs, g);  // reduce_to sums over rows
        break;
      case OpKind::Tanh: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - n.value[i] * n.value[i];
        accumulate(n.lhs, gx);
        break;
      }
      case OpKind::Relu: {
        Tensor gx = g;
        const Tensor& x = nodes_[n.lhs].value;
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (!(x[i] > 0.0)) gx[i] = 0.0;
        accumulate(n.lhs, gx);
        break;
      }
      case OpKind::Exp: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= n.value[i];
        accumulate(n.lhs, gx);
        break;
      }
      case OpKind::Log: {
        Tensor gx = g;
        const Tensor& x = nodes_[n.lhs].value;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] /= x[i];
        accumulate(n.lhs, gx);
        break;
      }
      case OpKind::Square: {
        Tensor gx = g;
        const Tensor& x = nodes_[n.lhs].value;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 2.0 * x[i];
        accumulate(n.lhs, gx);
        break;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        const Tensor& x = nodes_[n.lhs].value;
        double v = g.item();
        if (n.kind == OpKind::Mean) v /= static_cast<double>(x.size());
        accumulate(n.lhs, Tensor(x.shape(), std::vector<double>(x.size(), v)));
        break;
      }
      case OpKind::SoftmaxCrossEntropy: {
        Tensor gx = n.saved;
        const std::size_t rows = gx.rows(), cols = gx.cols();
        const double s = g.item() / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          gx[i * cols + static_cast<std::size_t>(n.labels[i])] -= 1.0;
          for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] *= s;
        }
        accumulate(n.lhs, gx);
        break;
      }
      case OpKind::GatherRows: {
        const Tensor& x = nodes_[n.lhs].value;
        Tensor gx = Tensor::zeros(x.shape());
        const std::size_t cols = x.cols();
        for (std::size_t i = 0; i < n.rows.size(); ++i)
          for (std::size_t j = 0; j < cols; ++j) gx[n.rows[i] * cols + j] += g[i * cols + j];
        accumulate(n.lhs, gx);
        break;
      }
    }
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < has_grad_.size() && has_grad_[v.id]) return grads_[v.id];
  return Tensor::zeros(value(v).shape());
}

}  // namespace pactune
