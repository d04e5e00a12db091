#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pactune {

/// Raised when a forward op produces NaN/Inf or a tensor op is fed
/// mismatched shapes. Training loops translate it into a divergence report.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix; nothing in this library needs more.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  MatMul,
  BiasAdd,
  Tanh,
  Relu,
  Exp,
  Log,
  Sum,
  Mean,
  Square,
  SoftmaxCrossEntropy,
  GatherRows,
};

const char* op_name(OpKind kind);

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// parent id is smaller than its child's id and a single reverse sweep
/// visits each node once.
///
/// Add/Sub/Mul broadcast the smaller operand when it is a scalar or when it
/// is a vector matching the last axis of the other operand.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var bias_add(Var x, Var bias);
  Var tanh(Var x);
  Var relu(Var x);
  Var exp(Var x);
  Var log(Var x);
  Var sum(Var x);
  Var mean(Var x);
  Var square(Var x);
  /// Mean over rows of -log softmax(logits)[label].
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);
  Var gather_rows(Var x, std::span<const std::size_t> rows);

  Var scale(Var x, double c) { return mul(x, constant(c)); }
  Var add_scalar(Var x, double c) { return add(x, constant(c)); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Runs the reverse sweep from a scalar root. Previous gradients are
  /// discarded.
  void backward(Var root);

  /// Gradient of the last backward root w.r.t. v; zeros if v took no part.
  Tensor grad(Var v) const;

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    int arity = 0;
    bool requires_grad = false;
    Tensor value;
    Tensor saved;  // softmax probabilities for the fused cross-entropy
    std::vector<int> labels;
    std::vector<std::size_t> rows;
  };

  Var push(Node node);
  Var binary(OpKind kind, Var a, Var b);
  Var unary(OpKind kind, Var a);
  void accumulate(std::size_t id, const Tensor& g);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
};

}  // namespace pactune
