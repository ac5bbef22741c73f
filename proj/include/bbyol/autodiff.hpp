#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tape records one forward pass. Leaves are created with Tape::leaf; every
// primitive below appends one node whose backward rule accumulates into the
// gradients of its inputs. Tapes are single-use and single-threaded.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bbyol::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Floor on the norm in l2_normalize so zero rows map to zero instead of NaN.
inline constexpr double kNormEpsilon = 1e-12;

class Tensor {
 public:
  /// Empty rank-1 tensor of length zero.
  Tensor() : shape_{0} {}
  /// Leaf constructor; rejects size mismatch and non-finite values.
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  /// Rows of a rank-2 tensor; 1 for rank 0/1.
  std::size_t rows() const noexcept;
  /// Columns of a rank-2 tensor; length for rank 1; 1 for scalars.
  std::size_t cols() const noexcept;

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept { return values_; }
  std::span<const double> row(std::size_t r) const;
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  const std::optional<std::vector<double>>& grad() const noexcept { return grad_; }
  std::vector<double>& ensure_grad();
  void clear_grad() noexcept { grad_.reset(); }

  bool all_finite() const noexcept;

  /// Skips validation; used by kernels whose outputs are checked separately.
  static Tensor unchecked(Shape shape, std::vector<double> values);

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

enum class OpKind {
  Leaf,
  Matmul,
  Add,
  BiasAdd,
  Tanh,
  Relu,
  Scale,
  Sum,
  Dot,
  L2Normalize,
  Mse,
  SoftmaxCrossEntropy,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to one node of a Tape.
class Var {
 public:
  Var() = default;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const std::optional<std::vector<double>>& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardRule = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const;
  const std::optional<std::vector<double>>& grad(Var v) const;
  OpKind kind(Var v) const;
  bool needs_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Gradients from earlier sweeps are discarded.
  void backward(Var loss);

  // Used by the primitive ops.
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardRule rule);
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  const std::vector<double>& node_grad(std::size_t id) const { return *nodes_[id].value.grad(); }
  /// Accumulation buffer of an input node, or nullptr when it does not need a gradient.
  std::vector<double>* input_grad(std::size_t id);
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    bool needs_grad;
  };
  void check_owner(Var v) const;

  std::vector<Node> nodes_;
};

// Primitive vocabulary. All inputs must live on the same tape.

/// (n x k) * (k x m) -> (n x m)
Var matmul(Var a, Var b);
/// Elementwise sum of equally shaped tensors.
Var add(Var a, Var b);
/// Adds a length-m bias to every row of an (n x m) matrix.
Var bias_add(Var x, Var bias);
Var tanh(Var x);
Var relu(Var x);
Var scale(Var x, double factor);
/// Sum of all entries -> scalar.
Var sum(Var x);
/// Sum of elementwise products of equally shaped tensors -> scalar.
Var dot(Var a, Var b);
/// v / max(||v||, eps), row-wise for rank-2 inputs and whole-vector for rank 1.
Var l2_normalize(Var x);
/// Mean over rows of the squared Euclidean row distance -> scalar.
Var mse(Var a, Var b);
/// Mean softmax cross-entropy of (n x C) logits against class labels -> scalar.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// Value-only kernels shared by the taped ops and inference paths.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor l2_normalize(const Tensor& x);
/// Row-wise softmax of an (n x C) matrix.
Tensor softmax_rows(const Tensor& logits);
}  // namespace kernels

using ScalarFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

/// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8).
double grad_check(const ScalarFn& loss, const GradFn& gradient, std::span<const double> params,
                  double h);

}  // namespace bbyol::ad
