#include "bbyol/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bbyol/errors.hpp"

namespace bbyol::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (numel(shape_) != values_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(values_.size()) + " values");
  }
  if (!all_finite()) throw NumericError("non-finite value in tensor");
}

Tensor Tensor::unchecked(Shape shape, std::vector<double> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::move(values);
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = numel(shape);
  return unchecked(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::rows() const noexcept { return rank() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(values_).subspan(r * c, c);
}

double Tensor::item() const {
  if (values_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

std::vector<double>& Tensor::ensure_grad() {
  if (!grad_) grad_.emplace(values_.size(), 0.0);
  return *grad_;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Matmul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Dot: return "dot";
    case OpKind::L2Normalize: return "l2_normalize";
    case OpKind::Mse: return "mse";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(*this); }
const std::optional<std::vector<double>>& Var::grad() const { return tape_->grad(*this); }

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("variable belongs to another tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite leaf tensor");
  value.set_requires_grad(requires_grad);
  value.clear_grad();
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, nullptr, requires_grad});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id_].value;
}

const std::optional<std::vector<double>>& Tape::grad(Var v) const {
  check_owner(v);
  return nodes_[v.id_].value.grad();
}

OpKind Tape::kind(Var v) const {
  check_owner(v);
  return nodes_[v.id_].kind;
}

bool Tape::needs_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id_].needs_grad;
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardRule rule) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output of ") + op_name(kind));
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError("operation input recorded after its output");
    needs = needs || nodes_[in].needs_grad;
  }
  value.set_requires_grad(needs);
  nodes_.push_back(Node{kind, std::move(value), std::move(inputs), needs ? std::move(rule) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>* Tape::input_grad(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return nullptr;
  return &node.value.ensure_grad();
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (nodes_[loss.id_].value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(nodes_[loss.id_].value.shape()));
  }
  for (Node& node : nodes_) node.value.clear_grad();
  if (!nodes_[loss.id_].needs_grad) return;
  nodes_[loss.id_].value.ensure_grad()[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || !node.rule || !node.value.grad()) continue;
    node.rule(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(n * m, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return Tensor::unchecked({n, m}, std::move(out));
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.size() != x.shape()[1]) {
    throw DimensionError("bias_add " + shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const std::size_t m = bias.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % m];
  return Tensor::unchecked(x.shape(), std::move(out));
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  std::transform(x.values().begin(), x.values().end(), out.begin(), [](double v) { return std::tanh(v); });
  return Tensor::unchecked(x.shape(), std::move(out));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  std::transform(x.values().begin(), x.values().end(), out.begin(),
                 [](double v) { return v > 0.0 ? v : 0.0; });
  return Tensor::unchecked(x.shape(), std::move(out));
}

Tensor l2_normalize(const Tensor& x) {
  if (x.rank() == 0 || x.rank() > 2) throw DimensionError("l2_normalize expects rank 1 or 2");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = x.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double denom = std::max(std::sqrt(sq), kNormEpsilon);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] / denom;
  }
  return Tensor::unchecked(x.shape(), std::move(out));
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax expects an (n x C) matrix");
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp(row[c] - mx);
      z += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return Tensor::unchecked(logits.shape(), std::move(out));
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Primitive ops

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw ContractError("operands live on different tapes");
  return *a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  return tape.record(OpKind::Matmul, std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Tensor& av = t.node_value(in[0]);
    const Tensor& bv = t.node_value(in[1]);
    const auto& g = t.node_grad(self);
    const std::size_t n = av.shape()[0], k = av.shape()[1], m = bv.shape()[1];
    if (auto* ga = t.input_grad(in[0])) {
      // dA = G * B^T
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
          (*ga)[i * k + p] += acc;
        }
    }
    if (auto* gb = t.input_grad(in[1])) {
      // dB = A^T * G
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          double* gbrow = gb->data() + p * m;
          const double* grow = g.data() + i * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  std::vector<double> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return tape.record(OpKind::Add, Tensor::unchecked(a.value().shape(), std::move(out)), {a.id(), b.id()},
                     [](Tape& t, std::size_t self) {
                       const auto& g = t.node_grad(self);
                       for (std::size_t in : t.inputs(self))
                         if (auto* gi = t.input_grad(in))
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                     });
}

Var bias_add(Var x, Var bias) {
  Tape& tape = same_tape(x, bias);
  Tensor out = kernels::bias_add(x.value(), bias.value());
  return tape.record(OpKind::BiasAdd, std::move(out), {x.id(), bias.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const auto& g = t.node_grad(self);
    if (auto* gx = t.input_grad(in[0]))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (auto* gb = t.input_grad(in[1])) {
      const std::size_t m = gb->size();
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % m] += g[i];
    }
  });
}

Var tanh(Var x) {
  Tape& tape = *x.tape();
  Tensor out = kernels::tanh(x.value());
  return tape.record(OpKind::Tanh, std::move(out), {x.id()}, [](Tape& t, std::size_t self) {
    const auto& g = t.node_grad(self);
    const Tensor& y = t.node_value(self);
    if (auto* gx = t.input_grad(t.inputs(self)[0]))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var x) {
  Tape& tape = *x.tape();
  Tensor out = kernels::relu(x.value());
  return tape.record(OpKind::Relu, std::move(out), {x.id()}, [](Tape& t, std::size_t self) {
    const auto& g = t.node_grad(self);
    const std::size_t in = t.inputs(self)[0];
    const Tensor& xv = t.node_value(in);
    if (auto* gx = t.input_grad(in))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += xv[i] > 0.0 ? g[i] : 0.0;
  });
}

Var scale(Var x, double factor) {
  Tape& tape = *x.tape();
  if (!std::isfinite(factor)) throw NumericError("non-finite scale factor");
  std::vector<double> out(x.value().values().begin(), x.value().values().end());
  for (double& v : out) v *= factor;
  return tape.record(OpKind::Scale, Tensor::unchecked(x.value().shape(), std::move(out)), {x.id()},
                     [factor](Tape& t, std::size_t self) {
                       const auto& g = t.node_grad(self);
                       if (auto* gx = t.input_grad(t.inputs(self)[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
                     });
}

Var sum(Var x) {
  Tape& tape = *x.tape();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return tape.record(OpKind::Sum, Tensor::unchecked({}, {s}), {x.id()}, [](Tape& t, std::size_t self) {
    const double g = t.node_grad(self)[0];
    if (auto* gx = t.input_grad(t.inputs(self)[0]))
      for (double& v : *gx) v += g;
  });
}

Var dot(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  return tape.record(OpKind::Dot, Tensor::unchecked({}, {s}), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const double g = t.node_grad(self)[0];
    const auto& in = t.inputs(self);
    const Tensor& av = t.node_value(in[0]);
    const Tensor& bv = t.node_value(in[1]);
    if (auto* ga = t.input_grad(in[0]))
      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g * bv[i];
    if (auto* gb = t.input_grad(in[1]))
      for (std::size_t i = 0; i < bv.size(); ++i) (*gb)[i] += g * av[i];
  });
}

Var l2_normalize(Var x) {
  Tape& tape = *x.tape();
  Tensor out = kernels::l2_normalize(x.value());
  return tape.record(OpKind::L2Normalize, std::move(out), {x.id()}, [](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    auto* gx = t.input_grad(in);
    if (!gx) return;
    const Tensor& xv = t.node_value(in);
    const auto& g = t.node_grad(self);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    // y = v/r above the floor: dL/dv = g/r - v (g.v) / r^3.  Below it y = v/eps is linear.
    for (std::size_t r = 0; r < rows; ++r) {
      const auto v = xv.row(r);
      double sq = 0.0, gv = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        sq += v[c] * v[c];
        gv += g[r * cols + c] * v[c];
      }
      const double norm = std::sqrt(sq);
      const double d = std::max(norm, kNormEpsilon);
      const double coupling = norm > kNormEpsilon ? gv / (norm * norm * norm) : 0.0;
      for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += g[r * cols + c] / d - v[c] * coupling;
    }
  });
}

Var mse(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() == 0 || av.rank() > 2) throw DimensionError("mse expects rank 1 or 2");
  const double rows = static_cast<double>(av.rows());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  return tape.record(OpKind::Mse, Tensor::unchecked({}, {s / rows}), {a.id(), b.id()},
                     [rows](Tape& t, std::size_t self) {
                       const double g = t.node_grad(self)[0] * 2.0 / rows;
                       const auto& in = t.inputs(self);
                       const Tensor& av = t.node_value(in[0]);
                       const Tensor& bv = t.node_value(in[1]);
                       if (auto* ga = t.input_grad(in[0]))
                         for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g * (av[i] - bv[i]);
                       if (auto* gb = t.input_grad(in[1]))
                         for (std::size_t i = 0; i < bv.size(); ++i) (*gb)[i] -= g * (av[i] - bv[i]);
                     });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = *logits.tape();
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw DimensionError("softmax_cross_entropy expects (n x C) logits");
  const std::size_t n = lv.rows(), classes = lv.cols();
  if (labels.size() != n) throw DimensionError("label count does not match logit rows");
  if (n == 0) throw ContractError("softmax_cross_entropy on an empty batch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DataError("label out of range");

  Tensor probs = kernels::softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss += (std::log(z) + mx) - row[static_cast<std::size_t>(labels[r])];
  }
  loss /= static_cast<double>(n);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return tape.record(OpKind::SoftmaxCrossEntropy, Tensor::unchecked({}, {loss}), {logits.id()},
                     [probs = std::move(probs), label_copy = std::move(label_copy)](Tape& t, std::size_t self) {
                       auto* gl = t.input_grad(t.inputs(self)[0]);
                       if (!gl) return;
                       const std::size_t n = probs.rows(), classes = probs.cols();
                       const double g = t.node_grad(self)[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t c = 0; c < classes; ++c) {
                           const double target = static_cast<std::size_t>(label_copy[r]) == c ? 1.0 : 0.0;
                           (*gl)[r * classes + c] += g * (probs.at(r, c) - target);
                         }
                     });
}

// ---------------------------------------------------------------------------

double grad_check(const ScalarFn& loss, const GradFn& gradient, std::span<const double> params, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check step must be positive");
  std::vector<double> point(params.begin(), params.end());
  const std::vector<double> analytic = gradient(point);
  if (analytic.size() != point.size()) throw DimensionError("gradient length does not match parameters");
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = loss(point);
    point[i] = saved - h;
    const double down = loss(point);
    point[i] = saved;
    const double central = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace bbyol::ad
