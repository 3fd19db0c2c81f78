#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every primitive records a node on a Tape. The backward sweep is itself
// expressed with the same primitives, so when it runs with create_graph=true
// the adjoints are ordinary tape nodes and can be differentiated again
// (double backpropagation).

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradshield/tensor.hpp"

namespace gradshield {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  AddScalar,
  Square,
  MulScalar,  // size-1 tensor times tensor
  MulConst,   // tensor times constant tensor (no gradient to the constant)
  AddConst,
  Sum,
  ExpandScalar,
  MatMul,
  Transpose,
  BiasAdd,
  BiasReduce,
  BiasExpand,
  Reshape,
  Exp,
  Log,
  Reciprocal,
  Tanh,
  Sigmoid,
  Softplus,
  LogSoftmax,
  RowSum,
  ColExpand,
  Conv2d,
  ConvInputGrad,
  ConvWeightGrad,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Neg: return "neg";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Square: return "square";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::MulConst: return "mul_const";
    case OpKind::AddConst: return "add_const";
    case OpKind::Sum: return "sum";
    case OpKind::ExpandScalar: return "expand_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::BiasReduce: return "bias_reduce";
    case OpKind::BiasExpand: return "bias_expand";
    case OpKind::Reshape: return "reshape";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Reciprocal: return "reciprocal";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softplus: return "softplus";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::RowSum: return "row_sum";
    case OpKind::ColExpand: return "col_expand";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ConvInputGrad: return "conv_input_grad";
    case OpKind::ConvWeightGrad: return "conv_weight_grad";
  }
  return "?";
}

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

namespace kernels {

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor zip(const char* op, const Tensor& a, const Tensor& b, F f) {
  require_same(op, a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B[p * n];
      double* crow = &C[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expects rank 2, got " + shape_str(a.shape()));
  std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

inline std::size_t bias_channels(const Shape& s) {
  if (s.size() < 2) throw ShapeError("bias: expects rank >= 2, got " + shape_str(s));
  return s[1];
}

inline Tensor bias_add(const Tensor& x, const Tensor& b) {
  std::size_t c = bias_channels(x.shape());
  if (b.rank() != 1 || b.dim(0) != c) {
    throw ShapeError("bias_add: bias " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::size_t n = x.dim(0), inner = x.size() / (n * c);
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = &out.data()[(i * c + ch) * inner];
      for (std::size_t j = 0; j < inner; ++j) p[j] += b[ch];
    }
  return out;
}

inline Tensor bias_reduce(const Tensor& x) {
  std::size_t c = bias_channels(x.shape());
  std::size_t n = x.dim(0), inner = x.size() / std::max<std::size_t>(n * c, 1);
  Tensor out({c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = &x.data()[(i * c + ch) * inner];
      for (std::size_t j = 0; j < inner; ++j) out[ch] += p[j];
    }
  return out;
}

inline Tensor bias_expand(const Tensor& b, const Shape& shape) { return bias_add(Tensor(shape), b); }

inline Tensor log_softmax(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("log_softmax: expects [N,K], got " + shape_str(z.shape()));
  std::size_t n = z.dim(0), k = z.dim(1);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = &z.data()[i * k];
    double m = *std::max_element(r, r + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(r[j] - m);
    double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = r[j] - lse;
  }
  return out;
}

inline Tensor row_sum(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("row_sum: expects [N,K], got " + shape_str(x.shape()));
  std::size_t n = x.dim(0), k = x.dim(1);
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i] += x[i * k + j];
  return out;
}

inline Tensor col_expand(const Tensor& x, std::size_t k) {
  if (x.rank() != 2 || x.dim(1) != 1) throw ShapeError("col_expand: expects [N,1], got " + shape_str(x.shape()));
  std::size_t n = x.dim(0);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i];
  return out;
}

inline std::size_t conv_out(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  if (in + 2 * g.pad < kernel) throw ShapeError("conv2d: kernel larger than padded input");
  return (in + 2 * g.pad - kernel) / g.stride + 1;
}

/// Shared index walk for the three convolution kernels: calls
/// f(x_index, w_index, y_index) for every (input, weight, output) triple.
template <class F>
void conv_walk(const Shape& xs, const Shape& ws, const ConvGeometry& g, F f) {
  std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  std::size_t o = ws[0], kh = ws[2], kw = ws[3];
  std::size_t ho = conv_out(h, kh, g), wo = conv_out(w, kw, g);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t ic = 0; ic < c; ++ic)
        for (std::size_t p = 0; p < kh; ++p)
          for (std::size_t q = 0; q < kw; ++q) {
            std::size_t wi = ((oc * c + ic) * kh + p) * kw + q;
            for (std::size_t i = 0; i < ho; ++i) {
              std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + p) - static_cast<std::ptrdiff_t>(g.pad);
              if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
              std::size_t xrow = ((b * c + ic) * h + static_cast<std::size_t>(r)) * w;
              std::size_t yrow = ((b * o + oc) * ho + i) * wo;
              for (std::size_t j = 0; j < wo; ++j) {
                std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j * g.stride + q) - static_cast<std::ptrdiff_t>(g.pad);
                if (s < 0 || s >= static_cast<std::ptrdiff_t>(w)) continue;
                f(xrow + static_cast<std::size_t>(s), wi, yrow + j);
              }
            }
          }
}

inline Shape conv_output_shape(const Shape& xs, const Shape& ws, const ConvGeometry& g) {
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || g.stride == 0) {
    throw ShapeError("conv2d: shape mismatch input " + shape_str(xs) + " weight " + shape_str(ws));
  }
  return {xs[0], ws[0], conv_out(xs[2], ws[2], g), conv_out(xs[3], ws[3], g)};
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
  Tensor y(conv_output_shape(x.shape(), w.shape(), g));
  auto X = x.data();
  auto W = w.data();
  auto Y = y.data();
  conv_walk(x.shape(), w.shape(), g, [&](std::size_t xi, std::size_t wi, std::size_t yi) { Y[yi] += W[wi] * X[xi]; });
  return y;
}

inline Tensor conv_input_grad(const Tensor& gy, const Tensor& w, const Shape& xs, const ConvGeometry& g) {
  if (conv_output_shape(xs, w.shape(), g) != gy.shape()) {
    throw ShapeError("conv_input_grad: upstream " + shape_str(gy.shape()) + " does not match conv output");
  }
  Tensor gx(xs);
  auto G = gy.data();
  auto W = w.data();
  auto X = gx.data();
  conv_walk(xs, w.shape(), g, [&](std::size_t xi, std::size_t wi, std::size_t yi) { X[xi] += W[wi] * G[yi]; });
  return gx;
}

inline Tensor conv_weight_grad(const Tensor& x, const Tensor& gy, const Shape& ws, const ConvGeometry& g) {
  if (conv_output_shape(x.shape(), ws, g) != gy.shape()) {
    throw ShapeError("conv_weight_grad: upstream " + shape_str(gy.shape()) + " does not match conv output");
  }
  Tensor gw(ws);
  auto G = gy.data();
  auto X = x.data();
  auto W = gw.data();
  conv_walk(x.shape(), ws, g, [&](std::size_t xi, std::size_t wi, std::size_t yi) { W[wi] += X[xi] * G[yi]; });
  return gw;
}

inline double sigmoid(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

}  // namespace kernels

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Gradients of a scalar or seeded output with respect to the named leaves of a tape.
struct GradientBundle {
  std::map<std::string, Tensor> params;
  std::optional<Tensor> input;
};

class Tape {
 public:
  static constexpr const char* kInputName = "input";

  struct Node {
    OpKind op = OpKind::Leaf;
    std::array<int, 2> in{-1, -1};
    Tensor value;
    bool requires_grad = false;
    double scalar = 0.0;
    Shape shape_attr;
    ConvGeometry conv;
    std::shared_ptr<const Tensor> constant;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable or input leaf. Named leaves are reported by vjp(); the name
  /// "input" is reported as the input gradient.
  Var leaf(Tensor value, bool requires_grad, const std::string& name = {}) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    Var v = push(std::move(n));
    if (!name.empty()) {
      if (named_.count(name)) throw std::invalid_argument("tape: duplicate leaf name '" + name + "'");
      named_[name] = v.id();
    }
    return v;
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  const std::map<std::string, int>& named_leaves() const { return named_; }

  void check(const Var& v, const char* what) const {
    if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
      throw std::invalid_argument(std::string(what) + ": node is not on this tape");
    }
  }

  /// Records a computed node. Inputs must already be on the tape.
  Var record(OpKind op, std::initializer_list<Var> inputs, Tensor value) {
    return record(op, inputs, std::move(value), Node());
  }

  Var record(OpKind op, std::initializer_list<Var> inputs, Tensor value, Node attrs) {
    attrs.op = op;
    attrs.value = std::move(value);
    bool rg = false;
    std::size_t k = 0;
    for (const Var& v : inputs) {
      check(v, op_name(op));
      attrs.in[k++] = v.id();
      rg = rg || nodes_[static_cast<std::size_t>(v.id())].requires_grad;
    }
    attrs.requires_grad = rg && grad_enabled_;
    return push(std::move(attrs));
  }

  /// Reverse sweep from `output` seeded with `seed`. Returns one adjoint per
  /// entry of `wrt` (zeros when `output` does not depend on it). With
  /// create_graph the adjoints are differentiable tape nodes.
  std::vector<Var> gradients(Var output, const Tensor& seed, std::span<const Var> wrt, bool create_graph);

  bool grad_enabled() const { return grad_enabled_; }

  class NoGradGuard {
   public:
    explicit NoGradGuard(Tape& t) : tape_(t), prev_(t.grad_enabled_) { t.grad_enabled_ = false; }
    ~NoGradGuard() { tape_.grad_enabled_ = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    Tape& tape_;
    bool prev_;
  };

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::array<Var, 2> backprop(int id, Var g);

  std::deque<Node> nodes_;  // stable addresses: Var::value() references survive later pushes
  std::map<std::string, int> named_;
  bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw std::invalid_argument("var: not attached to a tape");
  return tape_->node(id_).value;
}

inline bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

// ---------------------------------------------------------------------------
// Primitive operations

namespace detail {
inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("operation on a detached var");
  return *a.tape();
}
inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
  return tape_of(a);
}
}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::tape_of(a, b).record(OpKind::Add, {a, b},
                                      kernels::zip("add", a.value(), b.value(), std::plus<>()));
}
inline Var sub(Var a, Var b) {
  return detail::tape_of(a, b).record(OpKind::Sub, {a, b},
                                      kernels::zip("sub", a.value(), b.value(), std::minus<>()));
}
inline Var mul(Var a, Var b) {
  return detail::tape_of(a, b).record(OpKind::Mul, {a, b},
                                      kernels::zip("mul", a.value(), b.value(), std::multiplies<>()));
}
inline Var neg(Var a) {
  return detail::tape_of(a).record(OpKind::Neg, {a}, kernels::map(a.value(), [](double v) { return -v; }));
}
inline Var scale(Var a, double c) {
  Tape::Node attrs;
  attrs.scalar = c;
  return detail::tape_of(a).record(OpKind::Scale, {a}, kernels::map(a.value(), [c](double v) { return c * v; }),
                                   std::move(attrs));
}
inline Var add_scalar(Var a, double c) {
  Tape::Node attrs;
  attrs.scalar = c;
  return detail::tape_of(a).record(OpKind::AddScalar, {a}, kernels::map(a.value(), [c](double v) { return v + c; }),
                                   std::move(attrs));
}
inline Var square(Var a) {
  return detail::tape_of(a).record(OpKind::Square, {a}, kernels::map(a.value(), [](double v) { return v * v; }));
}
/// Size-1 tensor `s` times tensor `x`.
inline Var mul_scalar(Var s, Var x) {
  if (s.value().size() != 1) throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  double c = s.value()[0];
  return detail::tape_of(s, x).record(OpKind::MulScalar, {s, x},
                                      kernels::map(x.value(), [c](double v) { return c * v; }));
}
inline Var mul_const(Var a, std::shared_ptr<const Tensor> c) {
  kernels::require_same("mul_const", a.value(), *c);
  Tape::Node attrs;
  Tensor v = kernels::zip("mul_const", a.value(), *c, std::multiplies<>());
  attrs.constant = std::move(c);
  return detail::tape_of(a).record(OpKind::MulConst, {a}, std::move(v), std::move(attrs));
}
inline Var mul_const(Var a, Tensor c) { return mul_const(a, std::make_shared<const Tensor>(std::move(c))); }
inline Var add_const(Var a, std::shared_ptr<const Tensor> c) {
  Tape::Node attrs;
  Tensor v = kernels::zip("add_const", a.value(), *c, std::plus<>());
  attrs.constant = std::move(c);
  return detail::tape_of(a).record(OpKind::AddConst, {a}, std::move(v), std::move(attrs));
}
inline Var add_const(Var a, Tensor c) { return add_const(a, std::make_shared<const Tensor>(std::move(c))); }
inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::tape_of(a).record(OpKind::Sum, {a}, Tensor::scalar(s));
}
inline Var expand_scalar(Var a, const Shape& shape) {
  if (a.value().size() != 1) throw ShapeError("expand_scalar: operand has shape " + shape_str(a.shape()));
  Tape::Node attrs;
  attrs.shape_attr = shape;
  return detail::tape_of(a).record(OpKind::ExpandScalar, {a}, Tensor(shape, a.value()[0]), std::move(attrs));
}
inline Var matmul(Var a, Var b) {
  return detail::tape_of(a, b).record(OpKind::MatMul, {a, b}, kernels::matmul(a.value(), b.value()));
}
inline Var transpose(Var a) {
  return detail::tape_of(a).record(OpKind::Transpose, {a}, kernels::transpose(a.value()));
}
/// Adds a per-channel bias (axis 1) to an [N,C,...] tensor.
inline Var bias_add(Var x, Var b) {
  return detail::tape_of(x, b).record(OpKind::BiasAdd, {x, b}, kernels::bias_add(x.value(), b.value()));
}
inline Var bias_reduce(Var x) {
  return detail::tape_of(x).record(OpKind::BiasReduce, {x}, kernels::bias_reduce(x.value()));
}
inline Var bias_expand(Var b, const Shape& shape) {
  Tape::Node attrs;
  attrs.shape_attr = shape;
  return detail::tape_of(b).record(OpKind::BiasExpand, {b}, kernels::bias_expand(b.value(), shape), std::move(attrs));
}
inline Var reshape(Var a, const Shape& shape) {
  return detail::tape_of(a).record(OpKind::Reshape, {a}, a.value().reshaped(shape));
}
inline Var exp(Var a) {
  return detail::tape_of(a).record(OpKind::Exp, {a}, kernels::map(a.value(), [](double v) { return std::exp(v); }));
}
inline Var log(Var a) {
  return detail::tape_of(a).record(OpKind::Log, {a}, kernels::map(a.value(), [](double v) { return std::log(v); }));
}
inline Var reciprocal(Var a) {
  return detail::tape_of(a).record(OpKind::Reciprocal, {a},
                                   kernels::map(a.value(), [](double v) { return 1.0 / v; }));
}
inline Var tanh(Var a) {
  return detail::tape_of(a).record(OpKind::Tanh, {a}, kernels::map(a.value(), [](double v) { return std::tanh(v); }));
}
inline Var sigmoid(Var a) {
  return detail::tape_of(a).record(OpKind::Sigmoid, {a}, kernels::map(a.value(), kernels::sigmoid));
}
inline Var softplus(Var a) {
  return detail::tape_of(a).record(OpKind::Softplus, {a}, kernels::map(a.value(), kernels::softplus));
}
inline Var log_softmax(Var z) {
  return detail::tape_of(z).record(OpKind::LogSoftmax, {z}, kernels::log_softmax(z.value()));
}
inline Var row_sum(Var x) { return detail::tape_of(x).record(OpKind::RowSum, {x}, kernels::row_sum(x.value())); }
inline Var col_expand(Var x, std::size_t k) {
  return detail::tape_of(x).record(OpKind::ColExpand, {x}, kernels::col_expand(x.value(), k));
}
inline Var conv2d(Var x, Var w, ConvGeometry g) {
  Tape::Node attrs;
  attrs.conv = g;
  return detail::tape_of(x, w).record(OpKind::Conv2d, {x, w}, kernels::conv2d(x.value(), w.value(), g),
                                      std::move(attrs));
}
inline Var conv_input_grad(Var gy, Var w, const Shape& x_shape, ConvGeometry g) {
  Tape::Node attrs;
  attrs.conv = g;
  attrs.shape_attr = x_shape;
  return detail::tape_of(gy, w).record(OpKind::ConvInputGrad, {gy, w},
                                       kernels::conv_input_grad(gy.value(), w.value(), x_shape, g), std::move(attrs));
}
inline Var conv_weight_grad(Var x, Var gy, const Shape& w_shape, ConvGeometry g) {
  Tape::Node attrs;
  attrs.conv = g;
  attrs.shape_attr = w_shape;
  return detail::tape_of(x, gy).record(OpKind::ConvWeightGrad, {x, gy},
                                       kernels::conv_weight_grad(x.value(), gy.value(), w_shape, g), std::move(attrs));
}

/// ReLU with derivative 0 at exactly 0.
inline Var relu(Var x) {
  auto mask = std::make_shared<const Tensor>(kernels::map(x.value(), [](double v) { return v > 0 ? 1.0 : 0.0; }));
  return mul_const(x, std::move(mask));
}
inline Var leaky_relu(Var x, double slope) {
  auto mask =
      std::make_shared<const Tensor>(kernels::map(x.value(), [slope](double v) { return v > 0 ? 1.0 : slope; }));
  return mul_const(x, std::move(mask));
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

// ---------------------------------------------------------------------------
// Reverse sweep

inline std::array<Var, 2> Tape::backprop(int id, Var g) {
  // Local copy of the attributes; cheap and independent of the node store.
  struct {
    OpKind op;
    std::array<int, 2> in;
    double scalar;
    ConvGeometry conv;
    std::shared_ptr<const Tensor> constant;
  } n;
  {
    const Node& src = nodes_[static_cast<std::size_t>(id)];
    n = {src.op, src.in, src.scalar, src.conv, src.constant};
  }
  Var self(this, id);
  Var a(this, n.in[0]);
  Var b(this, n.in[1]);
  switch (n.op) {
    case OpKind::Leaf: return {};
    case OpKind::Add: return {g, g};
    case OpKind::Sub: return {g, neg(g)};
    case OpKind::Mul: return {mul(g, b), mul(g, a)};
    case OpKind::Neg: return {neg(g), {}};
    case OpKind::Scale: return {scale(g, n.scalar), {}};
    case OpKind::AddScalar: return {g, {}};
    case OpKind::Square: return {mul(g, scale(a, 2.0)), {}};
    case OpKind::MulScalar: return {reshape(sum(mul(g, b)), a.shape()), mul_scalar(a, g)};
    case OpKind::MulConst: return {mul_const(g, n.constant), {}};
    case OpKind::AddConst: return {g, {}};
    case OpKind::Sum: return {expand_scalar(g, a.shape()), {}};
    case OpKind::ExpandScalar: return {reshape(sum(g), a.shape()), {}};
    case OpKind::MatMul: return {matmul(g, transpose(b)), matmul(transpose(a), g)};
    case OpKind::Transpose: return {transpose(g), {}};
    case OpKind::BiasAdd: return {g, bias_reduce(g)};
    case OpKind::BiasReduce: return {bias_expand(g, a.shape()), {}};
    case OpKind::BiasExpand: return {bias_reduce(g), {}};
    case OpKind::Reshape: return {reshape(g, a.shape()), {}};
    case OpKind::Exp: return {mul(g, self), {}};
    case OpKind::Log: return {mul(g, reciprocal(a)), {}};
    case OpKind::Reciprocal: return {neg(mul(g, square(self))), {}};
    case OpKind::Tanh: return {sub(g, mul(g, square(self))), {}};
    case OpKind::Sigmoid: return {mul(g, sub(self, square(self))), {}};
    case OpKind::Softplus: return {mul(g, sigmoid(a)), {}};
    case OpKind::LogSoftmax: return {sub(g, mul(exp(self), col_expand(row_sum(g), a.shape()[1]))), {}};
    case OpKind::RowSum: return {col_expand(g, a.shape()[1]), {}};
    case OpKind::ColExpand: return {row_sum(g), {}};
    case OpKind::Conv2d:
      return {conv_input_grad(g, b, a.shape(), n.conv), conv_weight_grad(a, g, b.shape(), n.conv)};
    case OpKind::ConvInputGrad:
      // a = upstream gradient of the forward conv, b = weight
      return {conv2d(g, b, n.conv), conv_weight_grad(g, a, b.shape(), n.conv)};
    case OpKind::ConvWeightGrad:
      // a = forward input, b = upstream gradient of the forward conv
      return {conv_input_grad(b, g, a.shape(), n.conv), conv2d(a, g, n.conv)};
  }
  return {};
}

inline std::vector<Var> Tape::gradients(Var output, const Tensor& seed, std::span<const Var> wrt, bool create_graph) {
  check(output, "gradients");
  if (seed.shape() != output.shape()) {
    throw ShapeError("gradients: seed shape " + shape_str(seed.shape()) + " does not match output shape " +
                     shape_str(output.shape()));
  }
  for (const Var& w : wrt) check(w, "gradients");

  const std::size_t end = static_cast<std::size_t>(output.id()) + 1;
  // needed[i]: node i lies on a path from some wrt target to the output.
  std::vector<char> needed(end, 0);
  for (const Var& w : wrt)
    if (static_cast<std::size_t>(w.id()) < end) needed[static_cast<std::size_t>(w.id())] = 1;
  for (std::size_t i = 0; i < end; ++i) {
    const Node& n = nodes_[i];
    if (needed[i] || !n.requires_grad || n.op == OpKind::Leaf) continue;
    for (int in : n.in)
      if (in >= 0 && needed[static_cast<std::size_t>(in)]) needed[i] = 1;
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace(*this);

  std::vector<int> adj(end, -1);
  adj[end - 1] = constant(seed).id();
  for (std::size_t i = end; i-- > 0;) {
    if (adj[i] < 0 || !needed[i] || nodes_[i].op == OpKind::Leaf) continue;
    auto in = nodes_[i].in;
    auto contrib = backprop(static_cast<int>(i), Var(this, adj[i]));
    for (std::size_t k = 0; k < 2; ++k) {
      if (in[k] < 0 || !contrib[k].valid()) continue;
      auto j = static_cast<std::size_t>(in[k]);
      if (!needed[j]) continue;
      adj[j] = adj[j] < 0 ? contrib[k].id() : add(Var(this, adj[j]), contrib[k]).id();
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto j = static_cast<std::size_t>(w.id());
    if (j < end && adj[j] >= 0) {
      out.emplace_back(this, adj[j]);
    } else {
      out.push_back(constant(Tensor(w.shape())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundled gradient entry points

/// seedᵀ·J for every named leaf of the tape (parameters and the "input" leaf).
inline GradientBundle vjp(Tape& tape, Var output, const Tensor& seed) {
  tape.check(output, "vjp");
  std::vector<Var> leaves;
  std::vector<std::string> names;
  for (const auto& [name, id] : tape.named_leaves()) {
    if (!tape.node(id).requires_grad) continue;
    names.push_back(name);
    leaves.emplace_back(&tape, id);
  }
  auto grads = tape.gradients(output, seed, leaves, false);
  GradientBundle out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == Tape::kInputName) {
      out.input = grads[i].value();
    } else {
      out.params.emplace(names[i], grads[i].value());
    }
  }
  return out;
}

/// Parameter gradient of a scalar penalty that was built from adjoints of a
/// differentiable (create_graph) first-order sweep.
inline GradientBundle grad_through_grad(Tape& tape, Var penalty) {
  tape.check(penalty, "grad_through_grad");
  if (penalty.value().size() != 1) {
    throw ShapeError("grad_through_grad: penalty is not scalar, shape " + shape_str(penalty.shape()));
  }
  if (!penalty.requires_grad()) {
    throw std::logic_error(
        "grad_through_grad: penalty has no differentiable path to any leaf; "
        "was the first-order sweep recorded with create_graph?");
  }
  return vjp(tape, penalty, Tensor(penalty.shape(), 1.0));
}

/// K×D Jacobian of `fn` at `x`, assembled one one-hot VJP per output row.
/// Test oracle only.
inline Tensor jacobian_bruteforce(const std::function<Var(Tape&, Var)>& fn, const Tensor& x) {
  Tape probe_tape;
  Var out_probe = fn(probe_tape, probe_tape.leaf(x, true, Tape::kInputName));
  std::size_t k = out_probe.value().size(), d = x.size();
  if (k * d > 1'000'000) throw std::invalid_argument("jacobian_bruteforce: K*D exceeds 1e6");
  Tensor jac({k, d});
  for (std::size_t row = 0; row < k; ++row) {
    Tape tape;
    Var in = tape.leaf(x, true, Tape::kInputName);
    Var out = fn(tape, in);
    Tensor seed(out.shape());
    seed[row] = 1.0;
    Var g = tape.gradients(out, seed, std::span<const Var>(&in, 1), false)[0];
    std::copy(g.value().data().begin(), g.value().data().end(), jac.data().begin() + static_cast<std::ptrdiff_t>(row * d));
  }
  return jac;
}

}  // namespace gradshield
