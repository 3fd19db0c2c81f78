#pragma once

// Every taped primitive with a randomized input generator, for first- and
// second-order finite-difference checks.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gradshield/autodiff.hpp"
#include "support/oracles.hpp"

namespace gradshield::testing {

enum class Domain { Any, Positive, AwayFromZero };

struct Primitive {
  std::string name;
  std::function<std::vector<Shape>(std::mt19937_64&)> shapes;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
  Domain domain = Domain::Any;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<Primitive> primitive_catalog() {
  auto same2 = [](std::mt19937_64& r) {
    Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    return std::vector<Shape>{s, s};
  };
  auto one = [](std::mt19937_64& r) { return std::vector<Shape>{{pick(r, 1, 3), pick(r, 1, 4)}}; };
  auto scalar_and = [](std::mt19937_64& r) { return std::vector<Shape>{{}, {pick(r, 1, 3), pick(r, 1, 4)}}; };

  // Constant operands and conv geometry, redrawn with each shape draw.
  struct State {
    Tensor constant;
    ConvGeometry geom;
    Shape x_shape, w_shape;
  };
  auto st = std::make_shared<State>();

  auto conv_shapes = [st](std::mt19937_64& r, int which) {
    std::size_t n = pick(r, 1, 2), c = pick(r, 1, 2), o = pick(r, 1, 3), k = pick(r, 1, 3);
    st->geom = {pick(r, 1, 2), pick(r, 0, 1)};
    std::size_t h = k + pick(r, 0, 3), w = k + pick(r, 0, 3);
    st->x_shape = {n, c, h, w};
    st->w_shape = {o, c, k, k};
    Shape y = kernels::conv_output_shape(st->x_shape, st->w_shape, st->geom);
    if (which == 0) return std::vector<Shape>{st->x_shape, st->w_shape};
    if (which == 1) return std::vector<Shape>{y, st->w_shape};
    return std::vector<Shape>{st->x_shape, y};
  };

  std::vector<Primitive> p;
  p.push_back({"add", same2, [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }});
  p.push_back({"sub", same2, [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); }});
  p.push_back({"mul", same2, [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }});
  p.push_back({"neg", one, [](Tape&, const std::vector<Var>& v) { return neg(v[0]); }});
  p.push_back({"scale", one, [](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.7); }});
  p.push_back({"add_scalar", one, [](Tape&, const std::vector<Var>& v) { return add_scalar(v[0], 0.4); }});
  p.push_back({"square", one, [](Tape&, const std::vector<Var>& v) { return square(v[0]); }});
  p.push_back({"mul_scalar", scalar_and, [](Tape&, const std::vector<Var>& v) { return mul_scalar(v[0], v[1]); }});
  {
    Primitive mc{"mul_const",
                 [st](std::mt19937_64& r) {
                   Shape s{pick(r, 1, 3), pick(r, 1, 4)};
                   st->constant = random_tensor(s, r);
                   return std::vector<Shape>{s};
                 },
                 [st](Tape&, const std::vector<Var>& v) { return mul_const(v[0], st->constant); }};
    p.push_back(mc);
    Primitive ac{"add_const",
                 [st](std::mt19937_64& r) {
                   Shape s{pick(r, 1, 3), pick(r, 1, 4)};
                   st->constant = random_tensor(s, r);
                   return std::vector<Shape>{s};
                 },
                 [st](Tape&, const std::vector<Var>& v) { return add_const(v[0], st->constant); }};
    p.push_back(ac);
  }
  p.push_back({"sum", one, [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }});
  p.push_back({"expand_scalar", [](std::mt19937_64&) { return std::vector<Shape>{{}}; },
               [](Tape&, const std::vector<Var>& v) { return expand_scalar(v[0], {2, 3}); }});
  p.push_back({"matmul",
               [](std::mt19937_64& r) {
                 std::size_t m = pick(r, 1, 3), k = pick(r, 1, 4), n = pick(r, 1, 3);
                 return std::vector<Shape>{{m, k}, {k, n}};
               },
               [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }});
  p.push_back({"transpose", one, [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); }});
  p.push_back({"bias_add",
               [](std::mt19937_64& r) {
                 std::size_t n = pick(r, 1, 3), c = pick(r, 1, 3), s = pick(r, 1, 3);
                 return std::vector<Shape>{{n, c, s}, {c}};
               },
               [](Tape&, const std::vector<Var>& v) { return bias_add(v[0], v[1]); }});
  p.push_back({"bias_reduce",
               [](std::mt19937_64& r) { return std::vector<Shape>{{pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3)}}; },
               [](Tape&, const std::vector<Var>& v) { return bias_reduce(v[0]); }});
  p.push_back({"bias_expand", [](std::mt19937_64&) { return std::vector<Shape>{{3}}; },
               [](Tape&, const std::vector<Var>& v) { return bias_expand(v[0], {2, 3, 2}); }});
  p.push_back({"reshape", [](std::mt19937_64&) { return std::vector<Shape>{{2, 6}}; },
               [](Tape&, const std::vector<Var>& v) { return reshape(v[0], {3, 2, 2}); }});
  p.push_back({"exp", one, [](Tape&, const std::vector<Var>& v) { return exp(v[0]); }});
  p.push_back({"log", one, [](Tape&, const std::vector<Var>& v) { return log(v[0]); }, Domain::Positive});
  p.push_back({"reciprocal", one, [](Tape&, const std::vector<Var>& v) { return reciprocal(v[0]); }, Domain::Positive});
  p.push_back({"tanh", one, [](Tape&, const std::vector<Var>& v) { return tanh(v[0]); }});
  p.push_back({"sigmoid", one, [](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); }});
  p.push_back({"softplus", one, [](Tape&, const std::vector<Var>& v) { return softplus(v[0]); }});
  p.push_back({"log_softmax", one, [](Tape&, const std::vector<Var>& v) { return log_softmax(v[0]); }});
  p.push_back({"row_sum", one, [](Tape&, const std::vector<Var>& v) { return row_sum(v[0]); }});
  p.push_back({"col_expand", [](std::mt19937_64& r) { return std::vector<Shape>{{pick(r, 1, 3), 1}}; },
               [](Tape&, const std::vector<Var>& v) { return col_expand(v[0], 4); }});
  p.push_back({"conv2d", [conv_shapes](std::mt19937_64& r) { return conv_shapes(r, 0); },
               [st](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], st->geom); }});
  p.push_back({"conv_input_grad", [conv_shapes](std::mt19937_64& r) { return conv_shapes(r, 1); },
               [st](Tape&, const std::vector<Var>& v) { return conv_input_grad(v[0], v[1], st->x_shape, st->geom); }});
  p.push_back({"conv_weight_grad", [conv_shapes](std::mt19937_64& r) { return conv_shapes(r, 2); },
               [st](Tape&, const std::vector<Var>& v) { return conv_weight_grad(v[0], v[1], st->w_shape, st->geom); }});
  p.push_back({"relu", one, [](Tape&, const std::vector<Var>& v) { return relu(v[0]); }, Domain::AwayFromZero});
  p.push_back({"leaky_relu", one, [](Tape&, const std::vector<Var>& v) { return leaky_relu(v[0], 0.01); },
               Domain::AwayFromZero});
  return p;
}

inline Tensor draw_input(const Shape& s, Domain d, std::mt19937_64& rng) {
  switch (d) {
    case Domain::Positive: return random_tensor(s, rng, 0.5, 2.0);
    case Domain::AwayFromZero: {
      Tensor t = random_tensor(s, rng, 0.1, 1.0);
      std::bernoulli_distribution flip(0.5);
      for (auto& v : t.data()) v = flip(rng) ? -v : v;
      return t;
    }
    case Domain::Any: break;
  }
  return random_tensor(s, rng);
}

struct VjpCheck {
  double rel_err = 0.0;  // max over inputs
};

/// Compares tape gradients of ⟨s, f(x₁..xₘ)⟩ against central differences.
inline VjpCheck check_first_order(const Primitive& p, std::mt19937_64& rng, double h = 1e-5) {
  auto shapes = p.shapes(rng);
  std::vector<Tensor> inputs;
  for (const auto& s : shapes) inputs.push_back(draw_input(s, p.domain, rng));
  Tensor seed;
  std::vector<Tensor> grads;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var out = p.build(tape, leaves);
    seed = gaussian_tensor(out.shape(), rng);
    for (const auto& g : tape.gradients(out, seed, leaves, false)) grads.push_back(g.value());
  }
  VjpCheck res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor& xi) {
      Tape tape;
      std::vector<Var> leaves;
      for (std::size_t j = 0; j < inputs.size(); ++j) leaves.push_back(tape.constant(j == i ? xi : inputs[j]));
      Tensor y = p.build(tape, leaves).value();
      double acc = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) acc += seed[k] * y[k];
      return acc;
    };
    Tensor fd = fd_gradient(f, inputs[i], h);
    res.rel_err = std::max(res.rel_err, rel_err(grads[i].data(), fd.data()));
  }
  return res;
}

/// Differentiates ‖vjp(s)‖² through the recorded backward sweep and compares
/// against central differences of the first-order quantity.
inline VjpCheck check_second_order(const Primitive& p, std::mt19937_64& rng, double h = 1e-5) {
  auto shapes = p.shapes(rng);
  std::vector<Tensor> inputs;
  for (const auto& s : shapes) inputs.push_back(draw_input(s, p.domain, rng));
  Tensor seed;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.constant(t));
    seed = gaussian_tensor(p.build(tape, leaves).shape(), rng);
  }
  auto energy = [&](const std::vector<Tensor>& xs, bool differentiate, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : xs) leaves.push_back(tape.leaf(t, true));
    Var out = p.build(tape, leaves);
    auto g = tape.gradients(out, seed, leaves, true);
    Var e = sum(square(g[0]));
    for (std::size_t i = 1; i < g.size(); ++i) e = add(e, sum(square(g[i])));
    if (differentiate && e.requires_grad()) {
      for (const auto& gg : tape.gradients(e, Tensor::scalar(1.0), leaves, false)) grads->push_back(gg.value());
    } else if (differentiate) {
      for (const auto& t : xs) grads->push_back(Tensor(t.shape()));
    }
    return e.value().item();
  };
  std::vector<Tensor> grads;
  energy(inputs, true, &grads);
  VjpCheck res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor& xi) {
      auto xs = inputs;
      xs[i] = xi;
      return energy(xs, false, nullptr);
    };
    Tensor fd = fd_gradient(f, inputs[i], h);
    res.rel_err = std::max(res.rel_err, rel_err(grads[i].data(), fd.data(), 1e-6));
  }
  return res;
}

}  // namespace gradshield::testing
