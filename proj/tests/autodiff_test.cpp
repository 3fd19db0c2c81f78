#include <gtest/gtest.h>

#include <random>

#include "gradshield/autodiff.hpp"
#include "support/oracles.hpp"
#include "support/primitives.hpp"

using namespace gradshield;
using namespace gradshield::testing;

namespace {

Tensor grad_of(Tape& tape, Var out, Var wrt) {
  return tape.gradients(out, Tensor(out.shape(), 1.0), std::span<const Var>(&wrt, 1), false)[0].value();
}

}  // namespace

TEST(Autodiff, SquareAtThree) {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0), true);
  EXPECT_DOUBLE_EQ(grad_of(t, square(x), x).item(), 6.0);
}

TEST(Autodiff, ProductGradients) {
  Tape t;
  Var x = t.leaf(Tensor::scalar(2.0), true);
  Var y = t.leaf(Tensor::scalar(5.0), true);
  std::vector<Var> wrt{x, y};
  auto g = t.gradients(mul(x, y), Tensor::scalar(1.0), wrt, false);
  EXPECT_DOUBLE_EQ(g[0].value().item(), 5.0);
  EXPECT_DOUBLE_EQ(g[1].value().item(), 2.0);
}

TEST(Autodiff, GradThroughGradOfLinearTerm) {
  // (d(ax)/dx)² = a², derivative 2a
  Tape t;
  Var a = t.leaf(Tensor::scalar(3.0), true, "a");
  Var x = t.leaf(Tensor::scalar(-0.7), true);
  Var gx = t.gradients(mul(a, x), Tensor::scalar(1.0), std::span<const Var>(&x, 1), true)[0];
  EXPECT_DOUBLE_EQ(grad_through_grad(t, square(gx)).params.at("a").item(), 6.0);
}

TEST(Autodiff, GradThroughGradOfQuadratic) {
  // f = a·x², ∂f/∂x = 2ax, penalty (∂f/∂x)² = 4a²x², ∂/∂a = 8ax² = 32 at a=1, x=2
  Tape t;
  Var a = t.leaf(Tensor::scalar(1.0), true, "a");
  Var x = t.leaf(Tensor::scalar(2.0), true);
  Var f = mul(a, square(x));
  Var gx = t.gradients(f, Tensor::scalar(1.0), std::span<const Var>(&x, 1), true)[0];
  auto g = grad_through_grad(t, square(gx));
  EXPECT_DOUBLE_EQ(g.params.at("a").item(), 32.0);
}

TEST(Autodiff, EveryPrimitiveFirstOrder) {
  std::mt19937_64 rng(11);
  for (const auto& p : primitive_catalog()) {
    for (int rep = 0; rep < 5; ++rep) {
      EXPECT_LT(check_first_order(p, rng).rel_err, 1e-5) << p.name;
    }
  }
}

TEST(Autodiff, EveryPrimitiveSecondOrder) {
  std::mt19937_64 rng(12);
  for (const auto& p : primitive_catalog()) {
    for (int rep = 0; rep < 3; ++rep) {
      EXPECT_LT(check_second_order(p, rng).rel_err, 1e-5) << p.name;
    }
  }
}

TEST(Autodiff, VjpIsLinearInSeed) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng);
  Tensor s1 = gaussian_tensor({3, 2}, rng), s2 = gaussian_tensor({3, 2}, rng);
  auto vjp_x = [&](const Tensor& seed) {
    Tape t;
    Var xv = t.leaf(x, true);
    Var y = tanh(matmul(xv, t.constant(w)));
    return t.gradients(y, seed, std::span<const Var>(&xv, 1), false)[0].value();
  };
  Tensor combo(s1.shape());
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = 2.0 * s1[i] - 0.5 * s2[i];
  Tensor g1 = vjp_x(s1), g2 = vjp_x(s2), gc = vjp_x(combo);
  for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], 2.0 * g1[i] - 0.5 * g2[i], 1e-10);
}

TEST(Autodiff, BruteforceJacobianOfLinearMap) {
  std::mt19937_64 rng(4);
  Tensor w = random_tensor({5, 3}, rng);
  Tensor x = random_tensor({1, 5}, rng);
  Tensor j = jacobian_bruteforce([&](Tape& t, Var in) { return matmul(in, t.constant(w)); }, x);
  ASSERT_EQ(j.shape(), (Shape{3, 5}));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(j[k * 5 + d], w[d * 3 + k], 1e-12);
}

TEST(Autodiff, IdentityJacobian) {
  Tensor x({1, 4}, 0.3);
  Tensor j = jacobian_bruteforce([](Tape&, Var in) { return in; }, x);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(j[r * 4 + c], r == c ? 1.0 : 0.0);
}

TEST(Autodiff, UnrelatedLeafGetsZeros) {
  Tape t;
  Var x = t.leaf(Tensor({2}, 1.0), true);
  Var y = t.leaf(Tensor({3}, 1.0), true);
  Tensor g = grad_of(t, sum(square(x)), y);
  EXPECT_EQ(g.shape(), (Shape{3}));
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, SeedShapeMismatchThrows) {
  Tape t;
  Var x = t.leaf(Tensor({2, 2}), true);
  Var y = square(x);
  EXPECT_THROW(t.gradients(y, Tensor({4}), std::span<const Var>(&x, 1), false), ShapeError);
}

TEST(Autodiff, NonScalarPenaltyThrows) {
  Tape t;
  Var x = t.leaf(Tensor({2}), true, "x");
  EXPECT_THROW(grad_through_grad(t, square(x)), ShapeError);
}

TEST(Autodiff, PenaltyWithoutRecordedSweepThrows) {
  Tape t;
  Var a = t.leaf(Tensor::scalar(1.0), true, "a");
  Var x = t.leaf(Tensor::scalar(2.0), true);
  Var gx = t.gradients(mul(a, square(x)), Tensor::scalar(1.0), std::span<const Var>(&x, 1), false)[0];
  EXPECT_THROW(grad_through_grad(t, square(gx)), std::logic_error);
}

TEST(Autodiff, ForeignVarRejected) {
  Tape t1, t2;
  Var x = t1.leaf(Tensor::scalar(1.0), true);
  Var y = t2.leaf(Tensor::scalar(1.0), true);
  EXPECT_THROW(add(x, y), std::invalid_argument);
  EXPECT_THROW(t2.gradients(x, Tensor::scalar(1.0), std::span<const Var>(&y, 1), false), std::invalid_argument);
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  Tape t;
  Var x = t.leaf(Tensor::scalar(1.0), true);
  {
    Tape::NoGradGuard g(t);
    EXPECT_FALSE(square(x).requires_grad());
  }
  EXPECT_TRUE(square(x).requires_grad());
}

TEST(Autodiff, RepeatedSweepsAreBitwiseEqual) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({2, 3}, rng);
  auto run = [&] {
    Tape t;
    Var xv = t.leaf(x, true);
    Var y = sum(softplus(mul(xv, tanh(xv))));
    return grad_of(t, y, xv);
  };
  Tensor a = run(), b = run();
  EXPECT_EQ(a.vec(), b.vec());
}

TEST(Autodiff, ReluNetJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  Architecture arch{"relu1", {4}, {LayerSpec::dense(4, 3), LayerSpec::relu()}, 3};
  Model m = init_model(arch, 5);
  m.params.at(param_name(0, "bias")) = random_tensor({3}, rng);
  Tensor x = random_tensor({1, 4}, rng);
  Tensor j = jacobian_bruteforce(m, x.reshaped({4}));
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor fd = fd_gradient([&](const Tensor& xp) { return reference_mlp(m, xp)[k]; }, x);
    std::vector<double> row(j.data().begin() + static_cast<std::ptrdiff_t>(k * 4),
                            j.data().begin() + static_cast<std::ptrdiff_t>(k * 4 + 4));
    EXPECT_LT(rel_err(row, fd.data()), 1e-5) << "row " << k;
  }
}

TEST(Autodiff, OneHotSeedGivesJacobianRow) {
  std::mt19937_64 rng(22);
  Model m = init_model(dense_arch(6, 5, 4, LayerKind::Tanh), 8);
  Tensor x = random_tensor({1, 6}, rng);
  Tensor j = jacobian_bruteforce(m, x.reshaped({6}));
  for (std::size_t k = 0; k < 4; ++k) {
    Tape t;
    auto b = bind(t, m, false);
    Var in = t.leaf(x, true, Tape::kInputName);
    Var z = forward(m, b, in);
    Tensor seed({1, 4});
    seed[k] = 1.0;
    Tensor g = *vjp(t, z, seed).input;
    std::vector<double> row(j.data().begin() + static_cast<std::ptrdiff_t>(k * 6),
                            j.data().begin() + static_cast<std::ptrdiff_t>(k * 6 + 6));
    EXPECT_LT(rel_err(row, g.data()), 1e-6);
  }
}
