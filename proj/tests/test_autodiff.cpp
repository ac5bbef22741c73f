#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bbyol/autodiff.hpp"
#include "bbyol/errors.hpp"

namespace ad = bbyol::ad;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

// Independent triple loop.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                                 std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * m + j] += a[i * k + p] * b[p * m + j];
  return c;
}

}  // namespace

TEST(Tensor, RejectsSizeMismatchAndNonFinite) {
  EXPECT_THROW(ad::Tensor({2, 2}, {1.0, 2.0, 3.0}), bbyol::Error);
  EXPECT_THROW(ad::Tensor::vector({1.0, NAN}), bbyol::Error);
  EXPECT_THROW(ad::Tensor::vector({INFINITY}), bbyol::Error);
}

TEST(Tensor, ShapesAndAccessors) {
  const ad::Tensor m = ad::Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_EQ(m.row(1)[0], 4.0);
  EXPECT_EQ(ad::Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(m.item(), bbyol::Error);
}

TEST(Ops, L2NormalizeThreeFourFive) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::vector({3.0, 4.0}), false);
  const ad::Tensor& y = ad::l2_normalize(x).value();
  EXPECT_NEAR(y[0], 0.6, 1e-12);
  EXPECT_NEAR(y[1], 0.8, 1e-12);
}

TEST(Ops, L2NormalizeZeroRowIsZero) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 0.0}), true);
  const ad::Var y = ad::l2_normalize(x);
  EXPECT_EQ(y.value().at(0, 0), 0.0);
  EXPECT_EQ(y.value().at(0, 1), 0.0);
  tape.backward(ad::sum(y));
  for (double g : *x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Ops, DotOrthogonal) {
  ad::Tape tape;
  const ad::Var a = tape.leaf(ad::Tensor::vector({1.0, 0.0}), false);
  const ad::Var b = tape.leaf(ad::Tensor::vector({0.0, 1.0}), false);
  EXPECT_EQ(ad::dot(a, b).value().item(), 0.0);
}

TEST(Ops, MatmulMatchesNaiveLoop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_values(6, rng), b = random_values(12, rng);
    ad::Tape tape;
    const ad::Var va = tape.leaf(ad::Tensor::matrix(2, 3, a), false);
    const ad::Var vb = tape.leaf(ad::Tensor::matrix(3, 4, b), false);
    const ad::Tensor& c = ad::matmul(va, vb).value();
    ASSERT_EQ(c.shape(), (ad::Shape{2, 4}));
    const auto want = naive_matmul(a, b, 2, 3, 4);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(c[i], want[i], 1e-12);
  }
}

TEST(Ops, ShapeMismatchIsRejected) {
  ad::Tape tape;
  const ad::Var a = tape.leaf(ad::Tensor::matrix(2, 3, std::vector<double>(6, 1.0)), false);
  const ad::Var b = tape.leaf(ad::Tensor::matrix(2, 3, std::vector<double>(6, 1.0)), false);
  EXPECT_THROW(ad::matmul(a, b), bbyol::DimensionError);
  const ad::Var c = tape.leaf(ad::Tensor::vector({1.0, 2.0}), false);
  EXPECT_THROW(ad::add(a, c), bbyol::DimensionError);
}

TEST(Ops, MixingTapesIsRejected) {
  ad::Tape t1, t2;
  const ad::Var a = t1.leaf(ad::Tensor::vector({1.0}), false);
  const ad::Var b = t2.leaf(ad::Tensor::vector({1.0}), false);
  EXPECT_THROW(ad::add(a, b), bbyol::ContractError);
}

TEST(Backward, SumGivesOnes) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::vector({0.3, -1.0, 7.0}), true);
  tape.backward(ad::sum(x));
  EXPECT_EQ(*x.grad(), (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(Backward, DotSelfGivesTwiceX) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::vector({2.0, -1.0}), true);
  tape.backward(ad::dot(x, x));
  EXPECT_EQ(*x.grad(), (std::vector<double>{4.0, -2.0}));
}

TEST(Backward, NonScalarLossIsRejected) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::vector({1.0, 2.0}), true);
  EXPECT_THROW(tape.backward(ad::scale(x, 2.0)), bbyol::ContractError);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  ad::Tape tape;
  const ad::Var w = tape.leaf(ad::Tensor::vector({1.0, 2.0}), true);
  const ad::Var c = tape.constant(ad::Tensor::vector({3.0, 4.0}));
  tape.backward(ad::dot(w, c));
  EXPECT_FALSE(c.grad().has_value());
  EXPECT_EQ(*w.grad(), (std::vector<double>{3.0, 4.0}));
}

TEST(Backward, SharedNodeAccumulates) {
  // y = x + x -> dy/dx = 2
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::vector({1.0, 5.0}), true);
  tape.backward(ad::sum(ad::add(x, x)));
  EXPECT_EQ(*x.grad(), (std::vector<double>{2.0, 2.0}));
}

TEST(Backward, RepeatedBackwardDoesNotDoubleCount) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::vector({2.0}), true);
  const ad::Var loss = ad::dot(x, x);
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_EQ((*x.grad())[0], 4.0);
}

TEST(GradCheck, QuadraticIsTight) {
  const std::vector<double> theta{1.0, 2.0, 3.0};
  auto f = [](std::span<const double> t) {
    double s = 0.0;
    for (double v : t) s += v * v;
    return s;
  };
  auto g = [](std::span<const double> t) {
    std::vector<double> out(t.begin(), t.end());
    for (double& v : out) v *= 2.0;
    return out;
  };
  EXPECT_LT(ad::grad_check(f, g, theta, 1e-5), 1e-7);
}

TEST(GradCheck, ConstantLossGivesZero) {
  const std::vector<double> theta{0.5, -0.5};
  auto f = [](std::span<const double>) { return 3.0; };
  auto g = [](std::span<const double> t) { return std::vector<double>(t.size(), 0.0); };
  EXPECT_EQ(ad::grad_check(f, g, theta, 1e-5), 0.0);
}

// Two-layer tanh network with a softmax cross-entropy loss, every primitive on the path.
TEST(GradCheck, TwoLayerTanhNetworkMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const std::size_t n = 5, d = 4, h = 6, c = 3;
  const auto x = random_values(n * d, rng);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  const std::size_t sizes[] = {d * h, h, h * c, c};
  std::vector<double> theta;
  for (std::size_t s : sizes) {
    const auto v = random_values(s, rng);
    theta.insert(theta.end(), v.begin(), v.end());
  }

  auto build = [&](ad::Tape& tape, std::span<const double> t, std::vector<ad::Var>& leaves) {
    std::size_t off = 0;
    auto take = [&](ad::Shape shape) {
      const std::size_t len = ad::numel(shape);
      leaves.push_back(tape.leaf(ad::Tensor(shape, std::vector<double>(t.begin() + off, t.begin() + off + len)), true));
      off += len;
      return leaves.back();
    };
    const ad::Var w1 = take({d, h}), b1 = take({h}), w2 = take({h, c}), b2 = take({c});
    const ad::Var in = tape.constant(ad::Tensor::matrix(n, d, x));
    const ad::Var hidden = ad::tanh(ad::bias_add(ad::matmul(in, w1), b1));
    const ad::Var logits = ad::bias_add(ad::matmul(hidden, w2), b2);
    return ad::add(ad::softmax_cross_entropy(logits, labels), ad::scale(ad::sum(ad::relu(logits)), 0.1));
  };
  auto loss = [&](std::span<const double> t) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    return build(tape, t, leaves).value().item();
  };
  auto grad = [&](std::span<const double> t) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    tape.backward(build(tape, t, leaves));
    std::vector<double> out;
    for (const ad::Var& l : leaves) out.insert(out.end(), l.grad()->begin(), l.grad()->end());
    return out;
  };
  EXPECT_LT(ad::grad_check(loss, grad, theta, 1e-5), 1e-4);
}

TEST(GradCheck, NormalizeAndMseMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto target = random_values(12, rng);
  const auto theta = random_values(12, rng);
  auto build = [&](ad::Tape& tape, std::span<const double> t, ad::Var& leaf) {
    leaf = tape.leaf(ad::Tensor::matrix(3, 4, std::vector<double>(t.begin(), t.end())), true);
    const ad::Var y = tape.constant(ad::Tensor::matrix(3, 4, target));
    return ad::mse(ad::l2_normalize(leaf), ad::l2_normalize(y));
  };
  auto loss = [&](std::span<const double> t) {
    ad::Tape tape;
    ad::Var leaf;
    return build(tape, t, leaf).value().item();
  };
  auto grad = [&](std::span<const double> t) {
    ad::Tape tape;
    ad::Var leaf;
    tape.backward(build(tape, t, leaf));
    return *leaf.grad();
  };
  EXPECT_LT(ad::grad_check(loss, grad, theta, 1e-5), 1e-4);
}

TEST(Kernels, SoftmaxRowsSumToOneAndAreStable) {
  const ad::Tensor logits = ad::Tensor::matrix(2, 3, {1000.0, 1000.0, 1000.0, -5.0, 0.0, 5.0});
  const ad::Tensor p = ad::kernels::softmax_rows(logits);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_NEAR(p.at(0, 0), 1.0 / 3.0, 1e-12);
}

TEST(Ops, NonFiniteForwardValueIsRejected) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(ad::Tensor::vector({1e200, 1e200}), false);
  EXPECT_THROW(ad::dot(x, x), bbyol::NumericError);
}
