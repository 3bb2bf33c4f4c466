#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "vitmat/grad_check.hpp"
#include "vitmat/ops.hpp"

using namespace vitmat;
using Td = Tensor<double>;

namespace {

// Weighted-sum objective sum(w * y) so backward sees a non-uniform upstream gradient.
double weighted_sum(const Td& y, const Td& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
  return s;
}

Shape random_matrix_shape(Rng& rng) {
  return {static_cast<std::size_t>(rng.uniform_int(1, 16)), static_cast<std::size_t>(rng.uniform_int(1, 16))};
}

}  // namespace

TEST(Rng, ReferenceVectors) {
  Rng a(0);
  EXPECT_EQ(a.next_u64(), 16294208416658607535ULL);
  EXPECT_EQ(a.next_u64(), 7960286522194355700ULL);
  EXPECT_EQ(a.next_u64(), 487617019471545679ULL);
  Rng b(1234567);
  EXPECT_EQ(b.next_u64(), 6457827717110365317ULL);
  EXPECT_EQ(b.next_u64(), 3203168211198807973ULL);
  EXPECT_EQ(b.next_u64(), 9817491932198370423ULL);
  Rng c(42);
  EXPECT_DOUBLE_EQ(c.uniform(), 0.7415648787718233);
  EXPECT_DOUBLE_EQ(c.uniform(), 0.1599103928769201);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(99), b(99);
  const auto ta = rng_normal<double>(a, {64, 8}, 0.0, 1.0);
  const auto tb = rng_normal<double>(b, {64, 8}, 0.0, 1.0);
  EXPECT_EQ(ta, tb);
}

TEST(Rng, UniformInUnitInterval) {
  Rng rng(5);
  const auto t = rng_uniform<double>(rng, {100000});
  for (double v : t.data()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(2024);
  const auto t = rng_normal<double>(rng, {100000}, 3.0, 2.0);
  double mean = 0.0;
  for (double v : t.data()) mean += v;
  mean /= t.numel();
  double var = 0.0;
  for (double v : t.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / t.numel());
  EXPECT_NEAR(mean, 3.0, 0.02);
  EXPECT_NEAR(sd, 2.0, 0.02);
}

TEST(Rng, SubstreamIsIndependentOfParentPosition) {
  Rng a(7), b(7);
  b.next_u64();
  EXPECT_EQ(a.substream(3).next_u64(), b.substream(3).next_u64());
  EXPECT_NE(a.substream(3).next_u64(), a.substream(4).next_u64());
}

TEST(Matmul, IdentityLeft) {
  Rng rng(1);
  const auto b = rng_normal<double>(rng, {3, 2}, 0, 1);
  EXPECT_EQ(ops::matmul(Td::identity(3), b), b);
  const auto a = Td::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(ops::matmul(a, Td::identity(2)), a);
}

TEST(Matmul, KnownProduct) {
  const auto a = Td::matrix({{1, 2, 3}, {4, 5, 6}});
  const auto b = Td::matrix({{7, 8}, {9, 10}, {11, 12}});
  EXPECT_EQ(ops::matmul(a, b), Td::matrix({{58, 64}, {139, 154}}));
  EXPECT_EQ(ops::matmul_bt(a, ops::transpose(b)), ops::matmul(a, b));
  EXPECT_EQ(ops::matmul_at(ops::transpose(a), b), ops::matmul(a, b));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(Td({2, 3}), Td({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(11);
  const auto a = rng_normal<double>(rng, {4, 5}, 0, 1);
  const auto b = rng_normal<double>(rng, {5, 3}, 0, 1);
  auto f = [&](const Td& x) {
    const auto c = ops::matmul(x, b);
    return ValueAndGrad{ops::sum(c), ops::matmul_backward(x, b, Td(c.shape(), 1.0)).da};
  };
  EXPECT_LT(grad_check(f, a, 1e-5), 1e-6);
  auto fb = [&](const Td& x) {
    const auto c = ops::matmul(a, x);
    return ValueAndGrad{ops::sum(c), ops::matmul_backward(a, x, Td(c.shape(), 1.0)).db};
  };
  EXPECT_LT(grad_check(fb, b, 1e-5), 1e-6);
}

TEST(Matmul, IdentityIsBitwiseProperty) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = rng_normal<double>(rng, random_matrix_shape(rng), 0, 3);
    ASSERT_EQ(ops::matmul(Td::identity(x.rows()), x), x);
  }
}

TEST(Softmax, Examples) {
  const auto u = ops::softmax(Td::vector({0, 0, 0}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const double c = 4.2;
  const auto r = ops::softmax(Td::vector({c, c + std::log(2.0)}), 0);
  EXPECT_NEAR(r[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r[1], 2.0 / 3.0, 1e-12);
  const auto big = ops::softmax(Td::vector({1000, 0}), 0);
  // reference: 1/(1+e^-1000) == 1 exactly in double, e^-1000 underflows to 0
  EXPECT_EQ(big[0], 1.0);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
  const auto bigf = ops::softmax(Tensor<float>::vector({1000.f, 0.f}), 0);
  EXPECT_EQ(bigf[0], 1.0f);
}

TEST(Softmax, InvalidAxis) { EXPECT_THROW(ops::softmax(Td({2, 2}), 2), DimensionError); }

TEST(Softmax, ColumnAxis) {
  const auto y = ops::softmax(Td::matrix({{0, 1}, {0, 1}}), 0);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Softmax, SlicesSumToOneAndPermutationEquivariant) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = rng_normal<double>(rng, random_matrix_shape(rng), 0, 5);
    const auto y = ops::softmax(x, 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < x.cols(); ++c) s += y(r, c);
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
    std::vector<std::size_t> perm(x.cols());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Td px(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) px(r, c) = x(r, perm[c]);
    const auto py = ops::softmax(px, 1);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ASSERT_NEAR(py(r, c), y(r, perm[c]), 1e-15);
  }
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  const auto r = ops::layer_norm(Td::vector({5, 5, 5, 5}), Td({4}, 1.0), Td({4}, 0.0));
  for (double v : r.out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, AlreadyNormalized) {
  const auto r = ops::layer_norm(Td::vector({1, -1}), Td({2}, 1.0), Td({2}, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(r.out[0], 1.0);
  EXPECT_DOUBLE_EQ(r.out[1], -1.0);
}

TEST(LayerNorm, GammaMismatch) {
  EXPECT_THROW(ops::layer_norm(Td({3, 4}), Td({3}, 1.0), Td({4})), DimensionError);
}

TEST(LayerNorm, MomentsProperty) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = rng_normal<double>(rng, random_matrix_shape(rng), rng.uniform(-100, 100), rng.uniform(0.1, 50));
    if (x.cols() < 2) continue;
    const auto r = ops::layer_norm(x, Td({x.cols()}, 1.0), Td({x.cols()}, 0.0));
    for (std::size_t row = 0; row < x.rows(); ++row) {
      double xm = 0, xv = 0;
      for (std::size_t c = 0; c < x.cols(); ++c) xm += x(row, c);
      xm /= x.cols();
      for (std::size_t c = 0; c < x.cols(); ++c) xv += std::pow(x(row, c) - xm, 2);
      xv /= x.cols();
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < x.cols(); ++c) mean += r.normalized(row, c);
      mean /= x.cols();
      for (std::size_t c = 0; c < x.cols(); ++c) var += std::pow(r.normalized(row, c) - mean, 2);
      var /= x.cols();
      ASSERT_LT(std::abs(mean), 1e-5);
      // eps sits inside the square root, so the output variance is var / (var + eps)
      ASSERT_NEAR(var, xv / (xv + ops::kLayerNormEps), 1e-9);
      if (xv > 1.0) {
        ASSERT_NEAR(var, 1.0, 1e-5);
      }
    }
  }
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
  Rng rng(15);
  const auto x = rng_normal<double>(rng, {8}, 0, 1);
  const auto gamma = rng_normal<double>(rng, {8}, 1, 0.3);
  const auto beta = rng_normal<double>(rng, {8}, 0, 0.3);
  const auto w = rng_normal<double>(rng, {8}, 0, 1);
  auto fx = [&](const Td& in) {
    const auto r = ops::layer_norm(in, gamma, beta);
    return ValueAndGrad{weighted_sum(r.out, w), ops::layer_norm_backward(r, gamma, w).dx};
  };
  EXPECT_LT(grad_check(fx, x, 1e-5), 1e-5);
  auto fg = [&](const Td& g) {
    const auto r = ops::layer_norm(x, g, beta);
    return ValueAndGrad{weighted_sum(r.out, w), ops::layer_norm_backward(r, g, w).dgamma};
  };
  EXPECT_LT(grad_check(fg, gamma, 1e-5), 1e-5);
  auto fb = [&](const Td& b) {
    const auto r = ops::layer_norm(x, gamma, b);
    return ValueAndGrad{weighted_sum(r.out, w), ops::layer_norm_backward(r, gamma, w).dbeta};
  };
  EXPECT_LT(grad_check(fb, beta, 1e-5), 1e-5);
}

TEST(Gelu, Values) {
  EXPECT_EQ(ops::gelu(Td::vector({0}))[0], 0.0);
  EXPECT_NEAR(ops::gelu(Td::vector({10}))[0], 10.0, 1e-6);
  // tanh form at x = 1: 0.5 (1 + tanh(0.7978845608 * 1.044715))
  EXPECT_NEAR(ops::gelu(Td::vector({1}))[0], 0.8411919906082768, 1e-12);
}

TEST(Gelu, GradientOnGrid) {
  std::vector<double> grid;
  for (int i = 0; i <= 60; ++i) grid.push_back(-3.0 + 0.1 * i);
  const Td x({grid.size()}, grid);
  auto f = [](const Td& in) {
    return ValueAndGrad{ops::sum(ops::gelu(in)), ops::gelu_backward(in, Td(in.shape(), 1.0))};
  };
  EXPECT_LT(grad_check(f, x, 1e-5), 1e-5);
}

TEST(Elementwise, Identities) {
  Rng rng(16);
  const auto x = rng_normal<double>(rng, {4, 6}, 0, 1);
  EXPECT_EQ(ops::add(x, Td(x.shape(), 0.0)), x);
  EXPECT_EQ(ops::mul(x, Td(x.shape(), 1.0)), x);
  const auto s = ops::scale(Td({3, 3}, 8.0), 1.0 / std::sqrt(64.0));
  for (double v : s.data()) EXPECT_EQ(v, 1.0);
}

TEST(Elementwise, BroadcastOverLeadingAxes) {
  const auto a = Td::matrix({{1, 2, 3}, {4, 5, 6}});
  const auto b = Td::vector({10, 20, 30});
  EXPECT_EQ(ops::add(a, b), Td::matrix({{11, 22, 33}, {14, 25, 36}}));
  EXPECT_EQ(ops::mul(a, b), Td::matrix({{10, 40, 90}, {40, 100, 180}}));
  EXPECT_THROW(ops::add(a, Td::vector({1, 2})), DimensionError);
  EXPECT_THROW(ops::add(b, a), DimensionError);
}

TEST(Elementwise, BroadcastGradients) {
  Rng rng(17);
  const auto a = rng_normal<double>(rng, {5, 3}, 0, 1);
  const auto b = rng_normal<double>(rng, {3}, 0, 1);
  const auto w = rng_normal<double>(rng, {5, 3}, 0, 1);
  for (auto kind : {ops::Elementwise::add, ops::Elementwise::mul}) {
    auto fa = [&](const Td& x) {
      return ValueAndGrad{weighted_sum(ops::elementwise(x, b, kind), w), ops::elementwise_backward(x, b, w, kind).da};
    };
    auto fb = [&](const Td& x) {
      return ValueAndGrad{weighted_sum(ops::elementwise(a, x, kind), w), ops::elementwise_backward(a, x, w, kind).db};
    };
    EXPECT_LT(grad_check(fa, a, 1e-5), 1e-8);
    EXPECT_LT(grad_check(fb, b, 1e-5), 1e-8);
  }
}

TEST(GradCheck, SumHasUnitGradient) {
  Rng rng(18);
  const auto x = rng_normal<double>(rng, {6, 7}, 0, 1);
  auto f = [](const Td& in) { return ValueAndGrad{ops::sum(in), Td(in.shape(), 1.0)}; };
  EXPECT_LT(grad_check(f, x, 1e-5), 1e-10);
}

// The true gradient is identically zero, so the relative metric only sees
// rounding noise (one ulp of the objective over 2 eps). Check the analytic
// side directly and the absolute agreement.
TEST(GradCheck, SoftmaxSumIsConserved) {
  Rng rng(19);
  const auto x = rng_normal<double>(rng, {10}, 0, 1);
  auto f = [](const Td& in) {
    const auto y = ops::softmax(in, 0);
    return ValueAndGrad{ops::sum(y), ops::softmax_backward(y, Td(y.shape(), 1.0), 0)};
  };
  const auto analytic = f(x);
  for (double g : analytic.grad.data()) EXPECT_LT(std::abs(g), 1e-15);
  const auto report = grad_check_report(f, x, GradCheckOptions{1e-5});
  EXPECT_LT(report.max_abs_error, 1e-10);
}

TEST(GradCheck, NonFiniteReportsOpName) {
  const auto x = Td::vector({1e300, 1e300});
  auto f = [](const Td& in) {
    const auto y = ops::mul(in, in);
    return ValueAndGrad{ops::sum(y), in};
  };
  try {
    grad_check(f, x, 1e-5);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

// Every op with a backward pass, random shapes up to 16x16, eps 1e-5.
TEST(GradCheck, RandomizedShapesProperty) {
  Rng rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s = random_matrix_shape(rng);
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const auto x = rng_normal<double>(rng, s, 0, 1);
    const auto b = rng_normal<double>(rng, {s[1], n}, 0, 1);
    const auto w = rng_normal<double>(rng, s, 0, 1);
    const auto wmm = rng_normal<double>(rng, {s[0], n}, 0, 1);
    const auto gamma = rng_normal<double>(rng, {s[1]}, 1, 0.2);
    const auto beta = rng_normal<double>(rng, {s[1]}, 0, 0.2);

    auto f_mm = [&](const Td& in) {
      return ValueAndGrad{weighted_sum(ops::matmul(in, b), wmm), ops::matmul_backward(in, b, wmm).da};
    };
    auto f_sm = [&](const Td& in) {
      const auto y = ops::softmax(in, 1);
      return ValueAndGrad{weighted_sum(y, w), ops::softmax_backward(y, w, 1)};
    };
    auto f_gelu = [&](const Td& in) {
      return ValueAndGrad{weighted_sum(ops::gelu(in), w), ops::gelu_backward(in, w)};
    };
    auto f_ln = [&](const Td& in) {
      const auto r = ops::layer_norm(in, gamma, beta);
      return ValueAndGrad{weighted_sum(r.out, w), ops::layer_norm_backward(r, gamma, w).dx};
    };
    auto f_scale = [&](const Td& in) { return ValueAndGrad{weighted_sum(ops::scale(in, 0.37), w), ops::scale(w, 0.37)}; };
    ASSERT_LT(grad_check(f_mm, x, 1e-5), 1e-5);
    ASSERT_LT(grad_check(f_sm, x, 1e-5), 1e-5);
    ASSERT_LT(grad_check(f_gelu, x, 1e-5), 1e-5);
    // D <= 2 normalizes every vector to +-1, leaving only an eps-sized gradient
    if (s[1] > 2) {
      ASSERT_LT(grad_check(f_ln, x, 1e-5), 1e-5);
    }
    ASSERT_LT(grad_check(f_scale, x, 1e-5), 1e-5);
  }
}
