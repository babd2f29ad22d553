#include <gtest/gtest.h>

#include <cmath>

#include "adml/gradcheck.hpp"

using namespace adml;
using D = double;

namespace {

Tensor<D> rand_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  return gradcheck::random_tensor(std::move(s), rng);
}

Tensor<D> run(const Var<D>& v) { return v.value(); }

Var<D> c(const Tensor<D>& t) { return Var<D>::constant(t); }

}  // namespace

TEST(Tensor, RejectsLengthMismatch) {
  EXPECT_THROW(Tensor<D>({2, 3}, std::vector<D>(5)), DimensionError);
  EXPECT_NO_THROW(Tensor<D>({2, 3}, std::vector<D>(6)));
}

TEST(Tensor, ScalarHasRankZero) {
  auto s = Tensor<D>::scalar(4.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.numel(), 1u);
  EXPECT_EQ(s.item(), 4.5);
}

TEST(Tensor, StackSliceConcatRoundTrip) {
  auto a = rand_tensor({2, 3}, 1), b = rand_tensor({1, 3}, 2);
  auto ab = concat0(a, b);
  EXPECT_EQ(ab.shape(), (Shape{3, 3}));
  EXPECT_TRUE(bitwise_equal(slice0(ab, 0, 2), a));
  EXPECT_TRUE(bitwise_equal(slice0(ab, 2, 3), b));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor<D> eye({3, 3}, std::vector<D>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto b = rand_tensor({3, 4}, 3);
  EXPECT_TRUE(bitwise_equal(run(matmul(c(eye), c(b))), b));
}

TEST(Matmul, HandArithmetic) {
  Tensor<D> a({2, 2}, std::vector<D>{1, 2, 3, 4});
  Tensor<D> b({2, 1}, std::vector<D>{1, 1});
  EXPECT_EQ(run(matmul(c(a), c(b))).vec(), (std::vector<D>{3, 7}));
}

TEST(Matmul, MatchesTripleLoop) {
  auto a = rand_tensor({4, 5}, 4), b = rand_tensor({5, 6}, 5);
  auto got = run(matmul(c(a), c(b)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      D s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a[i * 5 + k] * b[k * 6 + j];
      EXPECT_NEAR(got[i * 6 + j], s, 1e-12);
    }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(c(rand_tensor({2, 3}, 1)), c(rand_tensor({4, 2}, 2))), DimensionError);
}

TEST(Conv2d, DeltaKernelIsIdentityForOneChannel) {
  auto x = rand_tensor({2, 1, 5, 5}, 6);
  Tensor<D> w({1, 1, 3, 3}, 0.0);
  w[4] = 1.0;
  EXPECT_TRUE(bitwise_equal(run(conv2d(c(x), c(w), c(Tensor<D>({1}, 0.0)))), x));
}

TEST(Conv2d, DeltaKernelSumsChannels) {
  auto x = rand_tensor({1, 3, 4, 4}, 7);
  Tensor<D> w({2, 3, 3, 3}, 0.0);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t ch = 0; ch < 3; ++ch) w[(f * 3 + ch) * 9 + 4] = 1.0;
  auto y = run(conv2d(c(x), c(w)));
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t p = 0; p < 16; ++p) EXPECT_NEAR(y[f * 16 + p], x[p] + x[16 + p] + x[32 + p], 1e-12);
}

TEST(Conv2d, OnesKernelSumsNeighborhood) {
  auto x = rand_tensor({1, 1, 5, 5}, 8);
  auto y = run(conv2d(c(x), c(Tensor<D>({1, 1, 3, 3}, 1.0))));
  D s = 0;
  for (std::size_t i = 1; i <= 3; ++i)
    for (std::size_t j = 1; j <= 3; ++j) s += x[i * 5 + j];
  EXPECT_NEAR(y[2 * 5 + 2], s, 1e-12);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  const std::size_t B = 2, C = 3, H = 8, W = 8, F = 4;
  auto x = rand_tensor({B, C, H, W}, 9), w = rand_tensor({F, C, 3, 3}, 10), b = rand_tensor({F}, 11);
  auto y = run(conv2d(c(x), c(w), c(b)));
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          D s = b[f];
          for (std::size_t ch = 0; ch < C; ++ch)
            for (std::size_t di = 0; di < 3; ++di)
              for (std::size_t dj = 0; dj < 3; ++dj) {
                const auto ii = static_cast<long>(i + di) - 1, jj = static_cast<long>(j + dj) - 1;
                if (ii < 0 || jj < 0 || ii >= long(H) || jj >= long(W)) continue;
                s += x[((n * C + ch) * H + ii) * W + jj] * w[((f * C + ch) * 3 + di) * 3 + dj];
              }
          EXPECT_NEAR(y[((n * F + f) * H + i) * W + j], s, 1e-10);
        }
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(c(rand_tensor({1, 2, 4, 4}, 1)), c(rand_tensor({1, 3, 3, 3}, 2))), DimensionError);
}

TEST(BatchNorm, ConstantInputGivesZeros) {
  auto y = run(batch_norm(c(Tensor<D>({2, 3, 2, 2}, 7.0)), c(Tensor<D>({3}, 1.0)), c(Tensor<D>({3}, 0.0))));
  for (D v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Tensor<D> beta({3}, std::vector<D>{0.5, -1, 2});
  auto y = run(batch_norm(c(rand_tensor({2, 3, 2, 2}, 12)), c(Tensor<D>({3}, 0.0)), c(beta)));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], beta[(i / 4) % 3], 1e-15);
}

TEST(BatchNorm, MatchesStatisticsOracle) {
  const std::size_t B = 4, F = 3, HW = 9;
  auto x = rand_tensor({B, F, 3, 3}, 13);
  Tensor<D> gamma({F}, std::vector<D>{0.5, 1.5, -2}), beta({F}, std::vector<D>{0.1, 0, -0.3});
  auto y = run(batch_norm(c(x), c(gamma), c(beta)));
  for (std::size_t f = 0; f < F; ++f) {
    D mx = 0, vx = 0, my = 0, vy = 0;
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t p = 0; p < HW; ++p) mx += x[(n * F + f) * HW + p];
    mx /= B * HW;
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t p = 0; p < HW; ++p) vx += std::pow(x[(n * F + f) * HW + p] - mx, 2);
    vx /= B * HW;
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t p = 0; p < HW; ++p) my += y[(n * F + f) * HW + p];
    my /= B * HW;
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t p = 0; p < HW; ++p) vy += std::pow(y[(n * F + f) * HW + p] - my, 2);
    vy /= B * HW;
    EXPECT_NEAR(my, beta[f], 1e-6);
    EXPECT_NEAR(vy, gamma[f] * gamma[f] * vx / (vx + kBatchNormEps), 1e-4);
  }
}

TEST(Relu, ZeroesNegatives) {
  auto y = run(relu(c(Tensor<D>({3}, std::vector<D>{-1, 0, 2}))));
  EXPECT_EQ(y.vec(), (std::vector<D>{0, 0, 2}));
}

TEST(MaxPool, TakesBlockMaximum) {
  auto y = run(max_pool2x2(c(Tensor<D>({1, 1, 2, 2}, std::vector<D>{1, 2, 3, 4}))));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 4.0);
}

TEST(MaxPool, OddExtentFloors) {
  auto y = run(max_pool2x2(c(rand_tensor({1, 2, 21, 21}, 14))));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 10, 10}));
}

TEST(MaxPool, TiesRouteGradientToFirstMaximum) {
  auto x = Var<D>::leaf(Tensor<D>({1, 1, 2, 2}, 1.0));
  auto g = grad(sum(max_pool2x2(x)), {x})[0].value();
  EXPECT_EQ(g.vec(), (std::vector<D>{1, 0, 0, 0}));
}

TEST(CrossEntropy, UniformLogitsGiveLogN) {
  const std::vector<int> y{0, 3};
  EXPECT_NEAR(cross_entropy(c(Tensor<D>({2, 5}, 0.0)), std::span<const int>(y)).item(), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectLogitGivesZero) {
  const std::vector<int> y{0};
  Tensor<D> z({1, 5}, 0.0);
  z[0] = 100.0;
  EXPECT_LT(cross_entropy(c(z), std::span<const int>(y)).item(), 1e-40);
}

TEST(CrossEntropy, MatchesNaiveSoftmax) {
  auto z = rand_tensor({4, 5}, 15);
  const std::vector<int> y{1, 0, 4, 2};
  D expect = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    D s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += std::exp(z[i * 5 + j]);
    expect += -std::log(std::exp(z[i * 5 + y[i]]) / s);
  }
  EXPECT_NEAR(cross_entropy(c(z), std::span<const int>(y)).item(), expect / 4, 1e-12);
}

TEST(CrossEntropy, OutOfRangeLabelThrows) {
  const std::vector<int> bad{5}, neg{-1};
  EXPECT_THROW(cross_entropy(c(Tensor<D>({1, 5}, 0.0)), std::span<const int>(bad)), LabelError);
  EXPECT_THROW(cross_entropy(c(Tensor<D>({1, 5}, 0.0)), std::span<const int>(neg)), LabelError);
}

TEST(Determinism, SameInputsGiveBitIdenticalOutputs) {
  auto x = rand_tensor({2, 3, 6, 6}, 16), w = rand_tensor({4, 3, 3, 3}, 17);
  EXPECT_TRUE(bitwise_equal(run(max_pool2x2(relu(conv2d(c(x), c(w))))),
                            run(max_pool2x2(relu(conv2d(c(x), c(w)))))));
}
