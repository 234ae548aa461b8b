#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "nlccam/tensor.hpp"
#include "test_util.hpp"

namespace nlccam {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

// Index-triple-loop reference product.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.extent(0), b.extent(1)});
  for (std::size_t i = 0; i < a.extent(0); ++i)
    for (std::size_t j = 0; j < b.extent(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.extent(1); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

TEST(TensorTest, RejectsBadShapes) {
  EXPECT_THROW(Tensor({0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(MatmulTest, HandComputedProduct) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(c, Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(MatmulTest, IdentityIsNeutral) {
  Rng rng(3);
  const Tensor a = random_tensor({4, 6}, rng);
  EXPECT_EQ(matmul(a, Tensor::identity(6)), a);
  EXPECT_EQ(matmul(Tensor::identity(4), a), a);
}

TEST(MatmulTest, MatchesTripleLoop) {
  Rng rng(7);
  const Tensor a = random_tensor({5, 7}, rng);
  const Tensor b = random_tensor({7, 3}, rng);
  EXPECT_LE(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
}

TEST(MatmulTest, RandomShapesAgreeWithOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = static_cast<std::size_t>(rng.between(1, 16));
    const auto k = static_cast<std::size_t>(rng.between(1, 16));
    const auto n = static_cast<std::size_t>(rng.between(1, 16));
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = random_tensor({k, n}, rng);
    const Tensor fast = matmul(a, b);
    const Tensor ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < fast.size(); ++i) {
      EXPECT_LE(std::abs(fast[i] - ref[i]), 1e-12 * std::max(1.0, std::abs(ref[i])));
    }
  }
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(SoftmaxTest, KnownValues) {
  const Tensor u = softmax(Tensor::vector({0, 0, 0}));
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  const Tensor p = softmax(Tensor::vector({1, 2, 3}));
  EXPECT_NEAR(p[0], 0.09003, 1e-5);
  EXPECT_NEAR(p[1], 0.24473, 1e-5);
  EXPECT_NEAR(p[2], 0.66524, 1e-5);

  const Tensor big = softmax(Tensor::vector({1000, 0}));
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_NEAR(big[1], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(big[0]) && std::isfinite(big[1]));
}

TEST(SoftmaxTest, SumsToOneAndIgnoresShift) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = static_cast<std::size_t>(rng.between(1, 20));
    const Tensor v = random_tensor({d}, rng, -10, 10);
    const Tensor p = softmax(v);
    double sum = 0.0;
    for (double x : p.data()) {
      EXPECT_GT(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);

    Tensor shifted = v;
    const double c = rng.uniform(-50, 50);
    for (auto& x : shifted.data()) x += c;
    EXPECT_LE(max_abs_diff(softmax(shifted), p), 1e-12);
  }
}

TEST(SoftmaxTest, RejectsNonVectors) { EXPECT_THROW(softmax(Tensor({2, 2})), DimensionError); }

TEST(SpatialMeanTest, HandValues) {
  EXPECT_EQ(spatial_mean(Tensor({1, 2, 2}, {1, 2, 3, 4})), Tensor::vector({2.5}));
  EXPECT_EQ(spatial_mean(Tensor::filled({1, 3, 5}, 4.25)), Tensor::vector({4.25}));
}

TEST(SpatialMeanTest, MatchesLoopAndIsLinear) {
  Rng rng(13);
  const Tensor f = random_tensor({4, 5, 6}, rng);
  const Tensor g = random_tensor({4, 5, 6}, rng);
  const Tensor m = spatial_mean(f);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t h = 0; h < 5; ++h)
      for (std::size_t w = 0; w < 6; ++w) s += f.at(c, h, w);
    EXPECT_NEAR(m[c], s / 30.0, 1e-12);
  }

  const double a = 1.7, b = -0.3;
  Tensor combo = f;
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * f[i] + b * g[i];
  const Tensor lhs = spatial_mean(combo);
  const Tensor mg = spatial_mean(g);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(lhs[c], a * m[c] + b * mg[c], 1e-12);
}

TEST(SpatialMeanTest, RequiresRankThree) { EXPECT_THROW(spatial_mean(Tensor({3, 3})), DimensionError); }

TEST(BilinearResizeTest, AlignCornersUpsample) {
  const Tensor out = bilinear_resize(Tensor::matrix({{0, 1}, {1, 2}}), 3, 3);
  const Tensor want = Tensor::matrix({{0, 0.5, 1}, {0.5, 1, 1.5}, {1, 1.5, 2}});
  EXPECT_LE(max_abs_diff(out, want), 1e-15);
}

TEST(BilinearResizeTest, ConstantAndIdentity) {
  const Tensor c = bilinear_resize(Tensor::matrix({{7}}), 4, 9);
  for (double v : c.data()) EXPECT_EQ(v, 7.0);

  Rng rng(2);
  const Tensor m = random_tensor({5, 6}, rng);
  EXPECT_EQ(bilinear_resize(m, 5, 6), m);
}

TEST(BilinearResizeTest, CornersPreservedAndRangeBounded) {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto h = static_cast<std::size_t>(rng.between(1, 8));
    const auto w = static_cast<std::size_t>(rng.between(1, 8));
    const auto oh = static_cast<std::size_t>(rng.between(1, 20));
    const auto ow = static_cast<std::size_t>(rng.between(1, 20));
    const Tensor m = random_tensor({h, w}, rng);
    const Tensor out = bilinear_resize(m, oh, ow);
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    for (double v : out.data()) {
      EXPECT_GE(v, *lo - 1e-12);
      EXPECT_LE(v, *hi + 1e-12);
    }
    if (oh > 1 && ow > 1) {
      EXPECT_NEAR(out.at(0, 0), m.at(0, 0), 1e-12);
      EXPECT_NEAR(out.at(oh - 1, ow - 1), m.at(h - 1, w - 1), 1e-12);
    }
  }
}

TEST(BilinearResizeTest, ZeroTargetRejected) {
  EXPECT_THROW(bilinear_resize(Tensor({2, 2}), 0, 3), DimensionError);
  EXPECT_THROW(bilinear_resize(Tensor({2, 2, 2}), 3, 3), DimensionError);
}

}  // namespace
}  // namespace nlccam
