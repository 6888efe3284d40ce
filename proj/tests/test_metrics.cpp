#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tzlab/error.hpp"
#include "tzlab/metrics.hpp"
#include "test_util.hpp"

using namespace tzlab;

TEST(Psnr, IdenticalIsInfinite) {
  const Tensor x({1, 8, 8}, 0.3);
  EXPECT_TRUE(std::isinf(psnr(x, x)));
  EXPECT_EQ(format_metric(psnr(x, x)), "inf");
}

TEST(Psnr, KnownMse) {
  const Tensor x({100}, 0.5);
  const Tensor y({100}, 0.6);
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-10);
}

TEST(Psnr, MatchesFormulaAndIsSymmetric) {
  std::mt19937_64 rng(21);
  const Tensor x = test::random_tensor({3, 9, 7}, rng, 0.0, 1.0);
  const Tensor y = test::random_tensor({3, 9, 7}, rng, 0.0, 1.0);
  long double se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (long double)(x[i] - y[i]) * (x[i] - y[i]);
  const double oracle = static_cast<double>(-10.0L * std::log10(se / x.size()));
  EXPECT_NEAR(psnr(x, y), oracle, 1e-10);
  EXPECT_EQ(psnr(x, y), psnr(y, x));
}

TEST(Psnr, ShapeMismatchThrows) { EXPECT_THROW(psnr(Tensor({4}, 0.0), Tensor({5}, 0.0)), ShapeError); }

TEST(Ssim, IdenticalIsOne) {
  std::mt19937_64 rng(22);
  const Tensor x = test::random_tensor({1, 16, 16}, rng, 0.0, 1.0);
  EXPECT_EQ(ssim(x, x), 1.0);
}

TEST(Ssim, InvertedBinaryIsNegative) {
  std::mt19937_64 rng(23);
  Tensor x({20, 20});
  std::bernoulli_distribution b(0.5);
  for (double& v : x.values()) v = b(rng) ? 1.0 : 0.0;
  Tensor y = x;
  for (double& v : y.values()) v = 1.0 - v;
  EXPECT_LT(ssim(x, y), 0.0);
}

TEST(Ssim, ConstantImagesFollowLuminanceTerm) {
  const Tensor x({12, 12}, 0.5);
  const Tensor y({12, 12}, 0.501);
  const double c1 = 1e-4;
  const double oracle = (2 * 0.5 * 0.501 + c1) / (0.25 + 0.501 * 0.501 + c1);
  EXPECT_NEAR(ssim(x, y), oracle, 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
  std::mt19937_64 rng(24);
  const Tensor x = test::random_tensor({2, 14, 15}, rng, 0.0, 1.0);
  const Tensor y = test::random_tensor({2, 14, 15}, rng, 0.0, 1.0);
  EXPECT_EQ(ssim(x, y), ssim(y, x));
  EXPECT_LE(std::abs(ssim(x, y)), 1.0);
}

TEST(Ssim, TooSmallThrows) { EXPECT_THROW(ssim(Tensor({10, 10}, 0.0), Tensor({10, 10}, 0.0)), ShapeError); }
