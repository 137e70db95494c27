#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <random>

#include "muviecast/color_adjust.hpp"
#include "muviecast/error.hpp"

namespace {

using muvie::ColorMap;
using muvie::PixelMatrix;

struct Oracle {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
};

// Two-pass moments with explicit loops.
Oracle oracle_moments(const PixelMatrix& px) {
  Oracle o;
  const double n = static_cast<double>(px.rows());
  for (Eigen::Index r = 0; r < px.rows(); ++r)
    for (int c = 0; c < 3; ++c) o.mean[c] += px(r, c) / n;
  for (Eigen::Index r = 0; r < px.rows(); ++r)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) o.cov(a, b) += (px(r, a) - o.mean[a]) * (px(r, b) - o.mean[b]) / n;
  return o;
}

PixelMatrix gaussian_cloud(int n, const Eigen::Vector3d& mean, const Eigen::Matrix3d& mix,
                           std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  PixelMatrix px(n, 3);
  for (int r = 0; r < n; ++r) {
    const Eigen::Vector3d z(g(rng), g(rng), g(rng));
    px.row(r) = (mean + mix * z).transpose();
  }
  return px;
}

// Diagonally dominant mixing keeps the clouds well conditioned.
Eigen::Matrix3d random_mix(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = u(rng) * scale;
  return m + Eigen::Matrix3d::Identity() * scale;
}

TEST(ColorMap, IdentityForEqualDistributions) {
  std::mt19937_64 rng(1);
  const PixelMatrix px = gaussian_cloud(10000, {0.4, 0.5, 0.6}, random_mix(rng, 0.1), rng);
  const ColorMap map = muvie::fit_color_map(px, px);
  EXPECT_LT((map.m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT(map.t.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ColorMap, MatchesStyleMomentsOnGaussianClouds) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const PixelMatrix content = gaussian_cloud(10000, {0.3, 0.5, 0.4}, random_mix(rng, 0.08), rng);
    const PixelMatrix style = gaussian_cloud(10000, {0.6, 0.2, 0.5}, random_mix(rng, 0.12), rng);
    const ColorMap map = muvie::fit_color_map(content, style);
    const Oracle s = oracle_moments(style);
    const Oracle mapped = oracle_moments(muvie::apply_color_map(content, map));
    EXPECT_LT((mapped.mean - s.mean).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LT((mapped.cov - s.cov).norm() / s.cov.norm(), 1e-3);
    // M mu_c + t = mu_s by construction.
    EXPECT_LT((map.m * oracle_moments(content).mean + map.t - s.mean).norm(), 1e-12);
  }
}

TEST(ColorMap, ApplyExamples) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  muvie::Tensor img({3, 4, 5});
  for (double& v : img.span()) v = u(rng);
  const muvie::Tensor same = muvie::apply_color_map(img, ColorMap{});
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(same[i], img[i]);

  ColorMap flat;
  flat.m.setZero();
  flat.t = {0.2, 0.7, 0.4};
  const muvie::Tensor constant = muvie::apply_color_map(img, flat);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 20; ++p) EXPECT_EQ(constant[c * 20 + p], flat.t[c]);
}

TEST(ColorMap, ClampingIsOptional) {
  muvie::Tensor img({3, 2, 2}, 0.9);
  ColorMap gain;
  gain.m *= 2.0;
  const muvie::Tensor clamped = muvie::apply_color_map(img, gain, true);
  const muvie::Tensor raw = muvie::apply_color_map(img, gain, false);
  for (double v : clamped.span()) EXPECT_EQ(v, 1.0);
  for (double v : raw.span()) EXPECT_DOUBLE_EQ(v, 1.8);
}

TEST(ColorMap, AffinityAndComposition) {
  std::mt19937_64 rng(4);
  const PixelMatrix content = gaussian_cloud(5000, {0.5, 0.5, 0.5}, random_mix(rng, 0.1), rng);
  const PixelMatrix style = gaussian_cloud(5000, {0.3, 0.6, 0.2}, random_mix(rng, 0.05), rng);
  const ColorMap map = muvie::fit_color_map(content, style);

  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 20; ++k) {
    PixelMatrix a(1, 3), b(1, 3), mix(1, 3);
    const double alpha = u(rng);
    a << u(rng), u(rng), u(rng);
    b << u(rng), u(rng), u(rng);
    mix = alpha * a + (1 - alpha) * b;
    const PixelMatrix lhs = muvie::apply_color_map(mix, map);
    const PixelMatrix rhs = alpha * muvie::apply_color_map(a, map) + (1 - alpha) * muvie::apply_color_map(b, map);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }

  const ColorMap again = muvie::fit_color_map(muvie::apply_color_map(content, map), style);
  EXPECT_LT((again.m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT(again.t.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(ColorMap, DegenerateInputs) {
  const PixelMatrix constant = PixelMatrix::Constant(100, 3, 0.4);
  std::mt19937_64 rng(5);
  const PixelMatrix style = gaussian_cloud(100, {0.5, 0.5, 0.5}, random_mix(rng, 0.1), rng);
  EXPECT_THROW(muvie::fit_color_map(constant, style), muvie::ValidationError);
  const ColorMap forced = muvie::fit_color_map(constant, style, 1e-6);
  EXPECT_TRUE(forced.m.allFinite());
  EXPECT_THROW(muvie::fit_color_map(style.topRows(3), style), muvie::ValidationError);
  EXPECT_THROW(muvie::fit_color_map(style, style, 0.0), muvie::ConfigError);
}

TEST(ColorMap, ModeNames) {
  EXPECT_EQ(muvie::parse_color_adjust_mode("pre"), muvie::ColorAdjustMode::kPre);
  EXPECT_EQ(muvie::color_adjust_name(muvie::ColorAdjustMode::kPost), "post");
  EXPECT_THROW(muvie::parse_color_adjust_mode("both"), muvie::ConfigError);
}

}  // namespace
