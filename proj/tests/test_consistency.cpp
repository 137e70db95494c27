#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "muviecast/consistency.hpp"
#include "muviecast/error.hpp"
#include "muviecast/synthetic.hpp"

namespace {

using muvie::Tensor;

const muvie::synthetic::RenderedScene& plane() {
  static const auto r = [] {
    muvie::synthetic::PlaneOptions o;
    o.views = 2;
    return muvie::synthetic::make_plane_scene(o);
  }();
  return r;
}

const muvie::synthetic::RenderedScene& cube() {
  static const auto r = muvie::synthetic::make_cube_scene();
  return r;
}

const std::vector<muvie::ViewPair> kPlanePairs = {{0, 1}, {1, 0}};

Tensor gray_inverted(const Tensor& rgb) {
  Tensor out(rgb.shape());
  const std::size_t hw = rgb.numel() / 3;
  for (std::size_t p = 0; p < hw; ++p) {
    const double g = 0.299 * rgb[p] + 0.587 * rgb[hw + p] + 0.114 * rgb[2 * hw + p];
    for (int c = 0; c < 3; ++c) out[c * hw + p] = 1.0 - g;
  }
  return out;
}

TEST(Consistency, IdenticalViewsScoreZero) {
  const auto& r = plane();
  const std::vector<Tensor> images = {r.scene.images[0], r.scene.images[0]};
  const std::vector<muvie::Camera> cams = {r.scene.cameras[0], r.scene.cameras[0]};
  const std::vector<Tensor> depths(2, Tensor({1, r.scene.height(), r.scene.width()}, 3.7));
  const auto report = muvie::consistency_score(images, cams, depths, kPlanePairs);
  EXPECT_EQ(report.valid_pairs, 2);
  EXPECT_NEAR(report.mean_rmse, 0.0, 1e-12);  // projection round-off only
  for (const auto& p : report.pairs) EXPECT_GT(p.valid_fraction, 0.99);
}

TEST(Consistency, GroundTruthPlaneHasOnlyInterpolationError) {
  const auto& r = plane();
  for (bool normalize : {false, true}) {
    const auto report = muvie::consistency_score(r.scene.images, r.scene.cameras, r.depths, kPlanePairs,
                                                 {0.01, normalize});
    EXPECT_EQ(report.valid_pairs, 2);
    EXPECT_LT(report.mean_rmse, 0.02) << normalize;
    for (const auto& p : report.pairs) EXPECT_GT(p.valid_fraction, 0.5);
  }
}

TEST(Consistency, PermutedPixelsAreInconsistent) {
  const auto& r = plane();
  auto images = r.scene.images;
  const std::size_t hw = images[1].numel() / 3;
  std::vector<std::size_t> perm(hw);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  Tensor shuffled(images[1].shape());
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < hw; ++p) shuffled[c * hw + p] = images[1][c * hw + perm[p]];
  images[1] = shuffled;
  const auto report = muvie::consistency_score(images, r.scene.cameras, r.depths, kPlanePairs);
  EXPECT_GT(report.mean_rmse, 0.2);
}

TEST(Consistency, ReversedPairsAgreeOnCube) {
  const auto& r = cube();
  const auto forward = muvie::neighbor_pairs(r.scene, 3);
  std::vector<muvie::ViewPair> reversed;
  for (auto [i, j] : forward) reversed.emplace_back(j, i);
  const auto a = muvie::consistency_score(r.scene.images, r.scene.cameras, r.depths, {{0, 1}, {1, 2}, {2, 3}});
  const auto b = muvie::consistency_score(r.scene.images, r.scene.cameras, r.depths, {{1, 0}, {2, 1}, {3, 2}});
  ASSERT_GT(a.mean_rmse, 0.0);
  EXPECT_LT(std::abs(a.mean_rmse - b.mean_rmse) / a.mean_rmse, 0.1);
  const auto all = muvie::consistency_score(r.scene.images, r.scene.cameras, r.depths, forward);
  const auto all_rev = muvie::consistency_score(r.scene.images, r.scene.cameras, r.depths, reversed);
  EXPECT_LT(std::abs(all.mean_rmse - all_rev.mean_rmse) / all.mean_rmse, 0.1);
}

TEST(Consistency, NormalizedScoreIgnoresGlobalAffineColorChange) {
  const auto& r = cube();
  auto changed = r.scene.images;
  const double gain[3] = {0.6, 1.3, -0.8}, bias[3] = {0.1, -0.2, 0.9};
  for (auto& img : changed) {
    const std::size_t hw = img.numel() / 3;
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < hw; ++p) img[c * hw + p] = gain[c] * img[c * hw + p] + bias[c];
  }
  const auto pairs = muvie::neighbor_pairs(r.scene, 3);
  const auto a = muvie::consistency_score(r.scene.images, r.scene.cameras, r.depths, pairs);
  const auto b = muvie::consistency_score(changed, r.scene.cameras, r.depths, pairs);
  EXPECT_NEAR(a.mean_rmse, b.mean_rmse, 1e-9);
}

TEST(Consistency, PairsWithoutOverlapAreFlagged) {
  const auto& r = cube();
  std::vector<Tensor> depths = r.depths;
  depths[0] = Tensor(depths[0].shape());  // no valid depth in view 0
  const auto report =
      muvie::consistency_score(r.scene.images, r.scene.cameras, depths, {{0, 1}, {1, 2}});
  EXPECT_TRUE(report.pairs[0].flagged);
  EXPECT_FALSE(report.pairs[1].flagged);
  EXPECT_EQ(report.valid_pairs, 1);
  EXPECT_EQ(report.mean_rmse, report.pairs[1].rmse);
}

TEST(CompareSets, Examples) {
  const auto& r = cube();
  const auto pairs = muvie::neighbor_pairs(r.scene, 3);
  const auto same = muvie::compare_sets(r.scene.images, r.scene.images, r.scene.cameras, r.depths, pairs);
  EXPECT_EQ(same.ratio, 1.0);

  auto flicker = r.scene.images;
  for (std::size_t v = 1; v < flicker.size(); v += 2) flicker[v] = gray_inverted(flicker[v]);
  const auto bad = muvie::compare_sets(r.scene.images, flicker, r.scene.cameras, r.depths, pairs);
  EXPECT_GT(bad.ratio, 3.0);

  const std::vector<Tensor> fewer(r.scene.images.begin(), r.scene.images.end() - 1);
  EXPECT_THROW(muvie::compare_sets(r.scene.images, fewer, r.scene.cameras, r.depths, pairs),
               muvie::ValidationError);
}

TEST(CompareSets, EstimatedDepthsFromBackend) {
  const auto& r = cube();
  const auto backend = muvie::make_backend({});
  const auto depths = muvie::estimate_depths(r.scene, *backend, 3);
  ASSERT_EQ(depths.size(), r.scene.images.size());
  EXPECT_EQ(depths[0].shape(), (muvie::Shape{1, r.scene.height(), r.scene.width()}));
  const auto cmp = muvie::compare_sets(r.scene, r.scene.images, *backend, muvie::DepthSource::kFromInput, 3);
  EXPECT_EQ(cmp.ratio, 1.0);
  EXPECT_GT(cmp.input.valid_pairs, 0);
  EXPECT_EQ(muvie::parse_depth_source("from_stylized"), muvie::DepthSource::kFromStylized);
  EXPECT_THROW(muvie::parse_depth_source("gt"), muvie::ConfigError);
}

}  // namespace
