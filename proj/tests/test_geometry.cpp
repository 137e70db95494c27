#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "grad_check.hpp"
#include <Eigen/Geometry>

#include "muviecast/error.hpp"
#include "muviecast/geometry.hpp"
#include "muviecast/synthetic.hpp"

namespace {

using muvie::Camera;
using muvie::Tensor;
using muvie::ag::Var;
namespace ag = muvie::ag;

struct PlaneFixture {
  muvie::synthetic::RenderedScene rendered = muvie::synthetic::make_plane_scene();
  muvie::MultiViewSample sample = muvie::make_sample(rendered.scene, 1, {0, 2});
};

const PlaneFixture& plane() {
  static const PlaneFixture f;
  return f;
}

// Reference pixels whose true surface point projects inside at least one
// source view.
Tensor visible_mask(const muvie::MultiViewSample& s, const Tensor& depth) {
  Tensor any({1, depth.dim(1), depth.dim(2)});
  for (const auto& cam : s.source_cameras) {
    Tensor grid, mask;
    muvie::warp_grid(cam, s.ref_camera, depth, depth.dim(1), depth.dim(2), s.height(), s.width(),
                     grid, mask);
    for (std::size_t i = 0; i < any.numel(); ++i) any[i] = std::max(any[i], mask[i]);
  }
  return any;
}

TEST(HomographyWarp, SameCameraIsIdentity) {
  const auto& s = plane().sample;
  const auto r = muvie::homography_warp(Var::constant(s.ref_image), s.ref_camera, s.ref_camera,
                                        Tensor({1}, 4.2));
  for (double m : r.mask.span()) EXPECT_EQ(m, 1.0);
  for (std::size_t i = 0; i < s.ref_image.numel(); ++i)
    ASSERT_NEAR(r.warped.value()[i], s.ref_image[i], 1e-12);
}

TEST(HomographyWarp, TranslationShiftsByFocalTimesBaselineOverDepth) {
  Camera ref;
  ref.intrinsics << 80, 0, 31.5, 0, 80, 23.5, 0, 0, 1;
  Camera src = ref;
  const double tx = 0.3, depth = 4.0;
  src.extrinsics(0, 3) = -tx;  // source center at +tx along x
  Tensor grid, mask;
  muvie::warp_grid(src, ref, Tensor({1}, depth), 48, 64, 48, 64, grid, mask);
  const double shift = 80 * tx / depth;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x) {
      EXPECT_NEAR(grid[y * 64 + x], x - shift, 1e-9);
      EXPECT_NEAR(grid[48 * 64 + y * 64 + x], y, 1e-9);
    }
  EXPECT_EQ(mask[0], 0.0);
  EXPECT_EQ(mask[63], 1.0);
}

TEST(HomographyWarp, RoundTripOnTiltedPlane) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> small(-0.08, 0.08);
  const int w = 96, h = 72;
  auto camera = [&](double angle_y, double tx) {
    Camera c;
    c.intrinsics << 90, 0, (w - 1) / 2.0, 0, 90, (h - 1) / 2.0, 0, 0, 1;
    const Eigen::Matrix3d r =
        (Eigen::AngleAxisd(angle_y, Eigen::Vector3d::UnitY()) *
         Eigen::AngleAxisd(small(rng), Eigen::Vector3d::UnitX()))
            .toRotationMatrix();
    c.extrinsics.topLeftCorner<3, 3>() = r;
    c.extrinsics.topRightCorner<3, 1>() = -r * Eigen::Vector3d(tx, 0.05, 0);
    return c;
  };
  const Camera a = camera(0.05, -0.2), b = camera(-0.04, 0.25);
  // Plane z = 5 in world; per-pixel depth maps by ray intersection.
  auto plane_depth = [&](const Camera& c) {
    Tensor d({1, h, w});
    const Eigen::Matrix3d kinv = c.intrinsics.inverse();
    const Eigen::Matrix3d rt = c.rotation().transpose();
    const Eigen::Vector3d center = -rt * c.translation();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Eigen::Vector3d ray_cam = kinv * Eigen::Vector3d(x, y, 1);
        const Eigen::Vector3d ray = rt * ray_cam;
        d.at(0, y, x) = (5.0 - center.z()) / ray.z() * ray_cam.z();
      }
    return d;
  };
  Tensor img({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(0, y, x) = 0.5 + 0.4 * std::sin(0.11 * x) * std::cos(0.13 * y);

  const auto ab = muvie::homography_warp(Var::constant(img), b, a, plane_depth(a));  // b -> a
  const auto back = muvie::homography_warp(ab.warped, a, b, plane_depth(b));       // a -> b
  const auto mask_b = muvie::homography_warp(Var::constant(ab.mask), a, b, plane_depth(b));
  double sq = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < img.numel(); ++i) {
    if (back.mask[i] < 1.0 || mask_b.warped.value()[i] < 1.0 - 1e-9) continue;
    const double d = back.warped.value()[i] - img[i];
    sq += d * d;
    ++n;
  }
  ASSERT_GT(n, static_cast<int>(img.numel() / 2));
  EXPECT_LT(std::sqrt(sq / n), 0.02);
}

TEST(PlaneSweep, RecoversFrontoParallelPlane) {
  const auto& f = plane();
  const auto backend = muvie::make_backend({});
  const auto est = backend->estimate(f.sample);
  ASSERT_EQ(est.stages.size(), 3u);
  EXPECT_NO_THROW(muvie::validate_estimate(est, 1e-4));

  const Tensor& d0 = est.stages[0].depth.value();
  EXPECT_EQ(d0.dim(1), f.sample.height() / 2);
  const Tensor truth({1, d0.dim(1), d0.dim(2)}, 5.0);
  const Camera cam0 = muvie::scale_camera(f.sample.ref_camera, 0.5);
  muvie::MultiViewSample half = f.sample;
  half.ref_camera = cam0;
  for (auto& c : half.source_cameras) c = muvie::scale_camera(c, 0.5);
  half.ref_image = Tensor({3, d0.dim(1), d0.dim(2)});
  const Tensor visible = visible_mask(half, truth);
  const double interval = f.sample.ref_camera.depth_interval;
  int good = 0, total = 0;
  for (std::size_t i = 0; i < d0.numel(); ++i) {
    if (visible[i] < 1.0) continue;
    ++total;
    if (std::abs(d0[i] - 5.0) <= interval) ++good;
  }
  ASSERT_GT(total, static_cast<int>(d0.numel() / 2));
  EXPECT_GE(static_cast<double>(good) / total, 0.95) << good << "/" << total;

  // Coarse stage upsampled agrees with the fine stage.
  const Tensor& d1 = est.stages[1].depth.value();
  const double coarse_interval =
      est.stages[1].hypotheses[1] - est.stages[1].hypotheses[0];
  int agree = 0, n = 0;
  for (int y = 0; y < d0.dim(1); ++y)
    for (int x = 0; x < d0.dim(2); ++x) {
      if (visible.at(0, y, x) < 1.0) continue;
      ++n;
      if (std::abs(d1.at(0, y / 2, x / 2) - d0.at(0, y, x)) <= 3 * coarse_interval) ++agree;
    }
  EXPECT_GE(static_cast<double>(agree) / n, 0.9);
}

TEST(PlaneSweep, SourceOrderDoesNotMatter) {
  const auto& f = plane();
  const auto backend = muvie::make_backend({});
  auto swapped = f.sample;
  std::swap(swapped.source_images[0], swapped.source_images[1]);
  std::swap(swapped.source_cameras[0], swapped.source_cameras[1]);
  std::swap(swapped.source_indices[0], swapped.source_indices[1]);
  const auto a = backend->estimate(f.sample);
  const auto b = backend->estimate(swapped);
  for (std::size_t l = 0; l < a.stages.size(); ++l) {
    const Tensor& x = a.stages[l].volume.value();
    const Tensor& y = b.stages[l].volume.value();
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_NEAR(x[i], y[i], 1e-5);
    const Tensor& dx = a.stages[l].depth.value();
    const Tensor& dy = b.stages[l].depth.value();
    for (std::size_t i = 0; i < dx.numel(); ++i) ASSERT_NEAR(dx[i], dy[i], 1e-5);
  }
}

TEST(PlaneSweep, GradientsReachInputImagesOnly) {
  muvie::synthetic::PlaneOptions opts;
  opts.width = 32;
  opts.height = 32;
  opts.num_depth = 8;
  const auto rendered = muvie::synthetic::make_plane_scene(opts);
  auto sample = muvie::make_sample(rendered.scene, 1, {0, 2});
  muvie::BackendSpec spec;
  spec.hypotheses = {8, 6, 4};
  spec.temperature = 0.5;
  const muvie::PlaneSweepBackend backend(spec);
  const auto before = backend.checksum();
  auto loss = [&](const std::vector<Var>& v) {
    const auto est = backend.estimate(sample, v[0], {v[1], v[2]});
    Var total = ag::mean(est.stages[0].depth);
    for (std::size_t l = 0; l < est.stages.size(); ++l)
      total = ag::add(total, ag::mean(ag::square(est.stages[l].volume)));
    return total;
  };
  const auto r = muvie::testing::grad_check(
      loss, {sample.ref_image, sample.source_images[0], sample.source_images[1]}, 1e-5, 60);
  EXPECT_LT(r.rel_error, 1e-4);
  EXPECT_EQ(backend.checksum(), before);
  for (const auto& [name, p] : backend.params().entries()) EXPECT_FALSE(p.requires_grad()) << name;
}

TEST(PlaneSweep, RejectsBadInputs) {
  const auto& f = plane();
  const auto backend = muvie::make_backend({});
  auto bad = f.sample;
  bad.depth_hypotheses[0] = -1.0;
  EXPECT_THROW(backend->estimate(bad), muvie::ValidationError);
  auto lonely = f.sample;
  lonely.source_images.clear();
  lonely.source_cameras.clear();
  EXPECT_THROW(backend->estimate(lonely), muvie::ValidationError);
  auto odd = f.sample;
  odd = muvie::scale_sample(f.sample, 0.75);  // 96x72 is not a multiple of 32
  EXPECT_THROW(backend->estimate(odd), muvie::ValidationError);
}

TEST(PlaneSweep, PresetParameterBudgets) {
  muvie::BackendSpec cas;
  EXPECT_NEAR(muvie::PlaneSweepBackend(cas).parameter_count() / 1e6, 0.93, 0.93 * 0.05);
  muvie::BackendSpec pm;
  pm.preset = "patchmatchnet";
  EXPECT_NEAR(muvie::PlaneSweepBackend(pm).parameter_count() / 1e6, 0.22, 0.22 * 0.05);
  muvie::BackendSpec bad;
  bad.preset = "nope";
  EXPECT_THROW(muvie::make_backend(bad), muvie::ConfigError);
}

TEST(ExternalBackend, LoadsPluginWithVolumelessStage) {
  muvie::BackendSpec spec;
  spec.kind = std::string("external:") + MUVIECAST_TEST_PLUGIN;
  const auto backend = muvie::make_backend(spec);
  const auto est = backend->estimate(plane().sample);
  ASSERT_EQ(est.stages.size(), 3u);
  EXPECT_FALSE(est.stages[1].volume.defined());
  EXPECT_TRUE(est.stages[0].volume.defined());
  EXPECT_NO_THROW(muvie::validate_estimate(est));
  EXPECT_EQ(backend->calls(), 1);

  spec.kind = "external:/nonexistent/backend.so";
  EXPECT_THROW(muvie::make_backend(spec), muvie::LoadError);
}

}  // namespace
