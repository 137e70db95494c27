#include "muviecast/synthetic.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <limits>
#include <random>

namespace muvie::synthetic {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kSupersample = 3;

Camera make_camera(int width, int height, double focal_w, const Eigen::Matrix3d& r,
                   const Eigen::Vector3d& t, double depth_min, double depth_max, int num) {
  Camera cam;
  cam.intrinsics << focal_w * width, 0, (width - 1) / 2.0, 0, focal_w * width, (height - 1) / 2.0,
      0, 0, 1;
  cam.extrinsics.setIdentity();
  cam.extrinsics.topLeftCorner<3, 3>() = r;
  cam.extrinsics.topRightCorner<3, 1>() = t;
  cam.num_depth = num;
  cam.depth_min = depth_min;
  cam.depth_interval = (depth_max - depth_min) / (num - 1);
  return cam;
}

// World-to-camera rotation for a camera at `eye` looking at `target`, with
// image y pointing along world -y.
Eigen::Matrix3d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = Eigen::Vector3d(0, -1, 0).cross(z);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  return r;
}

// Ray casting with kSupersample^2 samples per pixel for color; depth is taken
// at the pixel center.
template <typename Hit>
void render(const Camera& cam, int width, int height, Hit hit, Tensor& image, Tensor& depth) {
  image = Tensor({3, height, width});
  depth = Tensor({1, height, width});
  const Eigen::Matrix3d kinv = cam.intrinsics.inverse();
  const Eigen::Matrix3d rt = cam.rotation().transpose();
  const Eigen::Vector3d center = -rt * cam.translation();
  auto trace = [&](double u, double v, Eigen::Vector3d& color) {
    const Eigen::Vector3d dir_cam = kinv * Eigen::Vector3d(u, v, 1.0);
    const Eigen::Vector3d dir = rt * dir_cam;
    Eigen::Vector3d tint;
    const double s = hit(center, dir, tint);
    if (!std::isfinite(s)) {
      color.setConstant(0.5);
      return kInf;
    }
    const Eigen::Vector3d p = center + s * dir;
    color = solid_texture(p).cwiseProduct(tint);
    return s * dir_cam.z();
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero(), c;
      for (int sy = 0; sy < kSupersample; ++sy)
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double du = (sx + 0.5) / kSupersample - 0.5, dv = (sy + 0.5) / kSupersample - 0.5;
          trace(x + du, y + dv, c);
          acc += c;
        }
      acc /= kSupersample * kSupersample;
      for (int ch = 0; ch < 3; ++ch) image.at(ch, y, x) = std::round(acc[ch] * 255.0) / 255.0;
      depth.at(0, y, x) = trace(x, y, c);
    }
}

}  // namespace

Eigen::Vector3d solid_texture(const Eigen::Vector3d& p) {
  static const double kDirs[6][3] = {{1.0, 0.3, 0.2},  {-0.4, 1.0, 0.5}, {0.3, -0.6, 1.0},
                                     {0.8, 0.8, -0.3}, {-0.7, 0.2, 0.9}, {0.1, 1.0, -0.8}};
  static const double kFreq[6] = {4.1, 7.3, 11.7, 17.9, 23.3, 13.1};
  static const double kPhase[6] = {0.0, 1.3, 2.1, 0.7, 4.0, 2.9};
  static const double kMix[3][6] = {{0.40, 0.10, 0.25, 0.15, 0.05, 0.05},
                                    {0.10, 0.40, 0.05, 0.10, 0.30, 0.05},
                                    {0.20, 0.05, 0.35, 0.05, 0.10, 0.25}};
  double waves[6];
  for (int i = 0; i < 6; ++i) {
    const Eigen::Vector3d d = Eigen::Vector3d(kDirs[i][0], kDirs[i][1], kDirs[i][2]).normalized();
    waves[i] = std::sin(kFreq[i] * d.dot(p) + kPhase[i]);
  }
  Eigen::Vector3d c;
  for (int ch = 0; ch < 3; ++ch) {
    double s = 0.0;
    for (int i = 0; i < 6; ++i) s += kMix[ch][i] * waves[i];
    c[ch] = std::clamp(0.5 + 0.45 * s, 0.0, 1.0);
  }
  return c;
}

RenderedScene make_plane_scene(const PlaneOptions& opts) {
  RenderedScene out;
  out.scene.id = "plane";
  const double z = opts.depth;
  auto hit = [z](const Eigen::Vector3d& o, const Eigen::Vector3d& d, Eigen::Vector3d& tint) {
    tint.setOnes();
    if (std::abs(d.z()) < 1e-12) return kInf;
    const double s = (z - o.z()) / d.z();
    return s > 0 ? s : kInf;
  };
  for (int v = 0; v < opts.views; ++v) {
    const double tx = (v - (opts.views - 1) / 2.0) * opts.baseline;
    // World-to-camera translation of a camera centered at (tx, 0, 0).
    const Camera cam = make_camera(opts.width, opts.height, opts.focal, Eigen::Matrix3d::Identity(),
                                   Eigen::Vector3d(-tx, 0, 0), opts.depth_min, opts.depth_max,
                                   opts.num_depth);
    Tensor image, depth;
    render(cam, opts.width, opts.height, hit, image, depth);
    out.scene.images.push_back(std::move(image));
    out.scene.cameras.push_back(cam);
    out.scene.view_ids.push_back(v);
    out.depths.push_back(std::move(depth));
  }
  return out;
}

RenderedScene make_cube_scene(const CubeOptions& opts) {
  RenderedScene out;
  out.scene.id = "cube";
  const double a = opts.cube_half, wall = opts.wall_z;
  auto hit = [a, wall](const Eigen::Vector3d& o, const Eigen::Vector3d& d, Eigen::Vector3d& tint) {
    // Slab test against the axis-aligned cube.
    double t0 = 0.0, t1 = kInf;
    int axis = -1;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(d[i]) < 1e-12) {
        if (std::abs(o[i]) > a) t0 = kInf;
        continue;
      }
      double lo = (-a - o[i]) / d[i], hi = (a - o[i]) / d[i];
      if (lo > hi) std::swap(lo, hi);
      if (lo > t0) {
        t0 = lo;
        axis = i;
      }
      t1 = std::min(t1, hi);
    }
    double best = kInf;
    if (t0 <= t1 && std::isfinite(t0) && t0 > 0) {
      best = t0;
      static const Eigen::Vector3d kTints[3] = {{1.0, 0.85, 0.8}, {0.85, 1.0, 0.85}, {0.8, 0.85, 1.0}};
      tint = kTints[axis < 0 ? 0 : axis];
    }
    if (std::abs(d.z()) > 1e-12) {
      const double s = (wall - o.z()) / d.z();
      if (s > 0 && s < best) {
        best = s;
        tint = Eigen::Vector3d(0.9, 0.9, 0.9);
      }
    }
    return best;
  };
  for (int v = 0; v < opts.views; ++v) {
    const double frac = opts.views == 1 ? 0.0 : v / (opts.views - 1.0) - 0.5;
    const double theta = frac * opts.orbit_degrees * kPi / 180.0;
    const Eigen::Vector3d eye(opts.orbit_radius * std::sin(theta), -0.8,
                              -opts.orbit_radius * std::cos(theta));
    const Eigen::Matrix3d r = look_at(eye, Eigen::Vector3d::Zero());
    const Camera cam = make_camera(opts.width, opts.height, opts.focal, r, -r * eye,
                                   opts.depth_min, opts.depth_max, opts.num_depth);
    Tensor image, depth;
    render(cam, opts.width, opts.height, hit, image, depth);
    out.scene.images.push_back(std::move(image));
    out.scene.cameras.push_back(cam);
    out.scene.view_ids.push_back(v);
    out.depths.push_back(std::move(depth));
  }
  return out;
}

Tensor make_style_image(int height, int width, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Blob {
    double x, y, r;
    Eigen::Vector3d color;
  };
  std::vector<Blob> blobs(12);
  for (auto& b : blobs) b = {u(rng) * width, u(rng) * height, (0.05 + 0.15 * u(rng)) * width,
                             Eigen::Vector3d(u(rng), u(rng), u(rng))};
  Tensor out({3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double stripe = 0.5 + 0.5 * std::sin(0.35 * x + 0.2 * y);
      Eigen::Vector3d c(0.9 * stripe, 0.3 + 0.4 * stripe, 0.6 - 0.5 * stripe);
      for (const auto& b : blobs) {
        const double d2 = ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (b.r * b.r);
        const double w = std::exp(-d2);
        c = (1 - w) * c + w * b.color;
      }
      for (int ch = 0; ch < 3; ++ch)
        out.at(ch, y, x) = std::round(std::clamp(c[ch], 0.0, 1.0) * 255.0) / 255.0;
    }
  return out;
}

void quantize_images(Scene& scene) {
  for (auto& img : scene.images)
    for (double& v : img.span()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

}  // namespace muvie::synthetic
