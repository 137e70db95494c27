#include "muviecast/consistency.hpp"

#include <Eigen/Core>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>

#include "muviecast/error.hpp"
#include "muviecast/image.hpp"

namespace muvie {
namespace {

// Bilinear sample of channel c at (x, y); false when any tap is outside.
bool sample(const Tensor& img, int c, double x, double y, double& out) {
  const int h = img.dim(1), w = img.dim(2);
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0)) return false;
  const int x0 = std::min(static_cast<int>(x), w - 1), y0 = std::min(static_cast<int>(y), h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = x - x0, ay = y - y0;
  out = (1 - ax) * (1 - ay) * img.at(c, y0, x0) + ax * (1 - ay) * img.at(c, y0, x1) +
        (1 - ax) * ay * img.at(c, y1, x0) + ax * ay * img.at(c, y1, x1);
  return true;
}

PairScore score_pair(const std::vector<Tensor>& images, const std::vector<Camera>& cameras,
                     const std::vector<Tensor>& depths, int i, int j, double threshold) {
  const Tensor& img_i = images[i];
  const Tensor& img_j = images[j];
  const int h = img_i.dim(1), w = img_i.dim(2), channels = img_i.dim(0);
  // p_j ~ K_j (R_j R_i^T (d K_i^-1 p_i - t_i) + t_j)
  const Eigen::Matrix3d rel = cameras[j].rotation() * cameras[i].rotation().transpose();
  const Eigen::Matrix3d a = cameras[j].intrinsics * rel * cameras[i].intrinsics.inverse();
  const Eigen::Vector3d b = cameras[j].intrinsics * (cameras[j].translation() - rel * cameras[i].translation());

  PairScore score;
  score.i = i;
  score.j = j;
  double sq = 0.0;
  std::size_t valid = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = depths[i].at(0, y, x);
      if (!(d > 0.0)) continue;
      const Eigen::Vector3d q = a * Eigen::Vector3d(x, y, 1.0) * d + b;
      if (q.z() <= 1e-9) continue;
      const double u = q.x() / q.z(), v = q.y() / q.z();
      double dj = 0.0;
      if (!sample(depths[j], 0, u, v, dj) || !(dj > 0.0)) continue;
      if (std::abs(q.z() - dj) > threshold * dj) continue;
      double pixel_sq = 0.0, s = 0.0;
      bool inside = true;
      for (int c = 0; c < channels && inside; ++c) {
        inside = sample(img_j, c, u, v, s);
        pixel_sq += (s - img_i.at(c, y, x)) * (s - img_i.at(c, y, x));
      }
      if (!inside) continue;
      sq += pixel_sq;
      ++valid;
    }
  score.valid_fraction = static_cast<double>(valid) / (static_cast<double>(h) * w);
  score.flagged = valid == 0;
  score.rmse = valid ? std::sqrt(sq / (static_cast<double>(valid) * channels)) : 0.0;
  return score;
}

void check_set(const std::vector<Tensor>& images, const std::vector<Camera>& cameras,
               const std::vector<Tensor>& depths) {
  if (images.size() != cameras.size() || images.size() != depths.size())
    throw ValidationError("consistency: image, camera and depth counts differ");
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (images[k].rank() != 3 || images[k].shape() != images[0].shape())
      throw ValidationError("consistency: images must share one [C, H, W] shape");
    if (depths[k].shape() != Shape{1, images[k].dim(1), images[k].dim(2)})
      throw ValidationError("consistency: depth map " + std::to_string(k) + " has shape " +
                            shape_str(depths[k].shape()));
  }
}

}  // namespace

std::vector<ViewPair> neighbor_pairs(const Scene& scene, int window, const PairList* pairs) {
  std::vector<ViewPair> out;
  for (int i = 0; i < scene.size(); ++i)
    for (int j : select_neighbors(scene, i, window, pairs)) out.emplace_back(i, j);
  return out;
}

std::vector<Tensor> normalize_set(const std::vector<Tensor>& images) {
  if (images.empty()) return {};
  const int channels = images[0].dim(0);
  std::vector<double> mean(channels, 0.0), sq(channels, 0.0);
  std::size_t count = 0;
  for (const Tensor& img : images) {
    const std::size_t hw = img.numel() / channels;
    count += hw;
    for (int c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < hw; ++p) mean[c] += img[c * hw + p];
  }
  for (double& m : mean) m /= static_cast<double>(count);
  for (const Tensor& img : images) {
    const std::size_t hw = img.numel() / channels;
    for (int c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < hw; ++p) sq[c] += (img[c * hw + p] - mean[c]) * (img[c * hw + p] - mean[c]);
  }
  std::vector<Tensor> out;
  for (const Tensor& img : images) {
    Tensor n(img.shape());
    const std::size_t hw = img.numel() / channels;
    for (int c = 0; c < channels; ++c) {
      const double sd = std::sqrt(sq[c] / static_cast<double>(count));
      const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
      for (std::size_t p = 0; p < hw; ++p) n[c * hw + p] = (img[c * hw + p] - mean[c]) * inv;
    }
    out.push_back(std::move(n));
  }
  return out;
}

ConsistencyReport consistency_score(const std::vector<Tensor>& images, const std::vector<Camera>& cameras,
                                    const std::vector<Tensor>& depths, const std::vector<ViewPair>& pairs,
                                    const ConsistencyOptions& options) {
  check_set(images, cameras, depths);
  const std::vector<Tensor> prepared = options.normalize ? normalize_set(images) : images;
  ConsistencyReport report;
  std::vector<double> rmses;
  for (const auto& [i, j] : pairs) {
    const int n = static_cast<int>(images.size());
    if (i < 0 || j < 0 || i >= n || j >= n || i == j)
      throw ValidationError("consistency: invalid view pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    PairScore s = score_pair(prepared, cameras, depths, i, j, options.occlusion_threshold);
    if (!s.flagged) rmses.push_back(s.rmse);
    report.pairs.push_back(s);
  }
  report.valid_pairs = static_cast<int>(rmses.size());
  if (!rmses.empty()) {
    double total = 0.0;
    for (double r : rmses) total += r;
    report.mean_rmse = total / rmses.size();
    std::sort(rmses.begin(), rmses.end());
    const std::size_t m = rmses.size();
    report.median_rmse = m % 2 ? rmses[m / 2] : 0.5 * (rmses[m / 2 - 1] + rmses[m / 2]);
  }
  return report;
}

std::vector<Tensor> estimate_depths(const Scene& scene, const GeometryBackend& backend, int window,
                                    const PairList* pairs) {
  std::vector<Tensor> depths;
  ag::NoGradGuard guard;
  for (int i = 0; i < scene.size(); ++i) {
    const MultiViewSample sample = make_sample(scene, i, select_neighbors(scene, i, window, pairs));
    const DepthEstimate est = backend.estimate(sample);
    depths.push_back(resize_bilinear(est.stages.at(0).depth.value(), scene.height(), scene.width()));
  }
  return depths;
}

std::string depth_source_name(DepthSource source) {
  return source == DepthSource::kFromInput ? "from_input" : "from_stylized";
}

DepthSource parse_depth_source(const std::string& name) {
  if (name == "from_input") return DepthSource::kFromInput;
  if (name == "from_stylized") return DepthSource::kFromStylized;
  throw ConfigError("unknown depth source '" + name + "' (expected from_input or from_stylized)");
}

SetComparison compare_sets(const std::vector<Tensor>& input, const std::vector<Tensor>& stylized,
                           const std::vector<Camera>& cameras, const std::vector<Tensor>& depths,
                           const std::vector<ViewPair>& pairs, const ConsistencyOptions& options) {
  if (input.size() != stylized.size())
    throw ValidationError("compare_sets: " + std::to_string(input.size()) + " input vs " +
                          std::to_string(stylized.size()) + " stylized images");
  SetComparison out;
  out.input = consistency_score(input, cameras, depths, pairs, options);
  out.stylized = consistency_score(stylized, cameras, depths, pairs, options);
  if (out.input.valid_pairs == 0 || out.stylized.valid_pairs == 0)
    throw ValidationError("compare_sets: no view pair has valid pixels");
  if (out.input.mean_rmse > 0.0)
    out.ratio = out.stylized.mean_rmse / out.input.mean_rmse;
  else
    out.ratio = out.stylized.mean_rmse > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return out;
}

SetComparison compare_sets(const Scene& input, const std::vector<Tensor>& stylized,
                           const GeometryBackend& backend, DepthSource source, int window,
                           const ConsistencyOptions& options, const PairList* pairs) {
  if (static_cast<int>(stylized.size()) != input.size())
    throw ValidationError("compare_sets: " + std::to_string(input.size()) + " input vs " +
                          std::to_string(stylized.size()) + " stylized images");
  Scene depth_scene = input;
  if (source == DepthSource::kFromStylized) depth_scene.images = stylized;
  const std::vector<Tensor> depths = estimate_depths(depth_scene, backend, window, pairs);
  return compare_sets(input.images, stylized, input.cameras, depths, neighbor_pairs(input, window, pairs),
                      options);
}

}  // namespace muvie
