#pragma once

// Calibrated multi-view scenes in the MVSNet directory layout:
//   images/NNNNNNNN.{png,jpg}, cams/NNNNNNNN_cam.txt, optional pair.txt.

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "muviecast/tensor.hpp"

namespace muvie {

struct Camera {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();  // world -> camera
  double depth_min = 1.0;
  double depth_interval = 1.0;
  int num_depth = 192;

  Eigen::Matrix3d rotation() const { return extrinsics.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return extrinsics.topRightCorner<3, 1>(); }
  double depth_max() const { return depth_min + (num_depth - 1) * depth_interval; }

  // (u, v, z) of a world point; u, v in pixels with integer = pixel center.
  Eigen::Vector3d project(const Eigen::Vector3d& world) const;
  // World point at pixel (u, v) and camera-space depth z.
  Eigen::Vector3d unproject(double u, double v, double depth) const;
};

// Throws ValidationError if a documented camera invariant is violated.
void validate_camera(const Camera& cam, const std::string& what = "camera");

Camera read_camera(const std::filesystem::path& path);
void write_camera(const std::filesystem::path& path, const Camera& cam);

struct Scene {
  std::string id;
  std::vector<Tensor> images;  // [3, H, W] in [0, 1]
  std::vector<Camera> cameras;
  std::vector<int> view_ids;   // file indices, parallel to images

  int size() const { return static_cast<int>(images.size()); }
  int height() const { return images.at(0).dim(1); }
  int width() const { return images.at(0).dim(2); }
};

void validate_scene(const Scene& scene);

Scene load_scene(const std::filesystem::path& root);
void write_scene(const std::filesystem::path& root, const Scene& scene);

// view id -> ranked neighbor view ids.
using PairList = std::map<int, std::vector<int>>;

PairList read_pair_file(const std::filesystem::path& path);
void write_pair_file(const std::filesystem::path& path, const PairList& pairs);

// window-1 source indices for `ref_index`. Without pairs: nearest indices,
// ties toward the smaller index. With pairs: first ranked entries.
std::vector<int> select_neighbors(const Scene& scene, int ref_index, int window,
                                  const PairList* pairs = nullptr);

struct MultiViewSample {
  int ref_index = 0;
  std::vector<int> source_indices;
  Tensor ref_image;
  std::vector<Tensor> source_images;
  Camera ref_camera;
  std::vector<Camera> source_cameras;
  std::vector<double> depth_hypotheses;

  int height() const { return ref_image.dim(1); }
  int width() const { return ref_image.dim(2); }
};

std::vector<double> depth_hypotheses(const Camera& cam);

MultiViewSample make_sample(const Scene& scene, int ref_index,
                            const std::vector<int>& source_indices);

// Resamples images by `factor` in (0, 1] and scales the intrinsics' first
// two rows. `stride` is the divisibility the output dims must satisfy.
MultiViewSample scale_sample(const MultiViewSample& sample, double factor, int stride = 1);

// Image resampled so that pixel x_new reads x_old = x_new / factor.
Tensor resample_image(const Tensor& image, int height, int width, double factor);

}  // namespace muvie
