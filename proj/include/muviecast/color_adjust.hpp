#pragma once

// Affine RGB color-moment matching.

#include <Eigen/Core>
#include <string>
#include <vector>

#include "muviecast/tensor.hpp"

namespace muvie {

struct ColorMap {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

enum class ColorAdjustMode { kOff, kPre, kPost };

std::string color_adjust_name(ColorAdjustMode mode);  // "off" / "pre" / "post"
ColorAdjustMode parse_color_adjust_mode(const std::string& name);

// Pixels as rows of an N x 3 matrix.
using PixelMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

PixelMatrix image_pixels(const Tensor& rgb);

// Maps content color moments onto style moments:
//   M = U_s L_s^(1/2) V_s^T U_c L_c^(-1/2) V_c^T,  t = mu_s - M mu_c
// with SVDs of the covariances regularized by epsilon * I.
ColorMap fit_color_map(const PixelMatrix& content, const PixelMatrix& style, double epsilon = 1e-8);
ColorMap fit_color_map(const Tensor& content_rgb, const Tensor& style_rgb, double epsilon = 1e-8);

// One map fitted on the pooled pixels of every image in the set.
ColorMap fit_set_color_map(const std::vector<Tensor>& images, const Tensor& style_rgb, double epsilon = 1e-8);

Tensor apply_color_map(const Tensor& rgb, const ColorMap& map, bool clamp = true);
PixelMatrix apply_color_map(const PixelMatrix& pixels, const ColorMap& map);

}  // namespace muvie
