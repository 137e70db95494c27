#include "muviecast/color_adjust.hpp"

#include <Eigen/SVD>
#include <algorithm>

#include "muviecast/error.hpp"

namespace muvie {
namespace {

struct Moments {
  Eigen::Vector3d mean;
  Eigen::Matrix3d cov;
};

Moments moments(const PixelMatrix& px) {
  Moments m;
  m.mean = px.colwise().mean().transpose();
  const PixelMatrix centered = px.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / static_cast<double>(px.rows());
  return m;
}

// U L^(power) V^T of a regularized covariance.
Eigen::Matrix3d svd_power(const Eigen::Matrix3d& cov, double epsilon, double power) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov + epsilon * Eigen::Matrix3d::Identity(),
                                              Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d scaled = svd.singularValues().array().pow(power);
  return svd.matrixU() * scaled.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace

std::string color_adjust_name(ColorAdjustMode mode) {
  switch (mode) {
    case ColorAdjustMode::kPre: return "pre";
    case ColorAdjustMode::kPost: return "post";
    default: return "off";
  }
}

ColorAdjustMode parse_color_adjust_mode(const std::string& name) {
  if (name == "off") return ColorAdjustMode::kOff;
  if (name == "pre") return ColorAdjustMode::kPre;
  if (name == "post") return ColorAdjustMode::kPost;
  throw ConfigError("unknown color adjust mode '" + name + "' (expected pre, post or off)");
}

PixelMatrix image_pixels(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ValidationError("expected an RGB [3, H, W] image");
  const std::size_t hw = rgb.numel() / 3;
  PixelMatrix px(hw, 3);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) px(i, c) = rgb[c * hw + i];
  return px;
}

ColorMap fit_color_map(const PixelMatrix& content, const PixelMatrix& style, double epsilon) {
  if (content.rows() < 4 || style.rows() < 4)
    throw ValidationError("color map fitting needs at least 4 pixels on each side");
  if (!(epsilon > 0.0)) throw ConfigError("color adjust epsilon must be positive");
  const Moments c = moments(content), s = moments(style);
  if (c.cov.trace() < 1e-12 && epsilon < 1e-6)
    throw ValidationError(
        "content colors are constant, so the color map is ill-conditioned; raise the "
        "regularization epsilon to at least 1e-6 to force a fit");
  ColorMap map;
  map.m = svd_power(s.cov, epsilon, 0.5) * svd_power(c.cov, epsilon, -0.5);
  map.t = s.mean - map.m * c.mean;
  if (!map.m.allFinite() || !map.t.allFinite()) throw NumericError("color map is not finite");
  return map;
}

ColorMap fit_color_map(const Tensor& content_rgb, const Tensor& style_rgb, double epsilon) {
  return fit_color_map(image_pixels(content_rgb), image_pixels(style_rgb), epsilon);
}

PixelMatrix apply_color_map(const PixelMatrix& pixels, const ColorMap& map) {
  return (pixels * map.m.transpose()).rowwise() + map.t.transpose();
}

Tensor apply_color_map(const Tensor& rgb, const ColorMap& map, bool clamp) {
  const PixelMatrix mapped = apply_color_map(image_pixels(rgb), map);
  Tensor out(rgb.shape());
  const std::size_t hw = rgb.numel() / 3;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      out[c * hw + i] = clamp ? std::clamp(mapped(i, c), 0.0, 1.0) : mapped(i, c);
  return out;
}

ColorMap fit_set_color_map(const std::vector<Tensor>& images, const Tensor& style_rgb, double epsilon) {
  if (images.empty()) throw ValidationError("fit_set_color_map: empty image set");
  Eigen::Index rows = 0;
  for (const Tensor& img : images) rows += static_cast<Eigen::Index>(img.dim(1)) * img.dim(2);
  PixelMatrix pooled(rows, 3);
  Eigen::Index r = 0;
  for (const Tensor& img : images) {
    const PixelMatrix p = image_pixels(img);
    pooled.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return fit_color_map(pooled, image_pixels(style_rgb), epsilon);
}

}  // namespace muvie
