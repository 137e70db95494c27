#pragma once

// Naive scalar re-implementations of the loss operators, written
// independently of the autograd ops for cross-checking.

#include <algorithm>
#include <cmath>
#include <vector>

#include "muviecast/tensor.hpp"

namespace muvie::testing::oracle {

using Image = std::vector<std::vector<double>>;  // [y][x]

inline double huber(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

inline Image gray(const Tensor& rgb) {
  const int h = rgb.dim(1), w = rgb.dim(2);
  Image g(h, std::vector<double>(w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      g[y][x] = 0.299 * rgb.at(0, y, x) + 0.587 * rgb.at(1, y, x) + 0.114 * rgb.at(2, y, x);
  return g;
}

inline int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// Cross-correlation with a k x k kernel, reflect padding.
inline Image correlate(const Image& img, const std::vector<double>& kernel, int k) {
  const int h = static_cast<int>(img.size()), w = static_cast<int>(img[0].size()), r = k / 2;
  Image out(h, std::vector<double>(w, 0.0));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          out[y][x] += kernel[ky * k + kx] * img[reflect(y + ky - r, h)][reflect(x + kx - r, w)];
  return out;
}

inline const std::vector<double> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline const std::vector<double> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
inline const std::vector<double> kLaplace = {0, 1, 0, 1, -4, 1, 0, 1, 0};

inline Image magnitude(const Image& gx, const Image& gy) {
  Image m = gx;
  for (std::size_t y = 0; y < m.size(); ++y)
    for (std::size_t x = 0; x < m[0].size(); ++x)
      m[y][x] = std::sqrt(gx[y][x] * gx[y][x] + gy[y][x] * gy[y][x] + 1e-12);
  return m;
}

inline Image sobel(const Tensor& rgb) {
  const Image g = gray(rgb);
  return magnitude(correlate(g, kSobelX, 3), correlate(g, kSobelY, 3));
}

inline Image laplace(const Tensor& rgb) { return correlate(gray(rgb), kLaplace, 3); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double sample_border(const Image& img, double x, double y) {
  const int h = static_cast<int>(img.size()), w = static_cast<int>(img[0].size());
  x = std::clamp(x, 0.0, w - 1.0);
  y = std::clamp(y, 0.0, h - 1.0);
  const int x0 = std::min(static_cast<int>(std::floor(x)), w - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = x - x0, ay = y - y0;
  return (1 - ax) * (1 - ay) * img[y0][x0] + ax * (1 - ay) * img[y0][x1] +
         (1 - ax) * ay * img[y1][x0] + ax * ay * img[y1][x1];
}

inline Image canny(const Tensor& rgb) {
  std::vector<double> gauss(25);
  double total = 0.0;
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x)
      total += gauss[y * 5 + x] = std::exp(-0.5 * ((x - 2) * (x - 2) + (y - 2) * (y - 2)));
  for (double& g : gauss) g /= total;
  const Image blurred = correlate(gray(rgb), gauss, 5);
  const Image gx = correlate(blurred, kSobelX, 3), gy = correlate(blurred, kSobelY, 3);
  const Image mag = magnitude(gx, gy);
  double peak = 0.0;
  for (const auto& row : mag)
    for (double v : row) peak = std::max(peak, v);
  Image norm = mag;
  for (auto& row : norm)
    for (double& v : row) v /= peak + 1e-12;
  Image out = norm;
  for (std::size_t y = 0; y < out.size(); ++y)
    for (std::size_t x = 0; x < out[0].size(); ++x) {
      const double dx = gx[y][x] / mag[y][x], dy = gy[y][x] / mag[y][x];
      const double n = norm[y][x];
      const double fwd = sample_border(norm, x + dx, y + dy);
      const double bwd = sample_border(norm, x - dx, y - dy);
      const double thin = n * sigmoid(50 * (n - fwd)) * sigmoid(50 * (n - bwd));
      out[y][x] = 0.5 * (sigmoid(50 * (thin - 0.2)) + sigmoid(50 * (thin - 0.1)));
    }
  return out;
}

inline double mean_huber(const Image& a, const Image& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < a.size(); ++y)
    for (std::size_t x = 0; x < a[0].size(); ++x, ++n) s += huber(a[y][x] - b[y][x]);
  return s / n;
}

}  // namespace muvie::testing::oracle
