#pragma once

// Differentiable tensor ops. Image-like tensors are [C, H, W].

#include <span>
#include <vector>

#include "muviecast/autograd.hpp"

namespace muvie::ag {

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var affine(const Var& a, double scale, double shift);  // scale * a + shift
Var mul_const(const Var& a, const Tensor& mask);
Var square(const Var& a);
Var sqrt_eps(const Var& a, double eps);  // sqrt(a + eps)
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var reshape(const Var& a, Shape shape);

// Broadcast a single-element Var against a tensor.
Var mul_scalar(const Var& a, const Var& s);
Var div_scalar(const Var& a, const Var& s);

// Reductions to a single element.
Var sum(const Var& a);
Var mean(const Var& a);
Var max_all(const Var& a);  // gradient flows to the first maximal element
Var mse(const Var& a, const Var& b);
Var smooth_l1(const Var& a, const Var& b, double beta = 1.0);  // mean
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

enum class PadMode { kZero, kReflect };

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  PadMode pad_mode = PadMode::kZero;
};

// x [Ci, H, W], weight [Co, Ci, k, k], bias [Co] (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias,
           const Conv2dOptions& opts);

Var max_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var concat_channels(std::span<const Var> parts);

// Affine instance normalization over spatial dims; gamma/beta are [C].
Var instance_norm(const Var& x, const Var& gamma, const Var& beta,
                  double eps = 1e-5);

// Per-channel spatial statistics, [C] outputs.
Var channel_mean(const Var& x);
Var channel_std(const Var& x, double eps);  // sqrt(population var + eps)

// sigma_s * (x - mu_c) / max(sigma_c, floor) + mu_s per channel.
Var adain(const Var& content, const Var& style, double sigma_floor);

// G = F F^T / (C H W) for F the [C, H*W] flattening.
Var gram(const Var& x);

// 3-channel RGB to single-channel luminance.
Var to_gray(const Var& rgb);

// Single-channel filtering with a fixed k x k kernel and reflection padding.
Var filter2d(const Var& x, const std::vector<double>& kernel, int k);

enum class SamplePadding { kZeros, kBorder };

// Bilinear sampling of img [C, H, W] at grid [2, Ho, Wo] holding (x, y)
// pixel coordinates (integer = pixel center). Differentiable w.r.t. both.
Var grid_sample(const Var& img, const Var& grid, SamplePadding padding);

// Softmax over axis 0 of a [D, H, W] tensor.
Var softmax_channels(const Var& x);

// sum_d w_d * x[d] for x [D, H, W]; returns [1, H, W].
Var channel_weighted_sum(const Var& x, std::span<const double> weights);

// max_d x[d] for x [D, H, W]; returns [1, H, W]. Gradient goes to the first
// maximal channel.
Var channel_max(const Var& x);

// Mean over the (2r+1)^2 neighborhood restricted to in-bounds pixels,
// applied per channel.
Var box_filter(const Var& x, int radius);

// L2-normalizes each pixel's channel vector within each of `groups` groups.
Var group_normalize(const Var& x, int groups, double eps);

}  // namespace muvie::ag
