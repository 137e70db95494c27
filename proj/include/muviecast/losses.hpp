#pragma once

// Loss terms. Every function returns a single-element Var.

#include <string>
#include <vector>

#include "muviecast/geometry.hpp"
#include "muviecast/perceptual.hpp"

namespace muvie::losses {

enum class StyleLossKind { kGram, kInStats };

std::string style_loss_name(StyleLossKind kind);  // "gram" / "in_stats"
StyleLossKind parse_style_loss_kind(const std::string& name);

struct LossWeights {
  double content = 10.0;
  double style = 1e4;
  double imgeom = 1.0;
  double volume = 1.0;
  double depth = 0.1;
  // Inner weights of the image geometry loss.
  double sobel = 1.0;
  double laplace = 1.0;
  double canny = 1.0;
  StyleLossKind style_kind = StyleLossKind::kGram;
  double tv = 0.0;
  double nnfm = 0.0;

  // Throws ConfigError naming the first negative or non-finite weight.
  void validate() const;
};

// Mean of the elementwise smooth L1 with beta = 1.
ag::Var smooth_l1(const ag::Var& a, const ag::Var& b);

// Sum over `layers` of the mean squared feature difference.
ag::Var content_loss(const FeatureSet& target, const FeatureSet& reference,
                     const std::vector<std::string>& layers);

// Sum over `layers` of the mean squared Gram difference, G = F F^T / (C H W).
ag::Var gram_style_loss(const FeatureSet& target, const FeatureSet& style,
                        const std::vector<std::string>& layers);

// Sum over layers of |mu_t - mu_s|^2 + |sigma_t - sigma_s|^2, channel moments
// over space, sigma = sqrt(population var + 1e-8).
ag::Var in_stats_style_loss(const FeatureSet& target, const FeatureSet& style,
                            const std::vector<std::string>& layers);

ag::Var style_loss(StyleLossKind kind, const FeatureSet& target, const FeatureSet& style,
                   const std::vector<std::string>& layers);

// Edge responses of an RGB [3, H, W] image on its luminance, reflect padded;
// each returns [1, H, W].
constexpr double kMagnitudeEps = 1e-12;  // inside sqrt of gradient magnitudes
ag::Var sobel_map(const ag::Var& rgb);
ag::Var laplace_map(const ag::Var& rgb);
ag::Var canny_map(const ag::Var& rgb);

ag::Var sobel_loss(const ag::Var& input, const ag::Var& target);
ag::Var laplace_loss(const ag::Var& input, const ag::Var& target);
ag::Var canny_loss(const ag::Var& input, const ag::Var& target);

// sobel * L_sobel + laplace * L_laplace + canny * L_canny; terms with zero
// weight are not evaluated.
ag::Var image_geometry_loss(const ag::Var& input, const ag::Var& target, double sobel,
                            double laplace, double canny);

// 2^(3 - l) for stage l, l = 0 finest.
double stage_weight(int stage);

// Sum over stages of stage_weight(l) * mean smooth L1 between the reference
// and target branches. Reference tensors are used as constants. Stages where
// either side has no volume are skipped by volume_loss.
ag::Var volume_loss(const DepthEstimate& reference, const DepthEstimate& target);
ag::Var depth_loss(const DepthEstimate& reference, const DepthEstimate& target);

// Mean of squared forward differences along x and y, pooled.
ag::Var tv_loss(const ag::Var& image);

// Mean over target pixels of 1 - max cosine similarity to any style pixel.
ag::Var nnfm_loss(const ag::Var& target, const ag::Var& style);

struct LossComponents {
  ag::Var content, style, imgeom, volume, depth, tv, nnfm;
};

// Weighted sum over components with nonzero weight. Throws NumericError
// naming a non-finite component and ValidationError for a missing one.
ag::Var total_loss(const LossComponents& components, const LossWeights& weights);

}  // namespace muvie::losses
