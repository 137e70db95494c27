#include "muviecast/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "muviecast/error.hpp"
#include "muviecast/kernels.hpp"

namespace muvie::losses {
namespace {

ag::Var zero() { return ag::Var::constant(Tensor({1})); }

ag::Var sigmoid_step(const ag::Var& x, double threshold, double slope) {
  return ag::sigmoid(ag::affine(x, slope, -slope * threshold));
}

void require_same_shape(const ag::Var& a, const ag::Var& b, const char* what) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

void require_rgb(const ag::Var& x) {
  if (x.value().rank() != 3 || x.dim(0) != 3)
    throw ValidationError("edge losses expect RGB [3, H, W] images, got " + shape_str(x.shape()));
}

const std::vector<double> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
const std::vector<double> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
const std::vector<double> kLaplace = {0, 1, 0, 1, -4, 1, 0, 1, 0};

std::vector<double> gaussian5() {
  std::vector<double> k(25);
  double total = 0.0;
  for (int y = -2; y <= 2; ++y)
    for (int x = -2; x <= 2; ++x) total += k[(y + 2) * 5 + x + 2] = std::exp(-0.5 * (x * x + y * y));
  for (double& v : k) v /= total;
  return k;
}

ag::Var gradient_magnitude(const ag::Var& gx, const ag::Var& gy) {
  return ag::sqrt_eps(ag::add(ag::square(gx), ag::square(gy)), kMagnitudeEps);
}

// Pixel-center coordinates shifted by `sign` * direction.
ag::Var shifted_grid(const ag::Var& dx, const ag::Var& dy, double sign) {
  const int h = dx.dim(1), w = dx.dim(2);
  Tensor xs({1, h, w}), ys({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      xs.at(0, y, x) = x;
      ys.at(0, y, x) = y;
    }
  const ag::Var parts[2] = {ag::add(ag::Var::constant(std::move(xs)), ag::affine(dx, sign, 0.0)),
                            ag::add(ag::Var::constant(std::move(ys)), ag::affine(dy, sign, 0.0))};
  return ag::concat_channels(parts);
}

const ag::Var& layer(const FeatureSet& set, const std::string& name, const char* side) {
  if (!set.contains(name))
    throw ValidationError(std::string("layer '") + name + "' missing from " + side + " features");
  return set.at(name);
}

template <typename Fn>
ag::Var sum_layers(const std::vector<std::string>& layers, Fn fn) {
  ag::Var total;
  for (const auto& name : layers) {
    ag::Var term = fn(name);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total.defined() ? total : zero();
}

template <typename Get>
ag::Var stage_loss(const DepthEstimate& reference, const DepthEstimate& target, Get get,
                   const char* what) {
  if (reference.stages.size() != target.stages.size())
    throw ValidationError(std::string(what) + ": stage count " + std::to_string(reference.stages.size()) +
                          " vs " + std::to_string(target.stages.size()));
  ag::Var total;
  for (std::size_t l = 0; l < reference.stages.size(); ++l) {
    const ag::Var& r = get(reference.stages[l]);
    const ag::Var& t = get(target.stages[l]);
    if (!r.defined() || !t.defined()) continue;
    require_same_shape(r, t, what);
    const ag::Var term =
        ag::affine(losses::smooth_l1(ag::Var::constant(r.value()), t), stage_weight(static_cast<int>(l)), 0.0);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total.defined() ? total : zero();
}

}  // namespace

std::string style_loss_name(StyleLossKind kind) {
  return kind == StyleLossKind::kGram ? "gram" : "in_stats";
}

StyleLossKind parse_style_loss_kind(const std::string& name) {
  if (name == "gram") return StyleLossKind::kGram;
  if (name == "in_stats") return StyleLossKind::kInStats;
  throw ConfigError("unknown style loss '" + name + "' (expected gram or in_stats)");
}

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"content", content}, {"style", style}, {"imgeom", imgeom}, {"volume", volume},
      {"depth", depth},     {"sobel", sobel}, {"laplace", laplace}, {"canny", canny},
      {"tv", tv},           {"nnfm", nnfm}};
  for (const auto& [name, w] : all)
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ConfigError(std::string("loss weight '") + name + "' must be finite and >= 0");
}

ag::Var smooth_l1(const ag::Var& a, const ag::Var& b) {
  require_same_shape(a, b, "smooth_l1");
  if (a.numel() == 0) throw ValidationError("smooth_l1: empty input");
  return ag::smooth_l1(a, b, 1.0);
}

ag::Var content_loss(const FeatureSet& target, const FeatureSet& reference,
                     const std::vector<std::string>& layers) {
  return sum_layers(layers, [&](const std::string& name) {
    const ag::Var& t = layer(target, name, "target");
    const ag::Var& r = layer(reference, name, "reference");
    require_same_shape(t, r, "content_loss");
    return ag::mse(t, r);
  });
}

ag::Var gram_style_loss(const FeatureSet& target, const FeatureSet& style,
                        const std::vector<std::string>& layers) {
  return sum_layers(layers, [&](const std::string& name) {
    const ag::Var& t = layer(target, name, "target");
    const ag::Var& s = layer(style, name, "style");
    if (t.dim(0) != s.dim(0)) throw ValidationError("gram_style_loss: channel mismatch at " + name);
    return ag::mse(ag::gram(t), ag::gram(s));
  });
}

ag::Var in_stats_style_loss(const FeatureSet& target, const FeatureSet& style,
                            const std::vector<std::string>& layers) {
  return sum_layers(layers, [&](const std::string& name) {
    const ag::Var& t = layer(target, name, "target");
    const ag::Var& s = layer(style, name, "style");
    if (t.dim(0) != s.dim(0)) throw ValidationError("in_stats_style_loss: channel mismatch at " + name);
    const ag::Var dmu = ag::sub(ag::channel_mean(t), ag::channel_mean(s));
    const ag::Var dsigma = ag::sub(ag::channel_std(t, 1e-8), ag::channel_std(s, 1e-8));
    return ag::add(ag::sum(ag::square(dmu)), ag::sum(ag::square(dsigma)));
  });
}

ag::Var style_loss(StyleLossKind kind, const FeatureSet& target, const FeatureSet& style,
                   const std::vector<std::string>& layers) {
  return kind == StyleLossKind::kGram ? gram_style_loss(target, style, layers)
                                      : in_stats_style_loss(target, style, layers);
}

ag::Var sobel_map(const ag::Var& rgb) {
  require_rgb(rgb);
  const ag::Var gray = ag::to_gray(rgb);
  return gradient_magnitude(ag::filter2d(gray, kSobelX, 3), ag::filter2d(gray, kSobelY, 3));
}

ag::Var laplace_map(const ag::Var& rgb) {
  require_rgb(rgb);
  return ag::filter2d(ag::to_gray(rgb), kLaplace, 3);
}

ag::Var canny_map(const ag::Var& rgb) {
  require_rgb(rgb);
  static const std::vector<double> kGauss = gaussian5();
  const ag::Var blurred = ag::filter2d(ag::to_gray(rgb), kGauss, 5);
  const ag::Var gx = ag::filter2d(blurred, kSobelX, 3);
  const ag::Var gy = ag::filter2d(blurred, kSobelY, 3);
  const ag::Var mag = gradient_magnitude(gx, gy);
  const ag::Var norm = ag::div_scalar(mag, ag::affine(ag::max_all(mag), 1.0, kMagnitudeEps));
  const ag::Var dx = ag::div(gx, mag), dy = ag::div(gy, mag);

  // Soft non-maximum suppression along the gradient direction.
  ag::Var thin = norm;
  for (double sign : {1.0, -1.0}) {
    const ag::Var neighbor =
        ag::grid_sample(norm, shifted_grid(dx, dy, sign), ag::SamplePadding::kBorder);
    thin = ag::mul(thin, sigmoid_step(ag::sub(norm, neighbor), 0.0, 50.0));
  }
  // Soft double threshold.
  return ag::affine(ag::add(sigmoid_step(thin, 0.2, 50.0), sigmoid_step(thin, 0.1, 50.0)), 0.5, 0.0);
}

ag::Var sobel_loss(const ag::Var& input, const ag::Var& target) {
  require_same_shape(input, target, "sobel_loss");
  return losses::smooth_l1(sobel_map(input), sobel_map(target));
}

ag::Var laplace_loss(const ag::Var& input, const ag::Var& target) {
  require_same_shape(input, target, "laplace_loss");
  return losses::smooth_l1(laplace_map(input), laplace_map(target));
}

ag::Var canny_loss(const ag::Var& input, const ag::Var& target) {
  require_same_shape(input, target, "canny_loss");
  return losses::smooth_l1(canny_map(input), canny_map(target));
}

ag::Var image_geometry_loss(const ag::Var& input, const ag::Var& target, double sobel,
                            double laplace, double canny) {
  LossWeights w;
  w.sobel = sobel;
  w.laplace = laplace;
  w.canny = canny;
  w.validate();
  require_same_shape(input, target, "image_geometry_loss");
  ag::Var total;
  auto accumulate = [&](double weight, auto fn) {
    if (weight == 0.0) return;
    const ag::Var term = ag::affine(fn(input, target), weight, 0.0);
    total = total.defined() ? ag::add(total, term) : term;
  };
  accumulate(sobel, sobel_loss);
  accumulate(laplace, laplace_loss);
  accumulate(canny, canny_loss);
  return total.defined() ? total : zero();
}

double stage_weight(int stage) { return std::ldexp(1.0, 3 - stage); }

ag::Var volume_loss(const DepthEstimate& reference, const DepthEstimate& target) {
  return stage_loss(reference, target, [](const DepthStage& s) -> const ag::Var& { return s.volume; },
                    "volume_loss");
}

ag::Var depth_loss(const DepthEstimate& reference, const DepthEstimate& target) {
  return stage_loss(reference, target, [](const DepthStage& s) -> const ag::Var& { return s.depth; },
                    "depth_loss");
}

ag::Var tv_loss(const ag::Var& image) {
  const Tensor& v = image.value();
  if (v.rank() != 3) throw ValidationError("tv_loss expects [C, H, W]");
  const int c = v.dim(0), h = v.dim(1), w = v.dim(2);
  const std::size_t count =
      static_cast<std::size_t>(c) * (static_cast<std::size_t>(h) * (w - 1) + static_cast<std::size_t>(h - 1) * w);
  if (count == 0) return zero();
  double total = 0.0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double p = v.at(ch, y, x);
        if (x + 1 < w) total += (v.at(ch, y, x + 1) - p) * (v.at(ch, y, x + 1) - p);
        if (y + 1 < h) total += (v.at(ch, y + 1, x) - p) * (v.at(ch, y + 1, x) - p);
      }
  Tensor out({1}, total / count);
  return ag::make_result(std::move(out), {image}, [count](ag::Node& n) {
    const Tensor& v = n.inputs[0]->value;
    Tensor& g = n.inputs[0]->grad_buffer();
    const int c = v.dim(0), h = v.dim(1), w = v.dim(2);
    const double k = 2.0 * n.grad[0] / count;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double p = v.at(ch, y, x);
          if (x + 1 < w) {
            const double d = k * (v.at(ch, y, x + 1) - p);
            g.at(ch, y, x + 1) += d;
            g.at(ch, y, x) -= d;
          }
          if (y + 1 < h) {
            const double d = k * (v.at(ch, y + 1, x) - p);
            g.at(ch, y + 1, x) += d;
            g.at(ch, y, x) -= d;
          }
        }
  });
}

ag::Var nnfm_loss(const ag::Var& target, const ag::Var& style) {
  const Tensor& tv = target.value();
  const Tensor& sv = style.value();
  if (tv.rank() != 3 || sv.rank() != 3) throw ValidationError("nnfm_loss expects [C, H, W] maps");
  if (tv.dim(0) != sv.dim(0)) throw ValidationError("nnfm_loss: channel mismatch");
  const int c = tv.dim(0);
  const std::size_t nt = tv.numel() / std::max(c, 1), ns = sv.numel() / std::max(c, 1);
  if (c == 0 || ns == 0) throw ValidationError("nnfm_loss: empty style map");
  if (nt == 0) return zero();

  auto norms = [c](const Tensor& x, std::size_t n) {
    std::vector<double> out(n, 0.0);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < n; ++p) out[p] += x[ch * n + p] * x[ch * n + p];
    for (double& v : out) v = std::max(std::sqrt(v), 1e-12);
    return out;
  };
  const std::vector<double> tn = norms(tv, nt), sn = norms(sv, ns);
  // dots[p, q] = t_p . s_q
  std::vector<double> dots(nt * ns);
  kernels::gemm(kernels::Trans::kYes, kernels::Trans::kNo, static_cast<int>(nt), static_cast<int>(ns), c,
                1.0, tv.data(), static_cast<int>(nt), sv.data(), static_cast<int>(ns), 0.0, dots.data(),
                static_cast<int>(ns));
  std::vector<std::size_t> match(nt);
  double total = 0.0;
  for (std::size_t p = 0; p < nt; ++p) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < ns; ++q) {
      const double cosine = dots[p * ns + q] / (tn[p] * sn[q]);
      if (cosine > best) {
        best = cosine;
        match[p] = q;
      }
    }
    total += 1.0 - best;
  }
  Tensor out({1}, total / nt);
  return ag::make_result(std::move(out), {target, style}, [=](ag::Node& n) {
    const Tensor& tv = n.inputs[0]->value;
    const Tensor& sv = n.inputs[1]->value;
    const double k = -n.grad[0] / nt;
    for (std::size_t p = 0; p < nt; ++p) {
      const std::size_t q = match[p];
      const double cosine = dots[p * ns + q] / (tn[p] * sn[q]);
      for (int ch = 0; ch < c; ++ch) {
        const double t = tv[ch * nt + p], s = sv[ch * ns + q];
        // d cos / dt = (s_hat - cos * t_hat) / |t|, symmetric for s.
        if (n.inputs[0]->requires_grad)
          n.inputs[0]->grad_buffer()[ch * nt + p] += k * (s / sn[q] - cosine * t / tn[p]) / tn[p];
        if (n.inputs[1]->requires_grad)
          n.inputs[1]->grad_buffer()[ch * ns + q] += k * (t / tn[p] - cosine * s / sn[q]) / sn[q];
      }
    }
  });
}

ag::Var total_loss(const LossComponents& components, const LossWeights& weights) {
  weights.validate();
  const std::tuple<const char*, const ag::Var*, double> terms[] = {
      {"content", &components.content, weights.content}, {"style", &components.style, weights.style},
      {"imgeom", &components.imgeom, weights.imgeom},    {"volume", &components.volume, weights.volume},
      {"depth", &components.depth, weights.depth},       {"tv", &components.tv, weights.tv},
      {"nnfm", &components.nnfm, weights.nnfm}};
  ag::Var total;
  for (const auto& [name, value, weight] : terms) {
    if (weight == 0.0) continue;
    if (!value->defined()) throw ValidationError(std::string("loss component '") + name + "' was not computed");
    if (!std::isfinite(value->item()))
      throw NumericError(std::string("loss component '") + name + "' is not finite");
    const ag::Var term = ag::affine(*value, weight, 0.0);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total.defined() ? total : zero();
}

}  // namespace muvie::losses
