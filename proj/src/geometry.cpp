#include "muviecast/geometry.hpp"

#include <dlfcn.h>

#include <Eigen/LU>
#include <cmath>
#include <limits>

#include "muviecast/error.hpp"
#include "muviecast/kernels.hpp"

namespace muvie {

void validate_estimate(const DepthEstimate& est, double tol) {
  if (est.stages.empty()) throw ValidationError("depth estimate has no stages");
  for (std::size_t l = 0; l < est.stages.size(); ++l) {
    const DepthStage& s = est.stages[l];
    const std::string where = "stage " + std::to_string(l);
    if (!s.depth.defined() || s.depth.value().rank() != 3 || s.depth.dim(0) != 1)
      throw ValidationError(where + ": depth must be [1, H, W]");
    if (l > 0) {
      const auto& prev = est.stages[l - 1].depth;
      if (s.depth.dim(1) * 2 != prev.dim(1) || s.depth.dim(2) * 2 != prev.dim(2))
        throw ValidationError(where + ": resolution must halve per stage");
    }
    if (!s.volume.defined()) continue;
    const Tensor& v = s.volume.value();
    if (v.rank() != 3 || v.dim(1) != s.depth.dim(1) || v.dim(2) != s.depth.dim(2))
      throw ValidationError(where + ": volume shape " + shape_str(v.shape()) + " mismatches depth");
    const std::size_t hw = static_cast<std::size_t>(v.dim(1)) * v.dim(2);
    for (std::size_t p = 0; p < hw; ++p) {
      double sum = 0.0;
      for (int d = 0; d < v.dim(0); ++d) {
        const double x = v[d * hw + p];
        if (x < 0.0) throw ValidationError(where + ": negative probability");
        sum += x;
      }
      if (std::abs(sum - 1.0) > tol) throw ValidationError(where + ": volume not normalized");
    }
  }
}

DepthEstimate GeometryBackend::estimate(const MultiViewSample& sample) const {
  std::vector<ag::Var> sources;
  for (const auto& img : sample.source_images) sources.push_back(ag::Var::constant(img));
  return estimate(sample, ag::Var::constant(sample.ref_image), sources);
}

Camera scale_camera(const Camera& cam, double factor) {
  Camera out = cam;
  out.intrinsics.topRows<2>() *= factor;
  return out;
}

void warp_grid(const Camera& src_cam, const Camera& ref_cam, const Tensor& depth, int height,
               int width, int src_height, int src_width, Tensor& grid, Tensor& mask) {
  const Eigen::Matrix3d& kr = ref_cam.intrinsics;
  if (std::abs(kr.determinant()) < 1e-12 || std::abs(src_cam.intrinsics.determinant()) < 1e-12)
    throw ValidationError("homography warp: singular intrinsics");
  const Eigen::Matrix3d rel = src_cam.rotation() * ref_cam.rotation().transpose();
  const Eigen::Matrix3d a = src_cam.intrinsics * rel * kr.inverse();
  const Eigen::Vector3d b = src_cam.intrinsics * (src_cam.translation() - rel * ref_cam.translation());
  const bool per_pixel = depth.numel() != 1;
  if (per_pixel && depth.numel() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("warp_grid: depth map size mismatch");

  const std::size_t hw = static_cast<std::size_t>(height) * width;
  grid = Tensor({2, height, width});
  mask = Tensor({1, height, width});
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      const double d = per_pixel ? depth[p] : depth[0];
      if (!(d > 0.0)) throw ValidationError("homography warp: depth must be positive");
      const Eigen::Vector3d q = a * Eigen::Vector3d(x, y, 1.0) * d + b;
      if (q.z() <= 1e-9) {
        grid[p] = grid[hw + p] = kNan;
        continue;
      }
      const double u = q.x() / q.z(), v = q.y() / q.z();
      grid[p] = u;
      grid[hw + p] = v;
      mask[p] = (u >= 0.0 && u <= src_width - 1.0 && v >= 0.0 && v <= src_height - 1.0) ? 1.0 : 0.0;
    }
}

WarpResult homography_warp(const ag::Var& source, const Camera& src_cam, const Camera& ref_cam,
                           const Tensor& depth) {
  const int h = source.dim(1), w = source.dim(2);
  const int rh = depth.numel() == 1 ? h : depth.dim(-2);
  const int rw = depth.numel() == 1 ? w : depth.dim(-1);
  Tensor grid, mask;
  warp_grid(src_cam, ref_cam, depth, rh, rw, h, w, grid, mask);
  return {ag::grid_sample(source, ag::Var::constant(std::move(grid)), ag::SamplePadding::kZeros),
          std::move(mask)};
}

namespace {

// Bilinear taps of one sample location, zero padding.
struct Taps {
  int idx[4];
  double w[4];
};

Taps make_taps(double x, double y, int h, int w) {
  Taps t{};
  if (!std::isfinite(x) || !std::isfinite(y)) return t;  // all weights zero
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1}, ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  for (int q = 0; q < 4; ++q) {
    const bool in = xs[q] >= 0 && xs[q] < w && ys[q] >= 0 && ys[q] < h;
    t.idx[q] = in ? ys[q] * w + xs[q] : 0;
    t.w[q] = in ? ws[q] : 0.0;
  }
  return t;
}

// corr[d, p] = scale * sum_c ref[c, p] * src_c(grid_d(p)), fused so the
// D warped copies of the source features are never materialized.
ag::Var sweep_correlation(const ag::Var& ref, const ag::Var& src, const std::vector<Tensor>& grids,
                          double scale) {
  const int c = ref.dim(0), h = ref.dim(1), w = ref.dim(2);
  const int sh = src.dim(1), sw = src.dim(2);
  const int depth_count = static_cast<int>(grids.size());
  const std::size_t hw = static_cast<std::size_t>(h) * w, shw = static_cast<std::size_t>(sh) * sw;
  auto taps = std::make_shared<std::vector<Taps>>(depth_count * hw);
  for (int d = 0; d < depth_count; ++d)
    for (std::size_t p = 0; p < hw; ++p)
      (*taps)[d * hw + p] = make_taps(grids[d][p], grids[d][hw + p], sh, sw);

  Tensor out({depth_count, h, w});
  const double* rv = ref.value().data();
  const double* sv = src.value().data();
  for (int d = 0; d < depth_count; ++d) {
    double* o = out.data() + d * hw;
    const Taps* td = taps->data() + d * hw;
    for (int ch = 0; ch < c; ++ch) {
      const double* r = rv + ch * hw;
      const double* s = sv + ch * shw;
      for (std::size_t p = 0; p < hw; ++p) {
        const Taps& t = td[p];
        const double v = t.w[0] * s[t.idx[0]] + t.w[1] * s[t.idx[1]] + t.w[2] * s[t.idx[2]] +
                         t.w[3] * s[t.idx[3]];
        o[p] += r[p] * v;
      }
    }
    for (std::size_t p = 0; p < hw; ++p) o[p] *= scale;
  }

  return ag::make_result(std::move(out), {ref, src}, [=](ag::Node& n) {
    const double* rv = n.inputs[0]->value.data();
    const double* sv = n.inputs[1]->value.data();
    double* gr = n.inputs[0]->requires_grad ? n.inputs[0]->grad_buffer().data() : nullptr;
    double* gs = n.inputs[1]->requires_grad ? n.inputs[1]->grad_buffer().data() : nullptr;
    for (int d = 0; d < depth_count; ++d) {
      const double* g = n.grad.data() + d * hw;
      const Taps* td = taps->data() + d * hw;
      for (int ch = 0; ch < c; ++ch) {
        const double* r = rv + ch * hw;
        const double* s = sv + ch * shw;
        for (std::size_t p = 0; p < hw; ++p) {
          const double gp = g[p] * scale;
          if (gp == 0.0) continue;
          const Taps& t = td[p];
          if (gr)
            gr[ch * hw + p] += gp * (t.w[0] * s[t.idx[0]] + t.w[1] * s[t.idx[1]] +
                                     t.w[2] * s[t.idx[2]] + t.w[3] * s[t.idx[3]]);
          if (gs) {
            double* gsc = gs + ch * shw;
            const double k = gp * r[p];
            for (int q = 0; q < 4; ++q) gsc[t.idx[q]] += k * t.w[q];
          }
        }
      }
    }
  });
}

std::vector<double> stage_hypotheses(const std::vector<double>& base, int count) {
  if (count == static_cast<int>(base.size())) return base;
  std::vector<double> out(count);
  const double lo = base.front(), hi = base.back();
  for (int k = 0; k < count; ++k) out[k] = count == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * k / (count - 1);
  return out;
}

constexpr int kFeatureChannels = 32;

}  // namespace

std::vector<int> pyramid_widths(const std::string& preset) {
  if (preset == "casmvsnet") return {32, 96, 256};
  if (preset == "patchmatchnet") return {16, 32, 132};
  throw ConfigError("unknown geometry preset '" + preset + "' (expected casmvsnet or patchmatchnet)");
}

PlaneSweepBackend::PlaneSweepBackend(const BackendSpec& spec) : spec_(spec) {
  const auto widths = pyramid_widths(spec.preset);
  if (spec.num_stages < 1 || spec.num_stages > static_cast<int>(widths.size()))
    throw ConfigError("geometry.num_stages must lie in [1, " + std::to_string(widths.size()) + "]");
  if (static_cast<int>(spec.hypotheses.size()) != spec.num_stages)
    throw ConfigError("geometry.hypotheses needs one count per stage");
  for (int n : spec.hypotheses)
    if (n < 2) throw ConfigError("each stage needs at least 2 depth hypotheses");
  if (spec.groups < 1 || kFeatureChannels % spec.groups != 0)
    throw ConfigError("geometry.groups must divide " + std::to_string(kFeatureChannels));
  if (!(spec.temperature > 0.0)) throw ConfigError("geometry.temperature must be positive");

  std::mt19937_64 rng(spec.seed);
  int in = 3;
  for (int l = 0; l < static_cast<int>(widths.size()); ++l) {
    const std::string p = "pyramid." + std::to_string(l);
    Level level;
    level.down = nn::make_conv(params_, p + ".down", in, widths[l], 3, 2, ag::PadMode::kZero, false, rng);
    level.conv = nn::make_conv(params_, p + ".conv", widths[l], widths[l], 3, 1, ag::PadMode::kZero, false, rng);
    level.head = nn::make_conv(params_, p + ".head", widths[l], kFeatureChannels, 1, 1, ag::PadMode::kZero, false, rng);
    levels_.push_back(std::move(level));
    in = widths[l];
  }
  if (!spec.weights_path.empty()) {
    const nn::Archive archive = nn::load_archive(spec.weights_path);
    params_.assign(archive.tensors);
  }
}

nn::Archive PlaneSweepBackend::to_archive() const {
  return {"muviecast.plane_sweep_ref." + spec_.preset + "/v1", params_.snapshot()};
}

std::vector<ag::Var> PlaneSweepBackend::features(const ag::Var& image) const {
  std::vector<ag::Var> out;
  ag::Var x = image;
  for (int l = 0; l < spec_.num_stages; ++l) {
    x = ag::relu(levels_[l].conv(ag::relu(levels_[l].down(x))));
    const ag::Var head = levels_[l].head(x);
    const ag::Var unit_gain = ag::Var::constant(Tensor({kFeatureChannels}, 1.0));
    const ag::Var zero_bias = ag::Var::constant(Tensor({kFeatureChannels}));
    const ag::Var centered = ag::instance_norm(head, unit_gain, zero_bias, 1e-6);
    out.push_back(ag::group_normalize(centered, spec_.groups, 1e-6));
  }
  return out;
}

DepthEstimate PlaneSweepBackend::estimate(const MultiViewSample& sample, const ag::Var& ref,
                                          const std::vector<ag::Var>& sources) const {
  count_call();
  if (sources.empty()) throw ValidationError("depth estimation needs at least 2 views");
  if (sources.size() != sample.source_cameras.size())
    throw ValidationError("source image/camera count mismatch");
  const int h = ref.dim(1), w = ref.dim(2);
  if (h % stride() != 0 || w % stride() != 0)
    throw ValidationError("image size " + std::to_string(w) + "x" + std::to_string(h) +
                          " must be divisible by " + std::to_string(stride()));
  const auto& hyp = sample.depth_hypotheses;
  if (hyp.size() < 2) throw ValidationError("need at least 2 depth hypotheses");
  for (std::size_t k = 0; k < hyp.size(); ++k) {
    if (!(hyp[k] > 0.0) || !std::isfinite(hyp[k]))
      throw ValidationError("depth hypotheses must lie in (0, inf)");
    if (k && !(hyp[k] > hyp[k - 1])) throw ValidationError("depth hypotheses must increase");
  }

  const auto ref_feats = features(ref);
  std::vector<std::vector<ag::Var>> src_feats;
  for (const auto& s : sources) src_feats.push_back(features(s));

  DepthEstimate est;
  for (int l = 0; l < spec_.num_stages; ++l) {
    const double factor = 1.0 / (1 << (l + 1));
    const Camera ref_cam = scale_camera(sample.ref_camera, factor);
    const int fh = ref_feats[l].dim(1), fw = ref_feats[l].dim(2);
    const std::size_t hw = static_cast<std::size_t>(fh) * fw;
    DepthStage stage;
    stage.hypotheses = stage_hypotheses(hyp, spec_.hypotheses[l]);
    const int nd = static_cast<int>(stage.hypotheses.size());

    Tensor count({nd, fh, fw});
    ag::Var total;
    for (std::size_t s = 0; s < sources.size(); ++s) {
      const Camera src_cam = scale_camera(sample.source_cameras[s], factor);
      const auto& sf = src_feats[s][l];
      std::vector<Tensor> grids(nd);
      Tensor mask({nd, fh, fw});
      for (int d = 0; d < nd; ++d) {
        Tensor m;
        warp_grid(src_cam, ref_cam, Tensor({1}, stage.hypotheses[d]), fh, fw, sf.dim(1), sf.dim(2),
                  grids[d], m);
        std::copy(m.data(), m.data() + hw, mask.data() + d * hw);
      }
      const ag::Var corr = ag::mul_const(
          sweep_correlation(ref_feats[l], sf, grids, 1.0 / spec_.groups), mask);
      total = total.defined() ? ag::add(total, corr) : corr;
      kernels::axpy(1.0, mask.span(), count.span());
    }
    for (double& c : count.span()) c = 1.0 / std::max(c, 1.0);
    const ag::Var cost = ag::box_filter(ag::mul_const(total, count), spec_.cost_radius);
    stage.volume = ag::softmax_channels(ag::affine(cost, 1.0 / spec_.temperature, 0.0));
    stage.depth = ag::channel_weighted_sum(stage.volume, stage.hypotheses);
    est.stages.push_back(std::move(stage));
  }
  return est;
}

namespace {

// Keeps the shared object loaded for as long as the backend lives.
class ExternalBackend final : public GeometryBackend {
 public:
  ExternalBackend(void* handle, GeometryBackend* inner) : handle_(handle), inner_(inner) {}
  ~ExternalBackend() override {
    inner_.reset();
    dlclose(handle_);
  }

  DepthEstimate estimate(const MultiViewSample& sample, const ag::Var& ref,
                         const std::vector<ag::Var>& sources) const override {
    count_call();
    return inner_->estimate(sample, ref, sources);
  }
  int num_stages() const override { return inner_->num_stages(); }
  int stride() const override { return inner_->stride(); }
  std::size_t parameter_count() const override { return inner_->parameter_count(); }
  std::uint64_t checksum() const override { return inner_->checksum(); }
  std::string name() const override { return "external:" + inner_->name(); }

 private:
  void* handle_;
  std::unique_ptr<GeometryBackend> inner_;
};

}  // namespace

std::unique_ptr<GeometryBackend> make_backend(const BackendSpec& spec) {
  if (spec.kind == "plane_sweep_ref") return std::make_unique<PlaneSweepBackend>(spec);
  const std::string prefix = "external:";
  if (spec.kind.rfind(prefix, 0) == 0) {
    const std::string path = spec.kind.substr(prefix.size());
    void* handle = dlopen(path.c_str(), RTLD_NOW | RTLD_LOCAL);
    if (!handle) throw LoadError("cannot load geometry backend " + path + ": " + dlerror());
    auto create = reinterpret_cast<CreateBackendFn>(dlsym(handle, kCreateBackendSymbol));
    if (!create) {
      dlclose(handle);
      throw LoadError(path + " does not export " + kCreateBackendSymbol);
    }
    GeometryBackend* inner = create(spec.options.c_str());
    if (!inner) {
      dlclose(handle);
      throw LoadError(path + ": backend factory returned null");
    }
    return std::make_unique<ExternalBackend>(handle, inner);
  }
  throw ConfigError("unknown geometry backend '" + spec.kind +
                    "' (expected plane_sweep_ref or external:<path>)");
}

}  // namespace muvie
