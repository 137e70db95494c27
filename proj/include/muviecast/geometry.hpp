#pragma once

// Multi-view depth estimation backends and plane-sweep warping.

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "muviecast/dataset.hpp"
#include "muviecast/nn.hpp"

namespace muvie {

struct DepthStage {
  ag::Var depth;   // [1, H_l, W_l]
  ag::Var volume;  // [D_l, H_l, W_l]; undefined for volume-less stages
  std::vector<double> hypotheses;
};

// stages[0] is the finest; each further stage halves H and W.
struct DepthEstimate {
  std::vector<DepthStage> stages;
};

// Throws ValidationError on shape or normalization violations.
void validate_estimate(const DepthEstimate& est, double tol = 1e-4);

struct BackendSpec {
  std::string kind = "plane_sweep_ref";  // or "external:<path to shared object>"
  std::string preset = "casmvsnet";      // feature pyramid widths: casmvsnet | patchmatchnet
  int num_stages = 3;
  std::vector<int> hypotheses = {48, 24, 12};  // per stage, finest first
  int groups = 8;
  double temperature = 0.005;
  int cost_radius = 2;  // box aggregation of the matching cost
  std::string weights_path;  // empty: seeded initialization
  std::uint64_t seed = 2024;
  std::string options;  // passed verbatim to external backends
};

class GeometryBackend {
 public:
  virtual ~GeometryBackend() = default;

  // `ref` and `sources` are the (possibly stylized) views of `sample`; the
  // result is differentiable w.r.t. them and never w.r.t. backend weights.
  virtual DepthEstimate estimate(const MultiViewSample& sample, const ag::Var& ref,
                                 const std::vector<ag::Var>& sources) const = 0;

  virtual int num_stages() const = 0;
  virtual int stride() const = 0;  // required divisor of H and W
  virtual std::size_t parameter_count() const = 0;
  virtual std::uint64_t checksum() const = 0;
  virtual std::string name() const = 0;

  // Uses the sample's own images as constants.
  DepthEstimate estimate(const MultiViewSample& sample) const;

  long calls() const { return calls_.load(); }

 protected:
  void count_call() const { ++calls_; }

 private:
  mutable std::atomic<long> calls_{0};
};

std::unique_ptr<GeometryBackend> make_backend(const BackendSpec& spec);

// Entry point external backends export with C linkage:
//   muvie::GeometryBackend* muviecast_create_backend(const char* options);
using CreateBackendFn = GeometryBackend* (*)(const char* options);
inline constexpr const char* kCreateBackendSymbol = "muviecast_create_backend";

struct WarpResult {
  ag::Var warped;  // [C, H, W] in the reference frame
  Tensor mask;     // [1, H, W], 1 where the sample lies inside the source
};

// Source pixel coordinates [2, H, W] of reference pixels back-projected to
// `depth` ([1, H, W] or a single element), and the in-bounds mask.
void warp_grid(const Camera& src_cam, const Camera& ref_cam, const Tensor& depth, int height,
               int width, int src_height, int src_width, Tensor& grid, Tensor& mask);

WarpResult homography_warp(const ag::Var& source, const Camera& src_cam, const Camera& ref_cam,
                           const Tensor& depth);

// Intrinsics scaled for a feature map downsampled by 2^level.
Camera scale_camera(const Camera& cam, double factor);

// Reference plane-sweep backend with a frozen feature pyramid.
class PlaneSweepBackend final : public GeometryBackend {
 public:
  explicit PlaneSweepBackend(const BackendSpec& spec);

  DepthEstimate estimate(const MultiViewSample& sample, const ag::Var& ref,
                         const std::vector<ag::Var>& sources) const override;
  using GeometryBackend::estimate;

  int num_stages() const override { return spec_.num_stages; }
  int stride() const override { return 1 << (spec_.num_stages + 2); }
  std::size_t parameter_count() const override { return params_.parameter_count(); }
  std::uint64_t checksum() const override { return params_.checksum(); }
  std::string name() const override { return "plane_sweep_ref/" + spec_.preset; }

  const nn::ParameterSet& params() const { return params_; }
  nn::Archive to_archive() const;

  // Per-stage unit-group features [32, H/2^(l+1), W/2^(l+1)].
  std::vector<ag::Var> features(const ag::Var& image) const;

 private:
  struct Level {
    nn::Conv2d down, conv, head;
  };

  BackendSpec spec_;
  nn::ParameterSet params_;
  std::vector<Level> levels_;
};

// Pyramid widths for a named preset.
std::vector<int> pyramid_widths(const std::string& preset);

}  // namespace muvie
