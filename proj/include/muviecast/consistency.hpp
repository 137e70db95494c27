#pragma once

// Multi-view consistency of image sets by depth-guided cross-view warping.

#include <string>
#include <utility>
#include <vector>

#include "muviecast/dataset.hpp"
#include "muviecast/geometry.hpp"

namespace muvie {

using ViewPair = std::pair<int, int>;  // (source view i, target view j)

struct ConsistencyOptions {
  double occlusion_threshold = 0.01;  // relative depth agreement
  bool normalize = true;              // per-set, per-channel mean/std
};

struct PairScore {
  int i = 0, j = 0;
  double rmse = 0.0;
  double valid_fraction = 0.0;
  bool flagged = false;  // no valid pixels; excluded from aggregates
};

struct ConsistencyReport {
  std::vector<PairScore> pairs;
  double mean_rmse = 0.0;
  double median_rmse = 0.0;
  int valid_pairs = 0;
};

// (i, j) for every view i and each of its window-1 neighbors j.
std::vector<ViewPair> neighbor_pairs(const Scene& scene, int window, const PairList* pairs = nullptr);

// Per-channel standardization using statistics pooled over the whole set.
std::vector<Tensor> normalize_set(const std::vector<Tensor>& images);

// For each pair, view-i pixels are lifted with depth i, projected into view
// j and compared with bilinear samples of image j. Pixels whose projected
// depth disagrees with depth j by more than the threshold are occluded.
ConsistencyReport consistency_score(const std::vector<Tensor>& images, const std::vector<Camera>& cameras,
                                    const std::vector<Tensor>& depths, const std::vector<ViewPair>& pairs,
                                    const ConsistencyOptions& options = {});

// Finest-stage depth of every view, resized to the image resolution.
std::vector<Tensor> estimate_depths(const Scene& scene, const GeometryBackend& backend, int window,
                                    const PairList* pairs = nullptr);

enum class DepthSource { kFromInput, kFromStylized };

std::string depth_source_name(DepthSource source);  // "from_input" / "from_stylized"
DepthSource parse_depth_source(const std::string& name);

struct SetComparison {
  ConsistencyReport input, stylized;
  double ratio = 1.0;  // stylized mean RMSE / input mean RMSE
};

SetComparison compare_sets(const std::vector<Tensor>& input, const std::vector<Tensor>& stylized,
                           const std::vector<Camera>& cameras, const std::vector<Tensor>& depths,
                           const std::vector<ViewPair>& pairs, const ConsistencyOptions& options = {});

// Estimates the shared depth maps from `source` with `backend`.
SetComparison compare_sets(const Scene& input, const std::vector<Tensor>& stylized,
                           const GeometryBackend& backend, DepthSource source, int window,
                           const ConsistencyOptions& options = {}, const PairList* pairs = nullptr);

}  // namespace muvie
