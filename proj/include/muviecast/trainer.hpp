#pragma once

// Optimization loop: stylize a sample's views, score them against frozen
// perceptual and geometry networks, update the transfer network only.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "muviecast/config.hpp"

namespace muvie {

struct Models {
  std::unique_ptr<PerceptualNet> perceptual;
  std::unique_ptr<GeometryBackend> geometry;
  std::unique_ptr<TransferNet> transfer;  // may reference *perceptual

  std::size_t total_parameters() const;
  std::size_t trainable_parameters() const { return transfer->parameter_count(); }
};

// Loads perceptual weights (explicit path or $MUVIECAST_WEIGHTS_DIR/<backbone>.mvcw),
// creates the geometry backend and a seeded or checkpointed transfer network.
Models build_models(const Config& cfg);

// Loss component names in report order.
const std::vector<std::string>& loss_terms();  // content style imgeom volume depth tv nnfm

// Terms with a nonzero outer weight (imgeom also needs a nonzero inner weight).
std::vector<std::string> active_terms(const losses::LossWeights& weights);

struct RunReport {
  std::string mode;  // train | pretrain
  std::string arch;
  std::string scene;
  std::string style;
  std::map<std::string, double> weights;   // outer weight of every term
  std::vector<std::string> active_terms;
  int epochs = 0;
  int steps_per_epoch = 0;
  // Per step, unweighted: one entry per active term plus "total" (weighted).
  std::map<std::string, std::vector<double>> traces;
  std::vector<int> reference_views;       // per step
  std::vector<double> epoch_total;        // mean total per epoch
  double wall_seconds = 0.0;
  std::size_t total_parameters = 0;
  std::size_t trainable_parameters = 0;
  std::uint64_t transfer_checksum_before = 0, transfer_checksum_after = 0;
  std::uint64_t perceptual_checksum_before = 0, perceptual_checksum_after = 0;
  std::uint64_t geometry_checksum_before = 0, geometry_checksum_after = 0;
  long backend_calls = 0;
  std::vector<std::string> outputs;
  std::string checkpoint;

  std::string to_json() const;  // pretty printed
  void write(const std::filesystem::path& path) const;
};

// Called after every step with the report so far.
using StepCallback = std::function<void(const RunReport&)>;

// Trains models.transfer on `scene` in place. With color.mode pre the
// scene is color adjusted toward the style first.
RunReport train(const Scene& scene, const Tensor& style, const Config& cfg, Models& models,
                const StepCallback& on_step = {});

// One stylized image per view at the scene's resolution, with color.mode
// pre/post adjustment applied.
std::vector<Tensor> stylize_all(const Scene& scene, const Tensor& style, const Config& cfg,
                                const Models& models);

// Content and style terms only over the images in `folder`, resized to
// pretrain.size squares. Throws ValidationError for a folder without images.
RunReport pretrain_transfernet(const std::filesystem::path& folder, const Tensor& style,
                               const Config& cfg, Models& models, const StepCallback& on_step = {});

// Ablation groups: content, style, imgeom, geometry3d (volume + depth).
const std::vector<std::string>& ablation_groups();

// Loss weights keeping only the terms of `groups`, at their configured values.
losses::LossWeights ablation_weights(const losses::LossWeights& base, const std::set<std::string>& groups);

// Called after each ablation run with its name, configuration and models.
using AblationCallback =
    std::function<void(const std::string& name, const Config& cfg, const Models& models, RunReport& report)>;

// One fresh run per enabled group plus "combined" with all of them (omitted
// when only one group is enabled).
std::map<std::string, RunReport> ablate(const Scene& scene, const Tensor& style, const Config& cfg,
                                        const std::set<std::string>& enabled,
                                        const AblationCallback& on_run = {});

// <out>/<scene>/<style>/stylized/NNNNNNNN.png; returns the written paths.
std::vector<std::string> write_stylized(const std::filesystem::path& dir, const Scene& scene,
                                        const std::vector<Tensor>& images);

// Runs `image` through `net` after edge padding H and W up to the stride,
// cropping the result back.
Tensor transform_padded(const TransferNet& net, const Tensor& image);

}  // namespace muvie
