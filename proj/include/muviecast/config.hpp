#pragma once

// Run configuration: one YAML document with sections, addressed by dotted
// keys ("loss.style", "train.epochs"). Every key can be overridden.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "muviecast/color_adjust.hpp"
#include "muviecast/consistency.hpp"
#include "muviecast/geometry.hpp"
#include "muviecast/losses.hpp"
#include "muviecast/perceptual.hpp"
#include "muviecast/transfer_net.hpp"

namespace muvie {

struct ArchPreset {
  std::string name;
  std::string geometry_preset;
  TransferKind transfer;
  VggKind perceptual;
  losses::StyleLossKind style_kind;
  std::vector<std::string> content_layers;
  std::vector<std::string> style_layers;
  double lr;
  double style_weight;      // scaled to the style loss kind
  double total_params;      // reference budgets
  double trainable_params;
};

const std::vector<ArchPreset>& arch_presets();
const ArchPreset& find_arch(const std::string& name);  // ConfigError when unknown

struct Config {
  std::string arch = "casmvsnet_unet";  // a preset name or "custom"

  // data
  std::string scene;
  std::string style;
  std::string pairs;          // optional pair file; empty: nearest indices
  std::string out = "out";
  double resolution = 1.0;    // image scale in (0, 1]

  // transfer
  TransferKind transfer = TransferKind::kUnet;
  std::string transfer_init;  // checkpoint to start from
  double adain_eps = 1e-5;

  // perceptual
  FeatureTapSpec taps{VggKind::kVgg16Trim, {"relu3_3"}, {"relu1_2", "relu2_2", "relu3_3", "relu4_3"}};
  std::string perceptual_weights;

  BackendSpec geometry;
  losses::LossWeights weights;

  // train
  int epochs = 10;
  int window = 3;
  int batch_size = 1;
  std::string optimizer = "adam";
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string device = "cpu";

  // pretrain
  int pretrain_epochs = 2;
  int pretrain_size = 128;

  ColorAdjustMode color = ColorAdjustMode::kOff;
  double color_epsilon = 1e-8;

  // eval
  double occlusion_threshold = 0.01;
  bool normalize = true;
  DepthSource depth_source = DepthSource::kFromInput;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
};

// Overwrites the backbone, tap, style-loss and learning-rate fields.
// "custom" leaves them untouched.
void apply_arch(Config& cfg, const std::string& name);

// Dotted keys in documentation order.
const std::vector<std::string>& config_keys();
std::string config_key_help(const std::string& key);
bool is_config_key(const std::string& key);

// Values as strings; lists are comma separated. Unknown keys or unparsable
// values throw ConfigError.
std::string get_config_value(const Config& cfg, const std::string& key);
void set_config_value(Config& cfg, const std::string& key, const std::string& value);

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Defaults, then the preset named by "arch" (override > file > default),
// then file values, then overrides in order. The result is validated.
Config resolve_config(const std::optional<std::filesystem::path>& file, const Overrides& overrides);

// Full configuration as a sectioned YAML document; round-trips through
// resolve_config.
std::string to_yaml(const Config& cfg);

}  // namespace muvie
