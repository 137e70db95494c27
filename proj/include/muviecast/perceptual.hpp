#pragma once

// Frozen VGG feature extractor truncated after block 4.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "muviecast/nn.hpp"

namespace muvie {

enum class VggKind { kVgg16Trim, kVgg19Trim };

std::string vgg_name(VggKind kind);  // "vgg16_trim" / "vgg19_trim"
VggKind parse_vgg_kind(const std::string& name);

// Tap points exposed by each trimmed backbone, shallow to deep.
const std::vector<std::string>& vgg_tap_layers(VggKind kind);

struct FeatureTapSpec {
  VggKind backbone = VggKind::kVgg16Trim;
  std::vector<std::string> content_layers;
  std::vector<std::string> style_layers;
};

// Throws ConfigError for taps the backbone does not expose.
void validate_taps(const FeatureTapSpec& spec);

struct FeatureSet {
  std::vector<std::string> names;
  std::vector<ag::Var> maps;

  const ag::Var& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

class PerceptualNet {
 public:
  // Archive layout matches torchvision's `features.N.weight/bias` naming.
  static PerceptualNet load(VggKind kind, const std::filesystem::path& path);
  static PerceptualNet random(VggKind kind, std::uint64_t seed);

  VggKind kind() const { return kind_; }
  const nn::ParameterSet& params() const { return params_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }
  std::uint64_t checksum() const { return params_.checksum(); }
  nn::Archive to_archive() const;

  // `image` is RGB [3, H, W] in [0, 1]; ImageNet normalization is applied
  // here. Only layers up to the deepest requested tap are evaluated.
  FeatureSet extract(const ag::Var& image, const std::vector<std::string>& layers) const;

 private:
  PerceptualNet(VggKind kind, std::uint64_t seed);

  struct Layer {
    bool pool;
    nn::Conv2d conv;
    std::string tap;  // empty when the relu after this conv is not a tap
  };

  VggKind kind_;
  nn::ParameterSet params_;
  std::vector<Layer> layers_;
};

// Resolves a weights file from an explicit path or, when empty, from
// $MUVIECAST_WEIGHTS_DIR/<file_name>. Throws LoadError when missing.
std::filesystem::path resolve_weights_path(const std::string& configured,
                                           const std::string& file_name);

}  // namespace muvie
