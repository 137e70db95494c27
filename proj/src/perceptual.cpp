#include "muviecast/perceptual.hpp"

#include <algorithm>
#include <cstdlib>

#include "muviecast/error.hpp"

namespace muvie {
namespace {

constexpr double kMean[3] = {0.485, 0.456, 0.406};
constexpr double kStd[3] = {0.229, 0.224, 0.225};

struct ConvDef {
  int index;  // torchvision features index
  int in, out;
  bool pool_before;
  const char* tap;
};

const std::vector<ConvDef>& layout(VggKind kind) {
  static const std::vector<ConvDef> vgg16 = {
      {0, 3, 64, false, ""},          {2, 64, 64, false, "relu1_2"},
      {5, 64, 128, true, ""},         {7, 128, 128, false, "relu2_2"},
      {10, 128, 256, true, ""},       {12, 256, 256, false, ""},
      {14, 256, 256, false, "relu3_3"}, {17, 256, 512, true, ""},
      {19, 512, 512, false, ""},      {21, 512, 512, false, "relu4_3"}};
  static const std::vector<ConvDef> vgg19 = {
      {0, 3, 64, false, "relu1_1"},  {2, 64, 64, false, ""},
      {5, 64, 128, true, "relu2_1"}, {7, 128, 128, false, ""},
      {10, 128, 256, true, "relu3_1"}, {12, 256, 256, false, ""},
      {14, 256, 256, false, ""},     {16, 256, 256, false, ""},
      {19, 256, 512, true, "relu4_1"}};
  return kind == VggKind::kVgg16Trim ? vgg16 : vgg19;
}

}  // namespace

std::string vgg_name(VggKind kind) {
  return kind == VggKind::kVgg16Trim ? "vgg16_trim" : "vgg19_trim";
}

VggKind parse_vgg_kind(const std::string& name) {
  if (name == "vgg16_trim") return VggKind::kVgg16Trim;
  if (name == "vgg19_trim") return VggKind::kVgg19Trim;
  throw ConfigError("unknown perceptual backbone '" + name + "' (expected vgg16_trim or vgg19_trim)");
}

const std::vector<std::string>& vgg_tap_layers(VggKind kind) {
  static const std::vector<std::string> t16 = {"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
  static const std::vector<std::string> t19 = {"relu1_1", "relu2_1", "relu3_1", "relu4_1"};
  return kind == VggKind::kVgg16Trim ? t16 : t19;
}

void validate_taps(const FeatureTapSpec& spec) {
  const auto& known = vgg_tap_layers(spec.backbone);
  for (const auto* list : {&spec.content_layers, &spec.style_layers})
    for (const auto& name : *list)
      if (std::find(known.begin(), known.end(), name) == known.end())
        throw ConfigError("layer '" + name + "' is not a tap of " + vgg_name(spec.backbone));
}

const ag::Var& FeatureSet::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return maps[i];
  throw ValidationError("feature layer '" + name + "' missing from feature set");
}

bool FeatureSet::contains(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

PerceptualNet::PerceptualNet(VggKind kind, std::uint64_t seed) : kind_(kind) {
  std::mt19937_64 rng(seed);
  for (const ConvDef& d : layout(kind)) {
    Layer layer;
    layer.pool = d.pool_before;
    layer.conv = nn::make_conv(params_, "features." + std::to_string(d.index), d.in, d.out, 3, 1,
                               ag::PadMode::kZero, /*trainable=*/false, rng);
    layer.tap = d.tap;
    layers_.push_back(std::move(layer));
  }
}

PerceptualNet PerceptualNet::random(VggKind kind, std::uint64_t seed) {
  return PerceptualNet(kind, seed);
}

PerceptualNet PerceptualNet::load(VggKind kind, const std::filesystem::path& path) {
  PerceptualNet net(kind, 0);
  const nn::Archive archive = nn::load_archive(path);
  net.params_.assign(archive.tensors);
  return net;
}

nn::Archive PerceptualNet::to_archive() const {
  return {"muviecast." + vgg_name(kind_) + "/v1", params_.snapshot()};
}

FeatureSet PerceptualNet::extract(const ag::Var& image, const std::vector<std::string>& layers) const {
  const Tensor& img = image.value();
  if (img.rank() != 3 || img.dim(0) != 3) throw ValidationError("extract expects an RGB [3, H, W] image");
  if (img.dim(1) < 32 || img.dim(2) < 32) throw ValidationError("extract needs images of at least 32x32");
  const auto& known = vgg_tap_layers(kind_);
  std::size_t deepest = 0;
  for (const auto& name : layers) {
    auto it = std::find(known.begin(), known.end(), name);
    if (it == known.end())
      throw ConfigError("layer '" + name + "' is not a tap of " + vgg_name(kind_));
    deepest = std::max(deepest, static_cast<std::size_t>(it - known.begin()) + 1);
  }

  const std::size_t hw = static_cast<std::size_t>(img.dim(1)) * img.dim(2);
  Tensor scale(img.shape()), shift(img.shape());
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      scale[c * hw + i] = 1.0 / kStd[c];
      shift[c * hw + i] = -kMean[c] / kStd[c];
    }
  ag::Var x = ag::add(ag::mul_const(image, scale), ag::Var::constant(std::move(shift)));

  FeatureSet out;
  std::size_t taps_seen = 0;
  for (const Layer& layer : layers_) {
    if (taps_seen == deepest) break;
    if (layer.pool) x = ag::max_pool2(x);
    x = ag::relu(layer.conv(x));
    if (!layer.tap.empty()) {
      ++taps_seen;
      if (std::find(layers.begin(), layers.end(), layer.tap) != layers.end()) {
        out.names.push_back(layer.tap);
        out.maps.push_back(x);
      }
    }
  }
  // Return in the requested order.
  FeatureSet ordered;
  for (const auto& name : layers) {
    ordered.names.push_back(name);
    ordered.maps.push_back(out.at(name));
  }
  return ordered;
}

std::filesystem::path resolve_weights_path(const std::string& configured, const std::string& file_name) {
  if (!configured.empty()) {
    if (!std::filesystem::exists(configured)) throw LoadError("weights file not found: " + configured);
    return configured;
  }
  if (const char* dir = std::getenv("MUVIECAST_WEIGHTS_DIR")) {
    const std::filesystem::path p = std::filesystem::path(dir) / file_name;
    if (std::filesystem::exists(p)) return p;
    throw LoadError("weights file not found: " + p.string());
  }
  throw LoadError("no weights path configured for " + file_name +
                  " and MUVIECAST_WEIGHTS_DIR is not set");
}

}  // namespace muvie
