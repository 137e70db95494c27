#include "muviecast/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "muviecast/error.hpp"

namespace muvie {
namespace {

using losses::StyleLossKind;

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

enum class Kind { kString, kInt, kDouble, kBool, kList };

struct Field {
  std::string key;
  Kind kind;
  std::string help;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

Field str_field(std::string key, std::string help, std::string Config::*m) {
  return {key, Kind::kString, std::move(help), [m](const Config& c) { return c.*m; },
          [m](Config& c, const std::string& v) { c.*m = v; }};
}

Field dbl_field(std::string key, std::string help, std::function<double&(Config&)> ref) {
  return {key, Kind::kDouble, std::move(help),
          [ref](const Config& c) { return fmt_double(ref(const_cast<Config&>(c))); },
          [ref, key](Config& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}

Field int_field(std::string key, std::string help, std::function<int&(Config&)> ref) {
  return {key, Kind::kInt, std::move(help),
          [ref](const Config& c) { return std::to_string(ref(const_cast<Config&>(c))); },
          [ref, key](Config& c, const std::string& v) {
            const long long x = parse_int(key, v);
            if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(key + ": value out of range");
            ref(c) = static_cast<int>(x);
          }};
}

std::vector<Field> build_fields() {
  std::vector<Field> f;
  f.push_back(str_field("arch", "named preset: casmvsnet_unet, casmvsnet_adain, patchmatchnet_unet, "
                                "patchmatchnet_adain or custom",
                        &Config::arch));
  f.push_back(str_field("data.scene", "scene directory (images/, cams/, optional pair.txt)", &Config::scene));
  f.push_back(str_field("data.style", "style image", &Config::style));
  f.push_back(str_field("data.pairs", "pair file overriding the scene's pair.txt", &Config::pairs));
  f.push_back(str_field("data.out", "output root", &Config::out));
  f.push_back(dbl_field("data.resolution", "image scale factor in (0, 1]",
                        [](Config& c) -> double& { return c.resolution; }));

  f.push_back({"transfer.backbone", Kind::kString, "unet or adain",
               [](const Config& c) { return transfer_name(c.transfer); },
               [](Config& c, const std::string& v) { c.transfer = parse_transfer_kind(v); }});
  f.push_back(str_field("transfer.init", "checkpoint to initialize from", &Config::transfer_init));
  f.push_back(dbl_field("transfer.adain_eps", "AdaIN standard-deviation floor",
                        [](Config& c) -> double& { return c.adain_eps; }));

  f.push_back({"perceptual.backbone", Kind::kString, "vgg16_trim or vgg19_trim",
               [](const Config& c) { return vgg_name(c.taps.backbone); },
               [](Config& c, const std::string& v) { c.taps.backbone = parse_vgg_kind(v); }});
  f.push_back({"perceptual.content_layers", Kind::kList, "content loss taps",
               [](const Config& c) { return join_list(c.taps.content_layers); },
               [](Config& c, const std::string& v) { c.taps.content_layers = split_list(v); }});
  f.push_back({"perceptual.style_layers", Kind::kList, "style loss taps",
               [](const Config& c) { return join_list(c.taps.style_layers); },
               [](Config& c, const std::string& v) { c.taps.style_layers = split_list(v); }});
  f.push_back(str_field("perceptual.weights_path", "weights archive; empty: $MUVIECAST_WEIGHTS_DIR",
                        &Config::perceptual_weights));

  f.push_back({"geometry.backend", Kind::kString, "plane_sweep_ref or external:<shared object>",
               [](const Config& c) { return c.geometry.kind; },
               [](Config& c, const std::string& v) { c.geometry.kind = v; }});
  f.push_back({"geometry.preset", Kind::kString, "casmvsnet or patchmatchnet",
               [](const Config& c) { return c.geometry.preset; },
               [](Config& c, const std::string& v) { c.geometry.preset = v; }});
  f.push_back(int_field("geometry.num_stages", "cascade stages",
                        [](Config& c) -> int& { return c.geometry.num_stages; }));
  f.push_back({"geometry.hypotheses", Kind::kList, "depth hypotheses per stage, finest first",
               [](const Config& c) {
                 std::vector<std::string> s;
                 for (int h : c.geometry.hypotheses) s.push_back(std::to_string(h));
                 return join_list(s);
               },
               [](Config& c, const std::string& v) {
                 c.geometry.hypotheses.clear();
                 for (const auto& item : split_list(v))
                   c.geometry.hypotheses.push_back(static_cast<int>(parse_int("geometry.hypotheses", item)));
               }});
  f.push_back(int_field("geometry.groups", "correlation groups",
                        [](Config& c) -> int& { return c.geometry.groups; }));
  f.push_back(dbl_field("geometry.temperature", "softmax temperature of the matching cost",
                        [](Config& c) -> double& { return c.geometry.temperature; }));
  f.push_back(int_field("geometry.cost_radius", "box aggregation radius of the matching cost",
                        [](Config& c) -> int& { return c.geometry.cost_radius; }));
  f.push_back({"geometry.weights_path", Kind::kString, "feature pyramid archive; empty: seeded",
               [](const Config& c) { return c.geometry.weights_path; },
               [](Config& c, const std::string& v) { c.geometry.weights_path = v; }});
  f.push_back({"geometry.seed", Kind::kInt, "seed of the feature pyramid initialization",
               [](const Config& c) { return std::to_string(c.geometry.seed); },
               [](Config& c, const std::string& v) {
                 const long long x = parse_int("geometry.seed", v);
                 if (x < 0) throw ConfigError("geometry.seed: must be non-negative");
                 c.geometry.seed = static_cast<std::uint64_t>(x);
               }});
  f.push_back({"geometry.options", Kind::kString, "passed to external backends",
               [](const Config& c) { return c.geometry.options; },
               [](Config& c, const std::string& v) { c.geometry.options = v; }});

  auto w = [&f](const std::string& name, const std::string& help, double losses::LossWeights::*m) {
    f.push_back(dbl_field("loss." + name, help, [m](Config& c) -> double& { return c.weights.*m; }));
  };
  w("content", "content weight", &losses::LossWeights::content);
  w("style", "style weight", &losses::LossWeights::style);
  w("imgeom", "image geometry weight", &losses::LossWeights::imgeom);
  w("volume", "probability volume weight", &losses::LossWeights::volume);
  w("depth", "depth map weight", &losses::LossWeights::depth);
  w("sobel", "Sobel term inside the image geometry loss", &losses::LossWeights::sobel);
  w("laplace", "Laplacian term inside the image geometry loss", &losses::LossWeights::laplace);
  w("canny", "Canny term inside the image geometry loss", &losses::LossWeights::canny);
  f.push_back({"loss.style_kind", Kind::kString, "gram or in_stats",
               [](const Config& c) { return losses::style_loss_name(c.weights.style_kind); },
               [](Config& c, const std::string& v) { c.weights.style_kind = losses::parse_style_loss_kind(v); }});
  w("tv", "total variation weight", &losses::LossWeights::tv);
  w("nnfm", "nearest-neighbor feature matching weight", &losses::LossWeights::nnfm);

  f.push_back(int_field("train.epochs", "passes over all reference views",
                        [](Config& c) -> int& { return c.epochs; }));
  f.push_back(int_field("train.window", "views per sample (reference + sources)",
                        [](Config& c) -> int& { return c.window; }));
  f.push_back(int_field("train.batch_size", "samples per optimizer step",
                        [](Config& c) -> int& { return c.batch_size; }));
  f.push_back(str_field("train.optimizer", "adam or sgd", &Config::optimizer));
  f.push_back(dbl_field("train.lr", "learning rate", [](Config& c) -> double& { return c.lr; }));
  f.push_back({"train.seed", Kind::kInt, "seed of the transfer network initialization",
               [](const Config& c) { return std::to_string(c.seed); },
               [](Config& c, const std::string& v) {
                 const long long x = parse_int("train.seed", v);
                 if (x < 0) throw ConfigError("train.seed: must be non-negative");
                 c.seed = static_cast<std::uint64_t>(x);
               }});
  f.push_back(str_field("train.device", "cpu", &Config::device));

  f.push_back(int_field("pretrain.epochs", "passes over the image folder",
                        [](Config& c) -> int& { return c.pretrain_epochs; }));
  f.push_back(int_field("pretrain.size", "square training size of folder images",
                        [](Config& c) -> int& { return c.pretrain_size; }));

  f.push_back({"color.mode", Kind::kString, "off, pre or post",
               [](const Config& c) { return color_adjust_name(c.color); },
               [](Config& c, const std::string& v) { c.color = parse_color_adjust_mode(v); }});
  f.push_back(dbl_field("color.epsilon", "covariance regularization",
                        [](Config& c) -> double& { return c.color_epsilon; }));

  f.push_back(dbl_field("eval.occlusion_threshold", "relative depth tolerance of the occlusion check",
                        [](Config& c) -> double& { return c.occlusion_threshold; }));
  f.push_back({"eval.normalize", Kind::kBool, "per-set mean/std normalization before scoring",
               [](const Config& c) { return std::string(c.normalize ? "true" : "false"); },
               [](Config& c, const std::string& v) { c.normalize = parse_bool("eval.normalize", v); }});
  f.push_back({"eval.depth_source", Kind::kString, "from_input or from_stylized",
               [](const Config& c) { return depth_source_name(c.depth_source); },
               [](Config& c, const std::string& v) { c.depth_source = parse_depth_source(v); }});
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = build_fields();
  return f;
}

const Field& field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

void flatten(const YAML::Node& node, const std::string& prefix, Overrides& out) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string k = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? k : prefix + "." + k, out);
    }
  } else if (node.IsSequence()) {
    std::vector<std::string> items;
    for (const auto& item : node) {
      if (!item.IsScalar()) throw ConfigError(prefix + ": list items must be scalars");
      items.push_back(item.as<std::string>());
    }
    out.emplace_back(prefix, join_list(items));
  } else if (node.IsScalar()) {
    out.emplace_back(prefix, node.as<std::string>());
  } else if (node.IsNull()) {
    out.emplace_back(prefix, "");
  }
}

}  // namespace

const std::vector<ArchPreset>& arch_presets() {
  static const std::vector<ArchPreset> presets = {
      {"casmvsnet_unet", "casmvsnet", TransferKind::kUnet, VggKind::kVgg16Trim, StyleLossKind::kGram,
       {"relu3_3"}, {"relu1_2", "relu2_2", "relu3_3", "relu4_3"}, 1e-3, 1e4, 10.2e6, 1.7e6},
      {"casmvsnet_adain", "casmvsnet", TransferKind::kAdain, VggKind::kVgg19Trim, StyleLossKind::kInStats,
       {"relu4_1"}, {"relu1_1", "relu2_1", "relu3_1", "relu4_1"}, 1e-4, 1e-2, 7.9e6, 3.5e6},
      {"patchmatchnet_unet", "patchmatchnet", TransferKind::kUnet, VggKind::kVgg16Trim, StyleLossKind::kGram,
       {"relu3_3"}, {"relu1_2", "relu2_2", "relu3_3", "relu4_3"}, 1e-3, 1e4, 9.5e6, 1.7e6},
      {"patchmatchnet_adain", "patchmatchnet", TransferKind::kAdain, VggKind::kVgg19Trim,
       StyleLossKind::kInStats, {"relu4_1"}, {"relu1_1", "relu2_1", "relu3_1", "relu4_1"}, 1e-4, 1e-2, 7.2e6,
       3.5e6},
  };
  return presets;
}

const ArchPreset& find_arch(const std::string& name) {
  for (const ArchPreset& p : arch_presets())
    if (p.name == name) return p;
  std::string known;
  for (const ArchPreset& p : arch_presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown architecture '" + name + "' (expected " + known + " or custom)");
}

void apply_arch(Config& cfg, const std::string& name) {
  if (name == "custom") {
    cfg.arch = name;
    return;
  }
  const ArchPreset& p = find_arch(name);
  cfg.arch = p.name;
  cfg.geometry.preset = p.geometry_preset;
  cfg.transfer = p.transfer;
  cfg.taps = {p.perceptual, p.content_layers, p.style_layers};
  cfg.weights.style_kind = p.style_kind;
  cfg.weights.style = p.style_weight;
  cfg.lr = p.lr;
}

void Config::validate() const {
  if (arch != "custom") find_arch(arch);
  if (!(resolution > 0.0 && resolution <= 1.0)) throw ConfigError("data.resolution must be in (0, 1]");
  if (transfer == TransferKind::kAdain && taps.backbone != VggKind::kVgg19Trim)
    throw ConfigError("transfer.backbone adain needs perceptual.backbone vgg19_trim");
  if (!(adain_eps > 0.0)) throw ConfigError("transfer.adain_eps must be positive");
  validate_taps(taps);
  weights.validate();
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (window < 2) throw ConfigError("train.window must be at least 2");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("train.optimizer must be adam or sgd");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (device != "cpu") throw ConfigError("train.device '" + device + "' is not available (only cpu)");
  if (pretrain_epochs < 1) throw ConfigError("pretrain.epochs must be at least 1");
  if (pretrain_size < 32 || pretrain_size % 8 != 0)
    throw ConfigError("pretrain.size must be a multiple of 8 and at least 32");
  if (!(color_epsilon > 0.0)) throw ConfigError("color.epsilon must be positive");
  if (!(occlusion_threshold > 0.0)) throw ConfigError("eval.occlusion_threshold must be positive");
  if (geometry.num_stages < 1) throw ConfigError("geometry.num_stages must be at least 1");
  if (static_cast<int>(geometry.hypotheses.size()) != geometry.num_stages)
    throw ConfigError("geometry.hypotheses needs one entry per stage");
  if (geometry.groups < 1) throw ConfigError("geometry.groups must be at least 1");
  if (!(geometry.temperature > 0.0)) throw ConfigError("geometry.temperature must be positive");
  if (geometry.cost_radius < 0) throw ConfigError("geometry.cost_radius must be non-negative");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::string config_key_help(const std::string& key) { return field(key).help; }

bool is_config_key(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return true;
  return false;
}

std::string get_config_value(const Config& cfg, const std::string& key) { return field(key).get(cfg); }

void set_config_value(Config& cfg, const std::string& key, const std::string& value) {
  if (key == "arch") {
    apply_arch(cfg, value);
    return;
  }
  field(key).set(cfg, value);
}

Config resolve_config(const std::optional<std::filesystem::path>& file, const Overrides& overrides) {
  Overrides from_file;
  if (file) {
    if (!std::filesystem::exists(*file)) throw LoadError("config file not found: " + file->string());
    YAML::Node root;
    try {
      root = YAML::LoadFile(file->string());
    } catch (const YAML::Exception& e) {
      throw ConfigError(file->string() + ": " + e.what());
    }
    if (!root.IsNull() && !root.IsMap()) throw ConfigError(file->string() + ": expected a mapping");
    flatten(root, "", from_file);
  }

  std::string arch = "casmvsnet_unet";
  for (const auto& [k, v] : from_file)
    if (k == "arch") arch = v;
  for (const auto& [k, v] : overrides)
    if (k == "arch") arch = v;

  Config cfg;
  apply_arch(cfg, arch);
  for (const Overrides* list : std::initializer_list<const Overrides*>{&from_file, &overrides})
    for (const auto& [k, v] : *list)
      if (k != "arch") field(k).set(cfg, v);
  cfg.validate();
  return cfg;
}

std::string to_yaml(const Config& cfg) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  std::string section;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      if (!section.empty()) out << YAML::EndMap;
      if (!sec.empty()) out << YAML::Key << sec << YAML::Value << YAML::BeginMap;
      section = sec;
    }
    out << YAML::Key << name << YAML::Value;
    const std::string value = f.get(cfg);
    switch (f.kind) {
      case Kind::kList: {
        out << YAML::Flow << YAML::BeginSeq;
        for (const auto& item : split_list(value)) out << item;
        out << YAML::EndSeq;
        break;
      }
      case Kind::kString:
        out << YAML::DoubleQuoted << value;
        break;
      default:
        out << value;
    }
  }
  if (!section.empty()) out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace muvie
