#include "muviecast/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "muviecast/error.hpp"
#include "muviecast/image.hpp"

namespace muvie {
namespace {

using losses::LossWeights;

double outer_weight(const LossWeights& w, const std::string& term) {
  if (term == "content") return w.content;
  if (term == "style") return w.style;
  if (term == "imgeom") return w.imgeom;
  if (term == "volume") return w.volume;
  if (term == "depth") return w.depth;
  if (term == "tv") return w.tv;
  if (term == "nnfm") return w.nnfm;
  throw ValidationError("unknown loss term '" + term + "'");
}

bool is_active(const std::vector<std::string>& terms, const std::string& t) {
  return std::find(terms.begin(), terms.end(), t) != terms.end();
}

std::vector<std::string> union_layers(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out = a;
  for (const auto& name : b)
    if (!is_active(out, name)) out.push_back(name);
  return out;
}

// Frozen targets shared by every step of a run.
struct Targets {
  std::vector<std::string> content_layers;
  std::vector<std::string> style_layers;
  std::string nnfm_layer;
  std::vector<std::string> extract_layers;  // for the stylized reference
  FeatureSet style;
};

Targets make_targets(const Config& cfg, const std::vector<std::string>& active, const PerceptualNet& net,
                     const Tensor& style) {
  Targets t;
  if (is_active(active, "content")) t.content_layers = cfg.taps.content_layers;
  if (is_active(active, "style")) t.style_layers = cfg.taps.style_layers;
  if (is_active(active, "nnfm")) {
    const auto& taps = cfg.taps.style_layers.empty() ? vgg_tap_layers(cfg.taps.backbone) : cfg.taps.style_layers;
    t.nnfm_layer = taps.back();
  }
  std::vector<std::string> style_side = t.style_layers;
  if (!t.nnfm_layer.empty() && !is_active(style_side, t.nnfm_layer)) style_side.push_back(t.nnfm_layer);
  t.extract_layers = union_layers(t.content_layers, style_side);
  if (!style_side.empty()) {
    ag::NoGradGuard guard;
    t.style = net.extract(ag::Var::constant(style), style_side);
  }
  return t;
}

// Perceptual and regularizer terms of one stylized reference.
void image_terms(const Targets& t, const Config& cfg, const std::vector<std::string>& active,
                 const PerceptualNet& net, const ag::Var& stylized, const FeatureSet* content_target,
                 const Tensor& input, losses::LossComponents& c) {
  if (!t.extract_layers.empty()) {
    const FeatureSet feats = net.extract(stylized, t.extract_layers);
    if (!t.content_layers.empty()) c.content = losses::content_loss(feats, *content_target, t.content_layers);
    if (!t.style_layers.empty())
      c.style = losses::style_loss(cfg.weights.style_kind, feats, t.style, t.style_layers);
    if (!t.nnfm_layer.empty()) c.nnfm = losses::nnfm_loss(feats.at(t.nnfm_layer), t.style.at(t.nnfm_layer));
  }
  if (is_active(active, "imgeom"))
    c.imgeom = losses::image_geometry_loss(ag::Var::constant(input), stylized, cfg.weights.sobel,
                                           cfg.weights.laplace, cfg.weights.canny);
  if (is_active(active, "tv")) c.tv = losses::tv_loss(stylized);
}

void record(RunReport& report, const losses::LossComponents& c, double total) {
  const std::pair<const char*, const ag::Var*> parts[] = {{"content", &c.content}, {"style", &c.style},
                                                          {"imgeom", &c.imgeom},   {"volume", &c.volume},
                                                          {"depth", &c.depth},     {"tv", &c.tv},
                                                          {"nnfm", &c.nnfm}};
  for (const auto& [name, var] : parts)
    if (is_active(report.active_terms, name)) report.traces[name].push_back(var->item());
  report.traces["total"].push_back(total);
}

void init_report(RunReport& report, const std::string& mode, const Config& cfg, const LossWeights& weights,
                 const Models& models) {
  report.mode = mode;
  report.arch = cfg.arch;
  report.scene = cfg.scene;
  report.style = cfg.style;
  for (const auto& term : loss_terms()) report.weights[term] = outer_weight(weights, term);
  report.active_terms = active_terms(weights);
  if (report.active_terms.empty()) throw ConfigError("every loss weight is zero; nothing to optimize");
  report.epochs = mode == "pretrain" ? cfg.pretrain_epochs : cfg.epochs;
  report.total_parameters = models.total_parameters();
  report.trainable_parameters = models.trainable_parameters();
  report.transfer_checksum_before = models.transfer->checksum();
  report.perceptual_checksum_before = models.perceptual->checksum();
  report.geometry_checksum_before = models.geometry ? models.geometry->checksum() : 0;
}

void finish_report(RunReport& report, const Models& models, long calls_before,
                   std::chrono::steady_clock::time_point start) {
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.transfer_checksum_after = models.transfer->checksum();
  report.perceptual_checksum_after = models.perceptual->checksum();
  report.geometry_checksum_after = models.geometry ? models.geometry->checksum() : 0;
  report.backend_calls = models.geometry ? models.geometry->calls() - calls_before : 0;
  const auto& total = report.traces["total"];
  const std::size_t n = static_cast<std::size_t>(report.steps_per_epoch);
  for (int e = 0; e < report.epochs; ++e) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += total[e * n + i];
    report.epoch_total.push_back(s / static_cast<double>(n));
  }
}

// Accumulates batch_size samples per optimizer step.
class Stepper {
 public:
  Stepper(const Config& cfg, TransferNet& net)
      : opt_(nn::make_optimizer(cfg.optimizer, net.params().vars(), cfg.lr)), batch_(cfg.batch_size) {
    opt_->zero_grad();
  }

  double accumulate(const ag::Var& total) {
    const double value = total.item();
    if (!std::isfinite(value)) throw NumericError("total loss is not finite");
    ag::backward(batch_ == 1 ? total : ag::affine(total, 1.0 / batch_, 0.0));
    if (++pending_ == batch_) flush();
    return value;
  }

  void flush() {
    if (pending_ == 0) return;
    opt_->step();
    opt_->zero_grad();
    pending_ = 0;
  }

 private:
  std::unique_ptr<nn::Optimizer> opt_;
  int batch_;
  int pending_ = 0;
};

Tensor color_adjusted(const Tensor& image, const ColorMap& map) { return apply_color_map(image, map, true); }

Scene pre_adjust(const Scene& scene, const Tensor& style, const Config& cfg) {
  if (cfg.color != ColorAdjustMode::kPre) return scene;
  const ColorMap map = fit_set_color_map(scene.images, style, cfg.color_epsilon);
  Scene out = scene;
  for (Tensor& img : out.images) img = color_adjusted(img, map);
  return out;
}

std::string hex(std::uint64_t v) { return nn::checksum_hex(v); }

}  // namespace

std::size_t Models::total_parameters() const {
  std::size_t n = transfer->parameter_count();
  n += perceptual->parameter_count();
  if (geometry) n += geometry->parameter_count();
  return n;
}

Models build_models(const Config& cfg) {
  cfg.validate();
  Models m;
  const std::string file = vgg_name(cfg.taps.backbone) + ".mvcw";
  m.perceptual = std::make_unique<PerceptualNet>(
      PerceptualNet::load(cfg.taps.backbone, resolve_weights_path(cfg.perceptual_weights, file)));
  m.geometry = make_backend(cfg.geometry);
  if (cfg.transfer == TransferKind::kUnet)
    m.transfer = make_unet(cfg.seed);
  else
    m.transfer = make_adain(cfg.seed, *m.perceptual, cfg.adain_eps);
  if (!cfg.transfer_init.empty()) m.transfer->load(cfg.transfer_init);
  return m;
}

const std::vector<std::string>& loss_terms() {
  static const std::vector<std::string> terms = {"content", "style", "imgeom", "volume", "depth", "tv", "nnfm"};
  return terms;
}

std::vector<std::string> active_terms(const LossWeights& weights) {
  std::vector<std::string> out;
  for (const auto& term : loss_terms()) {
    if (outer_weight(weights, term) == 0.0) continue;
    if (term == "imgeom" && weights.sobel == 0.0 && weights.laplace == 0.0 && weights.canny == 0.0) continue;
    out.push_back(term);
  }
  return out;
}

std::string RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["arch"] = arch;
  j["scene"] = scene;
  j["style"] = style;
  j["weights"] = weights;
  j["active_terms"] = active_terms;
  j["epochs"] = epochs;
  j["steps_per_epoch"] = steps_per_epoch;
  j["traces"] = traces;
  j["reference_views"] = reference_views;
  j["epoch_total"] = epoch_total;
  j["wall_seconds"] = wall_seconds;
  j["parameters"] = {{"total", total_parameters}, {"trainable", trainable_parameters}};
  j["checksums"] = {
      {"transfer", {{"before", hex(transfer_checksum_before)}, {"after", hex(transfer_checksum_after)}}},
      {"perceptual", {{"before", hex(perceptual_checksum_before)}, {"after", hex(perceptual_checksum_after)}}},
      {"geometry", {{"before", hex(geometry_checksum_before)}, {"after", hex(geometry_checksum_after)}}}};
  j["backend_calls"] = backend_calls;
  j["outputs"] = outputs;
  j["checkpoint"] = checkpoint;
  return j.dump(2);
}

void RunReport::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw LoadError("cannot write " + path.string());
  f << to_json() << "\n";
}

RunReport train(const Scene& raw_scene, const Tensor& raw_style, const Config& cfg, Models& models,
                const StepCallback& on_step) {
  cfg.validate();
  validate_scene(raw_scene);
  const Scene scene = pre_adjust(raw_scene, raw_style, cfg);
  const LossWeights& weights = cfg.weights;

  RunReport report;
  init_report(report, "train", cfg, weights, models);
  const auto start = std::chrono::steady_clock::now();
  const long calls_before = models.geometry->calls();

  const bool geometric = is_active(report.active_terms, "volume") || is_active(report.active_terms, "depth");
  const int window = std::min(cfg.window, scene.size());
  if (geometric && window < 2) throw ValidationError("geometry losses need a scene with at least 2 views");

  PairList pairs;
  if (!cfg.pairs.empty()) pairs = read_pair_file(cfg.pairs);
  const PairList* pair_ptr = cfg.pairs.empty() ? nullptr : &pairs;

  int stride = models.transfer->stride();
  if (geometric) stride = std::max(stride, models.geometry->stride());
  std::vector<MultiViewSample> samples;
  for (int i = 0; i < scene.size(); ++i) {
    const std::vector<int> sources = window >= 2 ? select_neighbors(scene, i, window, pair_ptr) : std::vector<int>{};
    MultiViewSample s = scale_sample(make_sample(scene, i, sources), cfg.resolution, stride);
    if (s.height() % stride != 0 || s.width() % stride != 0)
      throw ValidationError("training size " + std::to_string(s.width()) + "x" + std::to_string(s.height()) +
                            " must be divisible by " + std::to_string(stride) + "; adjust data.resolution");
    samples.push_back(std::move(s));
  }
  const int h = samples[0].height(), w = samples[0].width();
  const Tensor style = resize_bilinear(raw_style, h, w);

  const PerceptualNet& vgg = *models.perceptual;
  TransferNet& net = *models.transfer;
  net.set_style(style);
  const Targets targets = make_targets(cfg, report.active_terms, vgg, style);

  // Per-view frozen inputs: content targets, encoder features, reference depths.
  std::vector<FeatureSet> content(scene.size());
  std::vector<std::optional<ag::Var>> encoded(scene.size());
  std::vector<DepthEstimate> reference(scene.size());
  {
    ag::NoGradGuard guard;
    for (int i = 0; i < scene.size(); ++i) {
      const Tensor& img = samples[i].ref_image;
      if (!targets.content_layers.empty()) content[i] = vgg.extract(ag::Var::constant(img), targets.content_layers);
      encoded[i] = net.encode(img);
      if (geometric) reference[i] = models.geometry->estimate(samples[i]);
    }
  }

  Stepper stepper(cfg, net);
  report.steps_per_epoch = scene.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < scene.size(); ++i) {
      const MultiViewSample& s = samples[i];
      auto stylize = [&](const Tensor& img, int view) {
        return net.forward(ag::Var::constant(img), encoded[view] ? &*encoded[view] : nullptr);
      };
      const ag::Var out_ref = stylize(s.ref_image, i);

      losses::LossComponents c;
      image_terms(targets, cfg, report.active_terms, vgg, out_ref, &content[i], s.ref_image, c);
      if (geometric) {
        std::vector<ag::Var> out_src;
        for (std::size_t k = 0; k < s.source_images.size(); ++k)
          out_src.push_back(stylize(s.source_images[k], s.source_indices[k]));
        const DepthEstimate target = models.geometry->estimate(s, out_ref, out_src);
        if (weights.volume != 0.0) c.volume = losses::volume_loss(reference[i], target);
        if (weights.depth != 0.0) c.depth = losses::depth_loss(reference[i], target);
      }
      const ag::Var total = losses::total_loss(c, weights);
      const double value = stepper.accumulate(total);
      record(report, c, value);
      report.reference_views.push_back(i);
      if (on_step) on_step(report);
    }
    stepper.flush();
  }
  finish_report(report, models, calls_before, start);
  return report;
}

Tensor transform_padded(const TransferNet& net, const Tensor& image) {
  const int stride = net.stride();
  const int h = image.dim(1), w = image.dim(2);
  const int ph = (h + stride - 1) / stride * stride, pw = (w + stride - 1) / stride * stride;
  if (ph == h && pw == w) return net.transform({image})[0];
  Tensor padded({3, ph, pw});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) padded.at(c, y, x) = image.at(c, std::min(y, h - 1), std::min(x, w - 1));
  const Tensor out = net.transform({padded})[0];
  Tensor cropped({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) cropped.at(c, y, x) = out.at(c, y, x);
  return cropped;
}

std::vector<Tensor> stylize_all(const Scene& raw_scene, const Tensor& style, const Config& cfg,
                                const Models& models) {
  validate_scene(raw_scene);
  const Scene scene = pre_adjust(raw_scene, style, cfg);
  models.transfer->set_style(resize_bilinear(style, scene.height(), scene.width()));
  std::vector<Tensor> out;
  for (const Tensor& img : scene.images) out.push_back(transform_padded(*models.transfer, img));
  if (cfg.color == ColorAdjustMode::kPost) {
    const ColorMap map = fit_set_color_map(out, style, cfg.color_epsilon);
    for (Tensor& img : out) img = color_adjusted(img, map);
  }
  return out;
}

RunReport pretrain_transfernet(const std::filesystem::path& folder, const Tensor& raw_style, const Config& cfg,
                               Models& models, const StepCallback& on_step) {
  cfg.validate();
  if (!std::filesystem::is_directory(folder)) throw ValidationError("not a directory: " + folder.string());
  const auto files = list_images(folder);
  if (files.empty()) throw ValidationError("no images in " + folder.string());

  LossWeights weights;
  weights.content = cfg.weights.content;
  weights.style = cfg.weights.style;
  weights.style_kind = cfg.weights.style_kind;
  weights.imgeom = weights.volume = weights.depth = 0.0;

  RunReport report;
  init_report(report, "pretrain", cfg, weights, models);
  report.scene = folder.string();
  const auto start = std::chrono::steady_clock::now();
  const long calls_before = models.geometry ? models.geometry->calls() : 0;

  const int size = cfg.pretrain_size;
  std::vector<Tensor> images;
  for (const auto& f : files) images.push_back(resize_bilinear(read_image(f), size, size));
  const Tensor style = resize_bilinear(raw_style, size, size);

  const PerceptualNet& vgg = *models.perceptual;
  TransferNet& net = *models.transfer;
  net.set_style(style);
  Config run_cfg = cfg;
  run_cfg.weights = weights;
  const Targets targets = make_targets(run_cfg, report.active_terms, vgg, style);

  std::vector<FeatureSet> content(images.size());
  std::vector<std::optional<ag::Var>> encoded(images.size());
  {
    ag::NoGradGuard guard;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!targets.content_layers.empty())
        content[i] = vgg.extract(ag::Var::constant(images[i]), targets.content_layers);
      encoded[i] = net.encode(images[i]);
    }
  }

  Stepper stepper(cfg, net);
  report.steps_per_epoch = static_cast<int>(images.size());
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      const ag::Var out = net.forward(ag::Var::constant(images[i]), encoded[i] ? &*encoded[i] : nullptr);
      losses::LossComponents c;
      image_terms(targets, run_cfg, report.active_terms, vgg, out, &content[i], images[i], c);
      const double value = stepper.accumulate(losses::total_loss(c, weights));
      record(report, c, value);
      report.reference_views.push_back(static_cast<int>(i));
      if (on_step) on_step(report);
    }
    stepper.flush();
  }
  finish_report(report, models, calls_before, start);
  return report;
}

const std::vector<std::string>& ablation_groups() {
  static const std::vector<std::string> groups = {"content", "style", "imgeom", "geometry3d"};
  return groups;
}

LossWeights ablation_weights(const LossWeights& base, const std::set<std::string>& groups) {
  for (const auto& g : groups)
    if (!is_active(ablation_groups(), g))
      throw ConfigError("unknown ablation group '" + g + "' (expected content, style, imgeom or geometry3d)");
  LossWeights w = base;
  w.tv = w.nnfm = 0.0;
  if (!groups.count("content")) w.content = 0.0;
  if (!groups.count("style")) w.style = 0.0;
  if (!groups.count("imgeom")) w.imgeom = 0.0;
  if (!groups.count("geometry3d")) w.volume = w.depth = 0.0;
  return w;
}

std::map<std::string, RunReport> ablate(const Scene& scene, const Tensor& style, const Config& cfg,
                                        const std::set<std::string>& enabled, const AblationCallback& on_run) {
  if (enabled.empty()) throw ConfigError("ablation needs at least one loss group");
  std::vector<std::pair<std::string, std::set<std::string>>> runs;
  for (const auto& g : ablation_groups())
    if (enabled.count(g)) runs.push_back({g, {g}});
  ablation_weights(cfg.weights, enabled);  // rejects unknown names
  if (enabled.size() > 1) runs.push_back({"combined", enabled});

  std::map<std::string, RunReport> reports;
  for (const auto& [name, groups] : runs) {
    Config run_cfg = cfg;
    run_cfg.weights = ablation_weights(cfg.weights, groups);
    Models models = build_models(run_cfg);
    RunReport report = train(scene, style, run_cfg, models);
    if (on_run) on_run(name, run_cfg, models, report);
    reports[name] = std::move(report);
  }
  return reports;
}

std::vector<std::string> write_stylized(const std::filesystem::path& dir, const Scene& scene,
                                        const std::vector<Tensor>& images) {
  if (images.size() != scene.images.size())
    throw ValidationError("expected " + std::to_string(scene.size()) + " stylized images, got " +
                          std::to_string(images.size()));
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%08d.png", scene.view_ids[i]);
    const auto p = dir / name;
    write_image(p, images[i]);
    paths.push_back(p.string());
  }
  return paths;
}

}  // namespace muvie
