#include "muviecast/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "json.hpp"
#include "muviecast/error.hpp"
#include "muviecast/image.hpp"
#include "muviecast/trainer.hpp"

namespace muvie::cli {
namespace {

namespace fs = std::filesystem;

// Options shared by every verb that resolves a configuration.
struct ConfigOptions {
  std::string config;
  std::map<std::string, std::string> keys;  // --<dotted key>
  std::vector<std::string> sets;            // --set key=value
  std::vector<std::pair<std::string, std::string>> named;  // dedicated flag -> key
  std::map<std::string, std::string> named_values;
  bool print_config = false;
  bool quiet = false;
};

void add_config_options(CLI::App* app, ConfigOptions& o) {
  app->add_option("--config", o.config, "YAML configuration file");
  o.named = {{"scene", "data.scene"},  {"style", "data.style"},          {"arch", "arch"},
             {"out", "data.out"},      {"epochs", "train.epochs"},       {"window", "train.window"},
             {"color-adjust", "color.mode"}, {"seed", "train.seed"},     {"device", "train.device"}};
  for (const auto& [flag, key] : o.named)
    app->add_option("--" + flag, o.named_values[flag], config_key_help(key));
  for (const auto& key : config_keys()) {
    if (key == "arch") continue;
    app->add_option("--" + key, o.keys[key], config_key_help(key))->group("");
  }
  app->add_option("--set", o.sets,
                  "override any key, key=value (repeatable, applied last); every key also has a --<key> "
                  "flag, see --print-config for the full list");
  app->add_flag("--print-config", o.print_config, "print the resolved configuration and exit");
  app->add_flag("-q,--quiet", o.quiet, "no progress output");
}

Config resolve(const CLI::App* app, const ConfigOptions& o) {
  Overrides ov;
  for (const auto& key : config_keys())
    if (key != "arch" && app->count("--" + key)) ov.emplace_back(key, o.keys.at(key));
  for (const auto& [flag, key] : o.named)
    if (app->count("--" + flag)) ov.emplace_back(key, o.named_values.at(flag));
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    ov.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  std::optional<fs::path> file;
  if (!o.config.empty()) file = o.config;
  return resolve_config(file, ov);
}

std::string dir_name(const std::string& p) {
  fs::path path(p);
  if (path.filename().empty()) path = path.parent_path();
  return path.filename().string();
}

std::string style_name(const std::string& p) { return fs::path(p).stem().string(); }

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required ") + flag);
}

StepCallback progress(bool quiet, const std::string& tag, int epochs) {
  if (quiet) return {};
  return [tag, epochs](const RunReport& r) {
    const std::size_t n = r.traces.at("total").size();
    const int per = std::max(1, r.steps_per_epoch);
    std::fprintf(stderr, "[%s] epoch %zu/%d step %zu/%d total=%.6g\n", tag.c_str(), (n - 1) / per + 1, epochs,
                 (n - 1) % per + 1, per, r.traces.at("total").back());
  };
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw LoadError("cannot write " + p.string());
  f << text;
}

std::vector<Tensor> read_folder(const fs::path& dir, std::vector<fs::path>* files = nullptr) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  const auto paths = list_images(dir);
  if (paths.empty()) throw ValidationError("no images in " + dir.string());
  std::vector<Tensor> out;
  for (const auto& p : paths) out.push_back(read_image(p));
  if (files) *files = paths;
  return out;
}

int do_stylize(const Config& cfg, bool quiet) {
  require(cfg.scene, "--scene");
  require(cfg.style, "--style");
  const Scene scene = load_scene(cfg.scene);
  const Tensor style = read_image(cfg.style);
  Models models = build_models(cfg);
  RunReport report = train(scene, style, cfg, models, progress(quiet, "stylize", cfg.epochs));
  const fs::path dir = fs::path(cfg.out) / dir_name(cfg.scene) / style_name(cfg.style);
  report.outputs = write_stylized(dir / "stylized", scene, stylize_all(scene, style, cfg, models));
  report.checkpoint = (dir / "transfer.mvcw").string();
  models.transfer->save(report.checkpoint);
  report.write(dir / "report.json");
  write_text(dir / "config.yaml", to_yaml(cfg));
  if (!quiet) std::fprintf(stderr, "wrote %s\n", dir.string().c_str());
  return kExitOk;
}

int do_pretrain(const Config& cfg, const std::string& images, bool quiet) {
  require(images, "--images");
  require(cfg.style, "--style");
  const Tensor style = read_image(cfg.style);
  Models models = build_models(cfg);
  RunReport report =
      pretrain_transfernet(images, style, cfg, models, progress(quiet, "pretrain", cfg.pretrain_epochs));
  const fs::path dir = fs::path(cfg.out) / "pretrain" / style_name(cfg.style);
  report.checkpoint = (dir / "transfer.mvcw").string();
  models.transfer->save(report.checkpoint);
  report.write(dir / "report.json");
  write_text(dir / "config.yaml", to_yaml(cfg));
  if (!quiet) std::fprintf(stderr, "wrote %s\n", report.checkpoint.c_str());
  return kExitOk;
}

int do_ablate(const Config& cfg, const std::string& losses_arg, bool quiet) {
  require(cfg.scene, "--scene");
  require(cfg.style, "--style");
  std::set<std::string> enabled;
  std::stringstream ss(losses_arg);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) enabled.insert(item);
  if (enabled.empty()) throw ConfigError("--losses needs at least one of content, style, imgeom, geometry3d");
  ablation_weights(cfg.weights, enabled);

  const Scene scene = load_scene(cfg.scene);
  const Tensor style = read_image(cfg.style);
  const fs::path root = fs::path(cfg.out) / dir_name(cfg.scene) / style_name(cfg.style) / "ablation";
  const auto runs = ablate(scene, style, cfg, enabled,
                           [&](const std::string& name, const Config& run_cfg, const Models& models, RunReport& report) {
                             const fs::path dir = root / name;
                             report.outputs =
                                 write_stylized(dir / "stylized", scene, stylize_all(scene, style, run_cfg, models));
                             report.checkpoint = (dir / "transfer.mvcw").string();
                             models.transfer->save(report.checkpoint);
                             report.write(dir / "report.json");
                             if (!quiet) std::fprintf(stderr, "[ablate] %s done\n", name.c_str());
                           });
  if (!quiet) std::fprintf(stderr, "wrote %zu runs under %s\n", runs.size(), root.string().c_str());
  return kExitOk;
}

int do_color_adjust(const Config& cfg, const std::string& mode, const std::string& in_dir,
                    const std::string& out_dir, bool quiet) {
  require(cfg.style, "--style");
  if (parse_color_adjust_mode(mode) == ColorAdjustMode::kOff) throw ConfigError("--mode must be pre or post");
  std::vector<fs::path> files;
  const std::vector<Tensor> images = read_folder(in_dir, &files);
  const Tensor style = read_image(cfg.style);
  const ColorMap map = fit_set_color_map(images, style, cfg.color_epsilon);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < images.size(); ++i)
    write_image(fs::path(out_dir) / files[i].filename().replace_extension(".png"), apply_color_map(images[i], map));
  if (!quiet) std::fprintf(stderr, "wrote %zu images to %s\n", images.size(), out_dir.c_str());
  return kExitOk;
}

nlohmann::ordered_json report_json(const ConsistencyReport& r) {
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const PairScore& p : r.pairs)
    pairs.push_back({{"i", p.i}, {"j", p.j}, {"rmse", p.rmse}, {"valid_fraction", p.valid_fraction},
                     {"flagged", p.flagged}});
  return {{"mean_rmse", r.mean_rmse}, {"median_rmse", r.median_rmse}, {"valid_pairs", r.valid_pairs},
          {"pairs", pairs}};
}

int do_eval(const Config& cfg, const std::string& images_dir, const std::string& baseline_dir,
            const std::string& report_path, bool quiet) {
  require(cfg.scene, "--scene");
  require(images_dir, "--images");
  require(report_path, "--report");
  Scene scene = load_scene(cfg.scene);
  const std::vector<Tensor> images = read_folder(images_dir);
  if (!baseline_dir.empty()) {
    std::vector<Tensor> baseline = read_folder(baseline_dir);
    if (baseline.size() != scene.images.size())
      throw ValidationError("baseline has " + std::to_string(baseline.size()) + " images, scene has " +
                            std::to_string(scene.size()));
    scene.images = std::move(baseline);
  }
  const auto backend = make_backend(cfg.geometry);
  PairList pairs;
  if (!cfg.pairs.empty()) pairs = read_pair_file(cfg.pairs);
  const ConsistencyOptions opts{cfg.occlusion_threshold, cfg.normalize};
  const SetComparison cmp = compare_sets(scene, images, *backend, cfg.depth_source, cfg.window, opts,
                                         cfg.pairs.empty() ? nullptr : &pairs);
  nlohmann::ordered_json j;
  j["depth_source"] = depth_source_name(cfg.depth_source);
  j["occlusion_threshold"] = cfg.occlusion_threshold;
  j["normalize"] = cfg.normalize;
  j["baseline"] = report_json(cmp.input);
  j["images"] = report_json(cmp.stylized);
  j["ratio"] = cmp.ratio;
  write_text(fs::absolute(report_path), j.dump(2) + "\n");
  if (!quiet) std::fprintf(stderr, "ratio %.4f (images %.4f / baseline %.4f)\n", cmp.ratio,
                           cmp.stylized.mean_rmse, cmp.input.mean_rmse);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Multi-view consistent style transfer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help including every configuration key");

  ConfigOptions stylize_o, pretrain_o, ablate_o, color_o, eval_o;
  auto* stylize = app.add_subcommand("stylize", "train on a scene and write stylized views");
  add_config_options(stylize, stylize_o);

  auto* pretrain = app.add_subcommand("pretrain", "pretrain the transfer network on an image folder");
  add_config_options(pretrain, pretrain_o);
  std::string images_folder;
  pretrain->add_option("--images", images_folder, "folder of training images");

  auto* ablate = app.add_subcommand("ablate", "one run per loss group plus the combined run");
  add_config_options(ablate, ablate_o);
  std::string losses_arg = "content,style,imgeom,geometry3d";
  ablate->add_option("--losses", losses_arg, "comma separated subset of content,style,imgeom,geometry3d")
      ->capture_default_str();

  auto* color = app.add_subcommand("color-adjust", "match image colors to a style image");
  add_config_options(color, color_o);
  std::string mode = "pre", in_dir, out_dir;
  color->add_option("--mode", mode, "pre or post")->capture_default_str();
  color->add_option("in_dir", in_dir, "input images")->required();
  color->add_option("out_dir", out_dir, "output folder")->required();

  auto* eval = app.add_subcommand("eval-consistency", "depth-guided cross-view consistency of an image set");
  add_config_options(eval, eval_o);
  std::string eval_images, baseline, report_path;
  eval->add_option("--images", eval_images, "images to score, one per scene view in view order");
  eval->add_option("--baseline", baseline, "reference set (default: the scene's own images)");
  eval->add_option("--report", report_path, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::map<CLI::App*, ConfigOptions*> opts = {
      {stylize, &stylize_o}, {pretrain, &pretrain_o}, {ablate, &ablate_o}, {color, &color_o}, {eval, &eval_o}};
  const ConfigOptions& o = *opts.at(sub);
  try {
    const Config cfg = resolve(sub, o);
    if (o.print_config) {
      std::cout << to_yaml(cfg);
      return kExitOk;
    }
    if (sub == stylize) return do_stylize(cfg, o.quiet);
    if (sub == pretrain) return do_pretrain(cfg, images_folder, o.quiet);
    if (sub == ablate) return do_ablate(cfg, losses_arg, o.quiet);
    if (sub == color) return do_color_adjust(cfg, mode, in_dir, out_dir, o.quiet);
    return do_eval(cfg, eval_images, baseline, report_path, o.quiet);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), sub->help().c_str());
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace muvie::cli
