// Writes seeded stand-in weights and synthetic scenes for offline use.

#include <CLI11.hpp>

#include <cstdio>

#include "muviecast/error.hpp"
#include "muviecast/geometry.hpp"
#include "muviecast/image.hpp"
#include "muviecast/perceptual.hpp"
#include "muviecast/synthetic.hpp"

namespace fs = std::filesystem;
using namespace muvie;

int main(int argc, char** argv) {
  CLI::App app{"Generate weights archives and synthetic scenes"};
  app.require_subcommand(1);

  auto* weights = app.add_subcommand("weights", "seeded vgg16_trim / vgg19_trim / plane-sweep archives");
  std::string weights_out;
  std::uint64_t seed = 7;
  weights->add_option("--out", weights_out, "output directory")->required();
  weights->add_option("--seed", seed, "initialization seed")->capture_default_str();

  auto* scene = app.add_subcommand("toy-scene", "textured cube scene plus a style image");
  std::string scene_out;
  synthetic::CubeOptions cube;
  unsigned style_seed = 1;
  scene->add_option("--out", scene_out, "output directory")->required();
  scene->add_option("--width", cube.width)->capture_default_str();
  scene->add_option("--height", cube.height)->capture_default_str();
  scene->add_option("--views", cube.views)->capture_default_str();
  scene->add_option("--style-seed", style_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (weights->parsed()) {
      const fs::path dir = weights_out;
      for (VggKind kind : {VggKind::kVgg16Trim, VggKind::kVgg19Trim})
        nn::save_archive(dir / (vgg_name(kind) + ".mvcw"), PerceptualNet::random(kind, seed).to_archive());
      for (const char* preset : {"casmvsnet", "patchmatchnet"}) {
        BackendSpec spec;
        spec.preset = preset;
        nn::save_archive(dir / (std::string("plane_sweep_") + preset + ".mvcw"),
                         PlaneSweepBackend(spec).to_archive());
      }
      std::printf("wrote weights to %s\n", dir.string().c_str());
    } else {
      const fs::path dir = scene_out;
      synthetic::RenderedScene rs = synthetic::make_cube_scene(cube);
      synthetic::quantize_images(rs.scene);
      write_scene(dir / "scene", rs.scene);
      write_image(dir / "style.png", synthetic::make_style_image(cube.height, cube.width, style_seed));
      std::printf("wrote %d views to %s\n", rs.scene.size(), (dir / "scene").string().c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
