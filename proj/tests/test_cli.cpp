#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "json.hpp"
#include "muviecast/cli.hpp"
#include "muviecast/config.hpp"
#include "muviecast/image.hpp"
#include "muviecast/synthetic.hpp"
#include "temp_dir.hpp"

using namespace muvie;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new muvie::testing::TempDir;
    const fs::path w = dir_->path() / "weights";
    nn::save_archive(w / "vgg16_trim.mvcw", PerceptualNet::random(VggKind::kVgg16Trim, 3).to_archive());
    synthetic::CubeOptions opts;
    opts.width = 64;
    opts.height = 64;
    opts.views = 4;
    synthetic::RenderedScene rs = synthetic::make_cube_scene(opts);
    synthetic::quantize_images(rs.scene);
    write_scene(dir_->path() / "toy", rs.scene);
    write_image(dir_->path() / "style.png", synthetic::make_style_image(64, 64, 2));
    ::setenv("MUVIECAST_WEIGHTS_DIR", w.c_str(), 1);
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string path(const std::string& rel) { return (dir_->path() / rel).string(); }

  static int run(std::vector<std::string> args) {
    args.insert(args.begin(), "muviecast");
    return cli::run(args);
  }

  static muvie::testing::TempDir* dir_;
};

muvie::testing::TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST_F(CliTest, StylizeHappyPath) {
  const std::string out = path("out_stylize");
  ASSERT_EQ(run({"stylize", "--scene", path("toy"), "--style", path("style.png"), "--arch", "casmvsnet_unet",
                 "--epochs", "1", "--out", out, "-q"}),
            cli::kExitOk);
  const fs::path dir = fs::path(out) / "toy" / "style";
  for (int v = 0; v < 4; ++v) {
    char name[32];
    std::snprintf(name, sizeof name, "%08d.png", v);
    EXPECT_TRUE(fs::exists(dir / "stylized" / name)) << name;
  }
  EXPECT_TRUE(fs::exists(dir / "transfer.mvcw"));
  EXPECT_TRUE(fs::exists(dir / "config.yaml"));
  std::ifstream f(dir / "report.json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j["outputs"].size(), 4u);
  EXPECT_EQ(j["traces"]["total"].size(), 4u);
  EXPECT_EQ(j["arch"], "casmvsnet_unet");
}

TEST_F(CliTest, StylizeWithoutSceneIsAUsageError) {
  EXPECT_EQ(run({"stylize", "--style", path("style.png"), "-q"}), cli::kExitUsage);
}

TEST_F(CliTest, UnknownFlagOrVerbIsAUsageError) {
  EXPECT_EQ(run({"stylize", "--no-such-flag"}), cli::kExitUsage);
  EXPECT_EQ(run({"paint"}), cli::kExitUsage);
  EXPECT_EQ(run({}), cli::kExitUsage);
  EXPECT_EQ(run({"stylize", "--set", "loss.style"}), cli::kExitUsage);
  EXPECT_EQ(run({"stylize", "--epochs", "0", "--print-config"}), cli::kExitUsage);
}

TEST_F(CliTest, HelpExitsZero) { EXPECT_EQ(run({"--help"}), cli::kExitOk); }

TEST_F(CliTest, PrintConfigEmitsResolvedYaml) {
  ::testing::internal::CaptureStdout();
  ASSERT_EQ(run({"stylize", "--print-config", "--arch", "patchmatchnet_adain", "--set", "loss.style=12",
                 "--train.lr", "0.0005", "--epochs", "3"}),
            cli::kExitOk);
  const std::string yaml = ::testing::internal::GetCapturedStdout();
  std::ofstream(path("printed.yaml")) << yaml;
  const Config cfg = resolve_config(fs::path(path("printed.yaml")), {});
  EXPECT_EQ(cfg.arch, "patchmatchnet_adain");
  EXPECT_DOUBLE_EQ(cfg.weights.style, 12.0);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.0005);
  EXPECT_EQ(cfg.epochs, 3);
}

TEST_F(CliTest, EveryConfigKeyHasAFlag) {
  const Config defaults = resolve_config(std::nullopt, {});
  std::vector<std::string> args = {"stylize", "--print-config"};
  for (const auto& key : config_keys()) {
    args.push_back("--" + key);
    args.push_back(get_config_value(defaults, key));
  }
  ::testing::internal::CaptureStdout();
  const int code = run(args);
  const std::string yaml = ::testing::internal::GetCapturedStdout();
  ASSERT_EQ(code, cli::kExitOk);
  EXPECT_EQ(yaml, to_yaml(defaults));
}

TEST_F(CliTest, MissingWeightsIsARuntimeError) {
  EXPECT_EQ(run({"stylize", "--scene", path("toy"), "--style", path("style.png"), "--perceptual.weights_path",
                 path("nope.mvcw"), "-q"}),
            cli::kExitRuntime);
}

TEST_F(CliTest, AblateWritesOneDirectoryPerRun) {
  const std::string out = path("out_ablate");
  ASSERT_EQ(run({"ablate", "--losses", "content,style,imgeom,geometry3d", "--scene", path("toy"), "--style",
                 path("style.png"), "--epochs", "1", "--out", out, "-q"}),
            cli::kExitOk);
  const fs::path root = fs::path(out) / "toy" / "style" / "ablation";
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(root)) dirs += e.is_directory();
  EXPECT_EQ(dirs, 5u);
  for (const char* name : {"content", "style", "imgeom", "geometry3d", "combined"}) {
    std::ifstream f(root / name / "report.json");
    ASSERT_TRUE(f) << name;
    const auto j = nlohmann::json::parse(f);
    const auto active = j["active_terms"].get<std::vector<std::string>>();
    if (std::string(name) == "geometry3d") EXPECT_EQ(active, (std::vector<std::string>{"volume", "depth"}));
    else if (std::string(name) == "combined") EXPECT_EQ(active.size(), 5u);
    else EXPECT_EQ(active, std::vector<std::string>{name});
  }
}

TEST_F(CliTest, ColorAdjustAndEvalConsistency) {
  const std::string adjusted = path("adjusted");
  ASSERT_EQ(run({"color-adjust", "--style", path("style.png"), "--mode", "pre", path("toy/images"), adjusted, "-q"}),
            cli::kExitOk);
  EXPECT_EQ(list_images(adjusted).size(), 4u);
  EXPECT_EQ(run({"color-adjust", "--style", path("style.png"), "--mode", "off", path("toy/images"), adjusted, "-q"}),
            cli::kExitUsage);

  const std::string report = path("eval.json");
  ASSERT_EQ(run({"eval-consistency", "--scene", path("toy"), "--images", path("toy/images"), "--report", report,
                 "--set", "geometry.hypotheses=16,8,8", "-q"}),
            cli::kExitOk);
  std::ifstream f(report);
  const auto j = nlohmann::json::parse(f);
  EXPECT_NEAR(j["ratio"].get<double>(), 1.0, 1e-12);
  EXPECT_GT(j["images"]["pairs"].size(), 0u);

  EXPECT_EQ(run({"eval-consistency", "--scene", path("toy"), "--images", path("empty_dir"), "--report", report,
                 "-q"}),
            cli::kExitUsage);
}

TEST_F(CliTest, PretrainWritesCheckpoint) {
  const std::string out = path("out_pretrain");
  ASSERT_EQ(run({"pretrain", "--images", path("toy/images"), "--style", path("style.png"), "--set",
                 "pretrain.size=64", "--set", "pretrain.epochs=1", "--out", out, "-q"}),
            cli::kExitOk);
  EXPECT_TRUE(fs::exists(fs::path(out) / "pretrain" / "style" / "transfer.mvcw"));
  EXPECT_EQ(run({"pretrain", "--images", path("no_images"), "--style", path("style.png"), "-q"}), cli::kExitUsage);
}
