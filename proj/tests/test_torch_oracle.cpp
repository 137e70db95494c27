// Compares the perceptual extractor against torchvision on converted
// weights; data comes from torch_vgg_oracle.py.

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "muviecast/perceptual.hpp"

using namespace muvie;
namespace fs = std::filesystem;

namespace {

std::vector<double> read_f64(const fs::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) return {};
  std::vector<double> v(static_cast<std::size_t>(f.tellg()) / sizeof(double));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  return v;
}

fs::path oracle_dir() {
  const char* d = std::getenv("MUVIECAST_TORCH_ORACLE");
  return d ? fs::path(d) : fs::path();
}

}  // namespace

TEST(TorchOracle, TapFeaturesMatchTorchvision) {
  const fs::path dir = oracle_dir();
  if (dir.empty() || !fs::exists(dir / "image.f64")) GTEST_SKIP() << "oracle data not generated";
  Tensor image({3, 40, 48}, read_f64(dir / "image.f64"));
  for (VggKind kind : {VggKind::kVgg16Trim, VggKind::kVgg19Trim}) {
    const std::string name = vgg_name(kind);
    SCOPED_TRACE(name);
    const PerceptualNet net = PerceptualNet::load(kind, dir / (name + ".mvcw"));
    const auto& taps = vgg_tap_layers(kind);
    const FeatureSet feats = net.extract(ag::Var::constant(image), taps);
    const std::string arch = name.substr(0, 5);
    for (const auto& tap : taps) {
      const std::vector<double> ref = read_f64(dir / (arch + "_" + tap + ".f64"));
      const Tensor& got = feats.at(tap).value();
      ASSERT_EQ(got.numel(), ref.size()) << tap;
      double max_err = 0.0, max_ref = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        max_err = std::max(max_err, std::abs(got[i] - ref[i]));
        max_ref = std::max(max_ref, std::abs(ref[i]));
      }
      EXPECT_LT(max_err, 1e-9 * std::max(1.0, max_ref)) << tap;
    }
  }
}
