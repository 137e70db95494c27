#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "muviecast/error.hpp"
#include "muviecast/transfer_net.hpp"
#include "temp_dir.hpp"

namespace {

using muvie::Tensor;
using muvie::ag::Var;
namespace ag = muvie::ag;

const muvie::PerceptualNet& encoder() {
  static const auto net = muvie::PerceptualNet::random(muvie::VggKind::kVgg19Trim, 19);
  return net;
}

struct Moments {
  std::vector<double> mean, std;
};

// Population moments per channel, computed independently of ops.cpp.
Moments moments(const Tensor& t) {
  const int c = t.dim(0);
  const std::size_t hw = t.numel() / c;
  Moments m{std::vector<double>(c), std::vector<double>(c)};
  for (int ch = 0; ch < c; ++ch) {
    long double s = 0, sq = 0;
    for (std::size_t i = 0; i < hw; ++i) s += t[ch * hw + i];
    const long double mu = s / hw;
    for (std::size_t i = 0; i < hw; ++i) sq += (t[ch * hw + i] - mu) * (t[ch * hw + i] - mu);
    m.mean[ch] = static_cast<double>(mu);
    m.std[ch] = static_cast<double>(std::sqrt(sq / hw));
  }
  return m;
}

// Central differences on a sample of every trainable tensor.
double network_fd_error(const muvie::TransferNet& net, const Tensor& image,
                        const Var* encoded, int per_tensor, double h) {
  std::mt19937_64 rng(9);
  const Tensor probe = muvie::testing::random_tensor(image.shape(), rng);
  auto loss = [&] { return ag::mean(ag::mul_const(net.forward(Var::constant(image), encoded), probe)); };
  auto params = net.params().vars();
  for (auto& p : params) p.zero_grad();
  ag::backward(loss());
  double diff_sq = 0.0, ref_sq = 0.0;
  for (auto& p : params) {
    std::uniform_int_distribution<std::size_t> pick(0, p.numel() - 1);
    for (int k = 0; k < per_tensor; ++k) {
      const std::size_t j = pick(rng);
      const double analytic = p.grad()[j];
      const double orig = p.value()[j];
      ag::NoGradGuard guard;
      p.mutable_value()[j] = orig + h;
      const double up = loss().item();
      p.mutable_value()[j] = orig - h;
      const double down = loss().item();
      p.mutable_value()[j] = orig;
      const double numeric = (up - down) / (2 * h);
      diff_sq += (analytic - numeric) * (analytic - numeric);
      ref_sq += numeric * numeric;
    }
  }
  return std::sqrt(diff_sq / ref_sq);
}

TEST(Unet, ShapeAndRange) {
  const auto net = muvie::make_unet(1);
  std::mt19937_64 rng(1);
  for (auto [h, w] : {std::pair{32, 32}, std::pair{40, 56}}) {
    const Tensor img = muvie::testing::random_tensor({3, h, w}, rng, 0.0, 1.0);
    const auto out = net->transform({img});
    ASSERT_EQ(out[0].shape(), img.shape());
    for (double v : out[0].span()) ASSERT_TRUE(v > 0.0 && v < 1.0);
  }
  EXPECT_THROW(net->transform({Tensor({3, 36, 32})}), muvie::ValidationError);
  EXPECT_THROW(net->transform({Tensor({3, 32, 32}), Tensor({3, 40, 32})}), muvie::ValidationError);
}

TEST(Unet, ParameterBudgetAndDeterminism) {
  const auto a = muvie::make_unet(5);
  const auto b = muvie::make_unet(5);
  EXPECT_NEAR(a->parameter_count() / 1e6, 1.7, 0.17);
  EXPECT_EQ(a->checksum(), b->checksum());
  EXPECT_NE(a->checksum(), muvie::make_unet(6)->checksum());
  std::mt19937_64 rng(2);
  const Tensor img = muvie::testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const auto x = a->transform({img})[0];
  const auto y = a->transform({img})[0];
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(x[i], y[i]);
}

TEST(Unet, ParameterGradientsMatchFiniteDifferences) {
  const auto net = muvie::make_unet(3);
  std::mt19937_64 rng(4);
  const Tensor img = muvie::testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  EXPECT_LT(network_fd_error(*net, img, nullptr, 2, 1e-5), 1e-2);
}

TEST(Unet, SaveLoadRoundTrip) {
  muvie::testing::TempDir dir;
  const auto a = muvie::make_unet(7);
  a->save(dir.path() / "unet.mvcw");
  const auto b = muvie::make_unet(8);
  b->load(dir.path() / "unet.mvcw");
  EXPECT_EQ(a->checksum(), b->checksum());
  const auto adain = muvie::make_adain(1, encoder());
  EXPECT_THROW(adain->load(dir.path() / "unet.mvcw"), muvie::LoadError);
}

TEST(Adain, DecoderBudgetAndEncoderKind) {
  const auto net = muvie::make_adain(1, encoder());
  EXPECT_NEAR(net->parameter_count() / 1e6, 3.5, 0.35);
  const auto vgg16 = muvie::PerceptualNet::random(muvie::VggKind::kVgg16Trim, 1);
  EXPECT_THROW(muvie::make_adain(1, vgg16), muvie::ConfigError);
}

TEST(Adain, NeedsStyleAndKeepsShape) {
  const auto net = muvie::make_adain(2, encoder());
  std::mt19937_64 rng(5);
  const Tensor img = muvie::testing::random_tensor({3, 32, 48}, rng, 0.0, 1.0);
  EXPECT_THROW(net->transform({img}), muvie::ValidationError);
  net->set_style(muvie::testing::random_tensor({3, 64, 40}, rng, 0.0, 1.0));
  EXPECT_EQ(net->transform({img})[0].shape(), img.shape());
}

TEST(Adain, SameStyleAndContentIsIdentityOnFeatures) {
  std::mt19937_64 rng(6);
  const Tensor img = muvie::testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const Var f = encoder().extract(Var::constant(img), {"relu4_1"}).maps[0];
  const Var mapped = muvie::adain_map(f, f);
  const Moments m = moments(f.value());
  const std::size_t hw = f.numel() / f.dim(0);
  for (std::size_t i = 0; i < f.numel(); ++i) {
    // Dead channels (sigma below the floor) collapse to their mean.
    if (m.std[i / hw] <= 1e-5) continue;
    ASSERT_NEAR(mapped.value()[i], f.value()[i], 1e-6);
  }
}

TEST(Adain, DecoderGradientsMatchFiniteDifferences) {
  const auto net = muvie::make_adain(3, encoder());
  std::mt19937_64 rng(7);
  net->set_style(muvie::testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0));
  const Tensor img = muvie::testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const auto encoded = net->encode(img);
  ASSERT_TRUE(encoded.has_value());
  EXPECT_LT(network_fd_error(*net, img, &*encoded, 3, 1e-5), 1e-2);
}

TEST(AdainMap, IdentityWhenStatisticsMatch) {
  std::mt19937_64 rng(8);
  const Tensor x = muvie::testing::random_tensor({4, 8, 8}, rng);
  const Var out = muvie::adain_map(Var::constant(x), Var::constant(x));
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_NEAR(out.value()[i], x[i], 1e-6);
}

TEST(AdainMap, ZeroContentTakesStyleMean) {
  std::mt19937_64 rng(9);
  Tensor style = muvie::testing::random_tensor({1, 6, 6}, rng);
  const Moments ms = moments(style);
  for (double& v : style.span()) v += 2.0 - ms.mean[0];
  const Var out = muvie::adain_map(Var::constant(Tensor({1, 8, 8})), Var::constant(style));
  for (double v : out.value().span()) ASSERT_NEAR(v, 2.0, 1e-12);
}

TEST(AdainMap, TransfersStyleMoments) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor content = muvie::testing::random_tensor({4, 8, 8}, rng, -3.0, 3.0);
    Tensor style = muvie::testing::random_tensor({4, 5, 7}, rng, -1.0, 4.0);
    const Var out = muvie::adain_map(Var::constant(content), Var::constant(style));
    const Moments mo = moments(out.value()), ms = moments(style), mc = moments(content);
    for (int c = 0; c < 4; ++c) {
      ASSERT_GT(mc.std[c], 1e-3);
      EXPECT_NEAR(mo.mean[c], ms.mean[c], 1e-5);
      EXPECT_NEAR(mo.std[c], ms.std[c], 1e-5);
    }
  }
}

TEST(AdainMap, RejectsBadChannels) {
  EXPECT_THROW(muvie::adain_map(Var::constant(Tensor({0, 4, 4})), Var::constant(Tensor({0, 4, 4}))),
               muvie::ValidationError);
  EXPECT_THROW(muvie::adain_map(Var::constant(Tensor({2, 4, 4})), Var::constant(Tensor({3, 4, 4}))),
               muvie::ValidationError);
}

TEST(AdainMap, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Tensor c = muvie::testing::random_tensor({3, 5, 4}, rng);
  const Tensor s = muvie::testing::random_tensor({3, 4, 6}, rng);
  const Tensor w = muvie::testing::random_tensor({3, 5, 4}, rng);
  auto f = [&](const std::vector<Var>& v) {
    return ag::sum(ag::mul_const(muvie::adain_map(v[0], v[1]), w));
  };
  EXPECT_LT(muvie::testing::grad_check(f, {c, s}).rel_error, 1e-7);
}

TEST(TransferKind, ParsesNames) {
  EXPECT_EQ(muvie::parse_transfer_kind("adain"), muvie::TransferKind::kAdain);
  EXPECT_EQ(muvie::transfer_name(muvie::TransferKind::kUnet), "unet");
  EXPECT_THROW(muvie::parse_transfer_kind("resnet"), muvie::ConfigError);
}

}  // namespace
