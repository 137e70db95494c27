#include "muviecast/transfer_net.hpp"

#include "muviecast/error.hpp"

namespace muvie {

std::string transfer_name(TransferKind kind) { return kind == TransferKind::kUnet ? "unet" : "adain"; }

TransferKind parse_transfer_kind(const std::string& name) {
  if (name == "unet") return TransferKind::kUnet;
  if (name == "adain") return TransferKind::kAdain;
  throw ConfigError("unknown transfer backbone '" + name + "' (expected unet or adain)");
}

std::string TransferNet::schema() const { return "muviecast.transfer." + transfer_name(kind_) + "/v1"; }

std::vector<Tensor> TransferNet::transform(const std::vector<Tensor>& images) const {
  ag::NoGradGuard guard;
  std::vector<Tensor> out;
  for (const Tensor& img : images) {
    if (img.shape() != images.front().shape())
      throw ValidationError("transform: batch images differ in shape (" + shape_str(img.shape()) +
                            " vs " + shape_str(images.front().shape()) + ")");
    out.push_back(forward(ag::Var::constant(img)).value());
  }
  return out;
}

void TransferNet::save(const std::filesystem::path& path) const {
  nn::save_archive(path, {schema(), params_.snapshot()});
}

void TransferNet::load(const std::filesystem::path& path) {
  const nn::Archive archive = nn::load_archive(path);
  if (archive.schema != schema())
    throw LoadError(path.string() + ": schema '" + archive.schema + "' does not match '" + schema() + "'");
  params_.assign(archive.tensors);
}

ag::Var adain_map(const ag::Var& content, const ag::Var& style, double eps) {
  if (content.value().rank() != 3 || style.value().rank() != 3)
    throw ValidationError("adain_map expects [C, H, W] feature maps");
  if (content.dim(0) == 0) throw ValidationError("adain_map: zero channels");
  if (content.dim(0) != style.dim(0))
    throw ValidationError("adain_map: channel count " + std::to_string(content.dim(0)) + " vs " +
                          std::to_string(style.dim(0)));
  return ag::adain(content, style, eps);
}

namespace {

void check_image(const ag::Var& image, int stride) {
  const Tensor& t = image.value();
  if (t.rank() != 3 || t.dim(0) != 3) throw ValidationError("expected an RGB [3, H, W] image");
  if (t.dim(1) % stride != 0 || t.dim(2) % stride != 0)
    throw ValidationError("image size " + std::to_string(t.dim(2)) + "x" + std::to_string(t.dim(1)) +
                          " must be divisible by " + std::to_string(stride));
}

class Unet final : public TransferNet {
 public:
  Unet(std::uint64_t seed, const UnetWidths& w) : TransferNet(TransferKind::kUnet) {
    std::mt19937_64 rng(seed);
    auto block = [&](const std::string& name, int in, int out, int stride) {
      return Block{nn::make_conv(params_, name + ".conv", in, out, 3, stride, ag::PadMode::kReflect, true, rng),
                   nn::make_instance_norm(params_, name + ".norm", out, true)};
    };
    enc_ = block("enc0", 3, w.c0, 1);
    down_[0] = block("down1", w.c0, w.c1, 2);
    down_[1] = block("down2", w.c1, w.c2, 2);
    down_[2] = block("down3", w.c2, w.c3, 2);
    for (int i = 0; i < w.residual_blocks; ++i) {
      const std::string p = "res" + std::to_string(i);
      res_.push_back({block(p + ".a", w.c3, w.c3, 1), block(p + ".b", w.c3, w.c3, 1)});
    }
    up_[0] = block("up3", w.c3 + w.c2, w.c2, 1);
    up_[1] = block("up2", w.c2 + w.c1, w.c1, 1);
    up_[2] = block("up1", w.c1 + w.c0, w.c0, 1);
    out_ = nn::make_conv(params_, "out.conv", w.c0, 3, 3, 1, ag::PadMode::kReflect, true, rng);
  }

  int stride() const override { return 8; }

  ag::Var forward(const ag::Var& image, const ag::Var*) const override {
    check_image(image, stride());
    const ag::Var e0 = enc_(image);
    const ag::Var e1 = down_[0](e0);
    const ag::Var e2 = down_[1](e1);
    ag::Var x = down_[2](e2);
    for (const auto& [a, b] : res_) x = ag::add(x, b.norm(b.conv(a(x))));
    const ag::Var* skips[3] = {&e2, &e1, &e0};
    for (int i = 0; i < 3; ++i) {
      const std::vector<ag::Var> parts{ag::upsample_nearest2(x), *skips[i]};
      x = up_[i](ag::concat_channels(parts));
    }
    return ag::sigmoid(out_(x));
  }

 private:
  struct Block {
    nn::Conv2d conv;
    nn::InstanceNorm norm;
    ag::Var operator()(const ag::Var& x) const { return ag::relu(norm(conv(x))); }
  };

  Block enc_;
  Block down_[3];
  std::vector<std::pair<Block, Block>> res_;
  Block up_[3];
  nn::Conv2d out_;
};

class Adain final : public TransferNet {
 public:
  Adain(std::uint64_t seed, const PerceptualNet& encoder, double sigma_floor)
      : TransferNet(TransferKind::kAdain), encoder_(encoder), sigma_floor_(sigma_floor) {
    if (encoder.kind() != VggKind::kVgg19Trim)
      throw ConfigError("the AdaIN encoder must be vgg19_trim");
    std::mt19937_64 rng(seed);
    struct Def {
      int in, out;
      bool upsample_after;
    };
    const Def defs[] = {{512, 256, true}, {256, 256, false}, {256, 256, false}, {256, 256, false},
                        {256, 128, true}, {128, 128, false}, {128, 64, true},   {64, 64, false},
                        {64, 3, false}};
    int i = 0;
    for (const Def& d : defs) {
      layers_.push_back({nn::make_conv(params_, "decoder." + std::to_string(i++), d.in, d.out, 3, 1,
                                       ag::PadMode::kReflect, true, rng),
                         d.upsample_after});
    }
  }

  int stride() const override { return 8; }

  std::optional<ag::Var> encode(const Tensor& image) const override {
    ag::NoGradGuard guard;
    return encoder_.extract(ag::Var::constant(image), {"relu4_1"}).maps[0];
  }

  void set_style(const Tensor& style) override { style_features_ = *encode(style); }

  ag::Var forward(const ag::Var& image, const ag::Var* encoded) const override {
    check_image(image, stride());
    if (!style_features_.defined()) throw ValidationError("AdaIN transform needs a style image");
    const ag::Var content =
        encoded ? *encoded : encoder_.extract(image, {"relu4_1"}).maps[0];
    ag::Var x = ag::adain(content, style_features_, sigma_floor_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i].conv(x);
      if (i + 1 < layers_.size()) x = ag::relu(x);
      if (layers_[i].upsample_after) x = ag::upsample_nearest2(x);
    }
    return ag::sigmoid(x);
  }

 private:
  struct Layer {
    nn::Conv2d conv;
    bool upsample_after;
  };
  const PerceptualNet& encoder_;
  double sigma_floor_;
  std::vector<Layer> layers_;
  ag::Var style_features_;
};

}  // namespace

std::unique_ptr<TransferNet> make_unet(std::uint64_t seed, const UnetWidths& widths) {
  return std::make_unique<Unet>(seed, widths);
}

std::unique_ptr<TransferNet> make_adain(std::uint64_t seed, const PerceptualNet& encoder,
                                        double sigma_floor) {
  return std::make_unique<Adain>(seed, encoder, sigma_floor);
}

}  // namespace muvie
