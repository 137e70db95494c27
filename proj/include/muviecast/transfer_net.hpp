#pragma once

// Trainable image transformation networks.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "muviecast/nn.hpp"
#include "muviecast/perceptual.hpp"

namespace muvie {

enum class TransferKind { kUnet, kAdain };

std::string transfer_name(TransferKind kind);  // "unet" / "adain"
TransferKind parse_transfer_kind(const std::string& name);

struct UnetWidths {
  int c0 = 32, c1 = 64, c2 = 128, c3 = 136;
  int residual_blocks = 3;
};

class TransferNet {
 public:
  virtual ~TransferNet() = default;

  TransferKind kind() const { return kind_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }
  std::uint64_t checksum() const { return params_.checksum(); }

  // Frozen per-image encoding the forward pass can reuse (AdaIN content
  // features); nullopt for networks without one.
  virtual std::optional<ag::Var> encode(const Tensor& /*image*/) const { return std::nullopt; }

  // [3, H, W] -> [3, H, W] in (0, 1). `encoded` may carry encode(image).
  virtual ag::Var forward(const ag::Var& image, const ag::Var* encoded = nullptr) const = 0;

  // Style image for networks conditioned on one; ignored otherwise.
  virtual void set_style(const Tensor& /*style*/) {}

  // Minimum divisor of H and W.
  virtual int stride() const = 0;

  // Untraced batch inference. All images must share one shape.
  std::vector<Tensor> transform(const std::vector<Tensor>& images) const;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 protected:
  explicit TransferNet(TransferKind kind) : kind_(kind) {}
  std::string schema() const;

  TransferKind kind_;
  nn::ParameterSet params_;
};

std::unique_ptr<TransferNet> make_unet(std::uint64_t seed, const UnetWidths& widths = {});

// `encoder` must be a vgg19_trim network and outlive the returned object.
std::unique_ptr<TransferNet> make_adain(std::uint64_t seed, const PerceptualNet& encoder,
                                        double sigma_floor = 1e-5);

// Feature-space AdaIN map; see ag::adain.
ag::Var adain_map(const ag::Var& content, const ag::Var& style, double eps = 1e-5);

}  // namespace muvie
