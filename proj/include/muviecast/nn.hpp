#pragma once

// Parameter containers, layers, initialization and optimizers.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "muviecast/ops.hpp"

namespace muvie::nn {

// Named tensors kept in insertion order. Used for both trainable and frozen
// weights; frozen sets hold constants so no gradient is ever traced.
class ParameterSet {
 public:
  ag::Var& add(const std::string& name, Tensor value, bool trainable);
  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
  std::vector<ag::Var> vars() const;

  // Overwrites values from `tensors`; every entry must be present with a
  // matching shape.
  void assign(const std::map<std::string, Tensor>& tensors);
  std::map<std::string, Tensor> snapshot() const;

  // FNV-1a over names, shapes and values in name order.
  std::uint64_t checksum() const;

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

std::uint64_t checksum(const std::map<std::string, Tensor>& tensors);
std::string checksum_hex(std::uint64_t value);

// Zero-mean normal with std sqrt(2 / fan_in).
Tensor he_normal(const Shape& shape, int fan_in, std::mt19937_64& rng);

struct Conv2d {
  ag::Var weight, bias;
  ag::Conv2dOptions opts;

  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, opts); }
};

// Registers `<prefix>.weight` / `<prefix>.bias` in `params`.
Conv2d make_conv(ParameterSet& params, const std::string& prefix, int in_ch, int out_ch,
                 int k, int stride, ag::PadMode pad_mode, bool trainable,
                 std::mt19937_64& rng);

struct InstanceNorm {
  ag::Var gamma, beta;

  ag::Var operator()(const ag::Var& x) const { return ag::instance_norm(x, gamma, beta); }
};

InstanceNorm make_instance_norm(ParameterSet& params, const std::string& prefix, int ch,
                                bool trainable);

// Archive file: magic "MVCW", u32 version, schema tag, then named tensors.
struct Archive {
  std::string schema;
  std::map<std::string, Tensor> tensors;
};

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

class Optimizer {
 public:
  explicit Optimizer(std::vector<ag::Var> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  virtual void step() = 0;
  void zero_grad();

 protected:
  std::vector<ag::Var> params_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<ag::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step() override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<ag::Var> params, double lr, double momentum = 0.9);
  void step() override;

 private:
  double lr_, momentum_;
  std::vector<Tensor> velocity_;
};

// kind is "adam" or "sgd".
std::unique_ptr<Optimizer> make_optimizer(const std::string& kind,
                                          std::vector<ag::Var> params, double lr);

}  // namespace muvie::nn
