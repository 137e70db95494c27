#include "muviecast/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "muviecast/error.hpp"

namespace muvie::nn {
namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv_update(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

void hash_tensor(std::uint64_t& h, const std::string& name, const Tensor& t) {
  fnv_update(h, name.data(), name.size());
  for (int d : t.shape()) {
    const auto v = static_cast<std::uint32_t>(d);
    fnv_update(h, &v, sizeof v);
  }
  fnv_update(h, t.data(), t.numel() * sizeof(double));
}

}  // namespace

ag::Var& ParameterSet::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, trainable ? ag::Var::parameter(std::move(value))
                                        : ag::Var::constant(std::move(value)));
  return entries_.back().second;
}

const ag::Var& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].second;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.numel();
  return n;
}

std::vector<ag::Var> ParameterSet::vars() const {
  std::vector<ag::Var> out;
  out.reserve(entries_.size());
  for (const auto& [name, v] : entries_) out.push_back(v);
  return out;
}

void ParameterSet::assign(const std::map<std::string, Tensor>& tensors) {
  for (auto& [name, v] : entries_) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError("missing tensor '" + name + "' in weights");
    if (it->second.numel() != v.numel())
      throw LoadError("tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                      ", expected " + shape_str(v.shape()));
    std::copy(it->second.data(), it->second.data() + v.numel(), v.mutable_value().data());
  }
}

std::map<std::string, Tensor> ParameterSet::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : entries_) out.emplace(name, v.value());
  return out;
}

std::uint64_t ParameterSet::checksum() const { return nn::checksum(snapshot()); }

std::uint64_t checksum(const std::map<std::string, Tensor>& tensors) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : tensors) hash_tensor(h, name, t);
  return h;
}

std::string checksum_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

Tensor he_normal(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor t(shape);
  for (double& v : t.span()) v = dist(rng);
  return t;
}

Conv2d make_conv(ParameterSet& params, const std::string& prefix, int in_ch, int out_ch,
                 int k, int stride, ag::PadMode pad_mode, bool trainable,
                 std::mt19937_64& rng) {
  Conv2d conv;
  conv.weight = params.add(prefix + ".weight",
                           he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng), trainable);
  conv.bias = params.add(prefix + ".bias", Tensor({out_ch}), trainable);
  conv.opts = {stride, k / 2, pad_mode};
  return conv;
}

InstanceNorm make_instance_norm(ParameterSet& params, const std::string& prefix, int ch,
                                bool trainable) {
  InstanceNorm norm;
  norm.gamma = params.add(prefix + ".weight", Tensor({ch}, 1.0), trainable);
  norm.beta = params.add(prefix + ".bias", Tensor({ch}), trainable);
  return norm;
}

// ---------------------------------------------------------------------------
// Archive IO. All integers little-endian.

namespace {

constexpr char kMagic[4] = {'M', 'V', 'C', 'W'};
constexpr std::uint32_t kVersion = 1;
enum : std::uint8_t { kF32 = 0, kF64 = 1 };

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_string(std::ofstream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}

  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw LoadError(path_ + ": truncated weights archive");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw LoadError(path_ + ": corrupt string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::ifstream& in_;
  std::string path_;
};

static_assert(sizeof(double) == 8 && sizeof(float) == 4);

}  // namespace

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_string(out, archive.schema);
  put_u32(out, static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    put_string(out, name);
    out.put(static_cast<char>(kF64));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw Error("failed writing " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open weights file " + path.string());
  Reader r(in, path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw LoadError(path.string() + ": not an MVCW weights archive");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw LoadError(path.string() + ": unsupported archive version " + std::to_string(version));
  Archive archive;
  archive.schema = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    std::uint8_t dtype;
    r.bytes(&dtype, 1);
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw LoadError(path.string() + ": corrupt tensor rank for " + name);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Tensor t(shape);
    if (dtype == kF64) {
      r.bytes(t.data(), t.numel() * sizeof(double));
    } else if (dtype == kF32) {
      std::vector<float> buf(t.numel());
      r.bytes(buf.data(), buf.size() * sizeof(float));
      std::copy(buf.begin(), buf.end(), t.data());
    } else {
      throw LoadError(path.string() + ": unknown dtype for " + name);
    }
    archive.tensors.emplace(std::move(name), std::move(t));
  }
  return archive;
}

// ---------------------------------------------------------------------------

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<ag::Var> params, double lr, double beta1, double beta2, double eps)
    : Optimizer(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& g = params_[i].grad();
    if (g.empty()) continue;
    Tensor& w = params_[i].mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.numel(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

Sgd::Sgd(std::vector<ag::Var> params, double lr, double momentum)
    : Optimizer(std::move(params)), lr_(lr), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.shape());
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& g = params_[i].grad();
    if (g.empty()) continue;
    Tensor& w = params_[i].mutable_value();
    Tensor& vel = velocity_[i];
    for (std::size_t j = 0; j < w.numel(); ++j) {
      vel[j] = momentum_ * vel[j] + g[j];
      w[j] -= lr_ * vel[j];
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind,
                                          std::vector<ag::Var> params, double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (kind == "adam") return std::make_unique<Adam>(std::move(params), lr);
  if (kind == "sgd") return std::make_unique<Sgd>(std::move(params), lr);
  throw ConfigError("unknown optimizer '" + kind + "' (expected adam or sgd)");
}

}  // namespace muvie::nn
