#include "muviecast/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "muviecast/kernels.hpp"

namespace muvie::ag {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

void require_rank3(const Var& x, const char* op) {
  if (x.value().rank() != 3)
    throw std::invalid_argument(std::string(op) + ": expected [C, H, W], got " +
                                shape_str(x.shape()));
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }
Tensor& grad_of(Node& n, std::size_t i) { return n.inputs[i]->grad_buffer(); }
const Tensor& value_of(const Node& n, std::size_t i) { return n.inputs[i]->value; }

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i >= n ? period - i : i;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  kernels::axpy(1.0, b.value().span(), out.span());
  return make_result(std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) kernels::axpy(1.0, n.grad.span(), grad_of(n, 0).span());
    if (wants(n, 1)) kernels::axpy(1.0, n.grad.span(), grad_of(n, 1).span());
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  kernels::axpy(-1.0, b.value().span(), out.span());
  return make_result(std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) kernels::axpy(1.0, n.grad.span(), grad_of(n, 0).span());
    if (wants(n, 1)) kernels::axpy(-1.0, n.grad.span(), grad_of(n, 1).span());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    const auto& av = value_of(n, 0);
    const auto& bv = value_of(n, 1);
    if (wants(n, 0)) {
      auto& g = grad_of(n, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants(n, 1)) {
      auto& g = grad_of(n, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] / bv[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    const auto& av = value_of(n, 0);
    const auto& bv = value_of(n, 1);
    if (wants(n, 0)) {
      auto& g = grad_of(n, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / bv[i];
    }
    if (wants(n, 1)) {
      auto& g = grad_of(n, 1);
      for (std::size_t i = 0; i < g.numel(); ++i)
        g[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var affine(const Var& a, double scale, double shift) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = scale * av[i] + shift;
  return make_result(std::move(out), {a}, [scale](Node& n) {
    kernels::axpy(scale, n.grad.span(), grad_of(n, 0).span());
  });
}

Var mul_const(const Var& a, const Tensor& mask) {
  if (a.value().numel() != mask.numel())
    throw std::invalid_argument("mul_const: size mismatch");
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * mask[i];
  auto m = std::make_shared<Tensor>(mask);
  return make_result(std::move(out), {a}, [m](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (*m)[i];
  });
}

Var square(const Var& a) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * av[i];
  return make_result(std::move(out), {a}, [](Node& n) {
    const auto& av = value_of(n, 0);
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * av[i] * n.grad[i];
  });
}

Var sqrt_eps(const Var& a, double eps) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(av[i] + eps);
  return make_result(std::move(out), {a}, [](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] / (2.0 * n.value[i]);
  });
}

Var relu(const Var& a) {
  Tensor out(a.shape());
  kernels::relu_forward(a.value().span(), out.span());
  return make_result(std::move(out), {a}, [](Node& n) {
    kernels::relu_backward(value_of(n, 0).span(), n.grad.span(),
                           grad_of(n, 0).span());
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-av[i]));
  return make_result(std::move(out), {a}, [](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double y = n.value[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& n) {
    kernels::axpy(1.0, n.grad.span(), grad_of(n, 0).span());
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.numel() != 1) throw std::invalid_argument("mul_scalar: s must be scalar");
  const double sv = s.value()[0];
  Tensor out = a.value();
  kernels::scale(sv, out.span());
  return make_result(std::move(out), {a, s}, [](Node& n) {
    const double sv = value_of(n, 1)[0];
    if (wants(n, 0)) kernels::axpy(sv, n.grad.span(), grad_of(n, 0).span());
    if (wants(n, 1))
      grad_of(n, 1)[0] += kernels::dot(n.grad.span(), value_of(n, 0).span());
  });
}

Var div_scalar(const Var& a, const Var& s) {
  if (s.numel() != 1) throw std::invalid_argument("div_scalar: s must be scalar");
  const double sv = s.value()[0];
  Tensor out = a.value();
  kernels::scale(1.0 / sv, out.span());
  return make_result(std::move(out), {a, s}, [](Node& n) {
    const double sv = value_of(n, 1)[0];
    if (wants(n, 0)) kernels::axpy(1.0 / sv, n.grad.span(), grad_of(n, 0).span());
    if (wants(n, 1))
      grad_of(n, 1)[0] -=
          kernels::dot(n.grad.span(), value_of(n, 0).span()) / (sv * sv);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().span()) s += v;
  return make_result(Tensor({1}, s), {a}, [](Node& n) {
    const double g = n.grad[0];
    for (double& v : grad_of(n, 0).span()) v += g;
  });
}

Var mean(const Var& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  double s = 0.0;
  for (double v : a.value().span()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return make_result(Tensor({1}, s * inv), {a}, [inv](Node& n) {
    const double g = n.grad[0] * inv;
    for (double& v : grad_of(n, 0).span()) v += g;
  });
}

Var max_all(const Var& a) {
  if (a.numel() == 0) throw std::invalid_argument("max of empty tensor");
  const auto& av = a.value();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < av.numel(); ++i)
    if (av[i] > av[arg]) arg = i;
  return make_result(Tensor({1}, av[arg]), {a},
                     [arg](Node& n) { grad_of(n, 0)[arg] += n.grad[0]; });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  if (a.numel() == 0) throw std::invalid_argument("mse of empty tensor");
  const double inv = 1.0 / static_cast<double>(a.numel());
  const double v = kernels::sum_sq_diff(a.value().span(), b.value().span()) * inv;
  return make_result(Tensor({1}, v), {a, b}, [inv](Node& n) {
    const auto& av = value_of(n, 0);
    const auto& bv = value_of(n, 1);
    const double g = 2.0 * inv * n.grad[0];
    if (wants(n, 0)) {
      auto& ga = grad_of(n, 0);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g * (av[i] - bv[i]);
    }
    if (wants(n, 1)) {
      auto& gb = grad_of(n, 1);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g * (av[i] - bv[i]);
    }
  });
}

Var smooth_l1(const Var& a, const Var& b, double beta) {
  require_same_shape(a, b, "smooth_l1");
  if (a.numel() == 0) throw std::invalid_argument("smooth_l1 of empty tensor");
  const auto& av = a.value();
  const auto& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const double d = std::abs(av[i] - bv[i]);
    s += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  const double inv = 1.0 / static_cast<double>(av.numel());
  return make_result(Tensor({1}, s * inv), {a, b}, [inv, beta](Node& n) {
    const auto& av = value_of(n, 0);
    const auto& bv = value_of(n, 1);
    const double g = n.grad[0] * inv;
    const bool ga_on = wants(n, 0);
    const bool gb_on = wants(n, 1);
    Tensor* ga = ga_on ? &grad_of(n, 0) : nullptr;
    Tensor* gb = gb_on ? &grad_of(n, 1) : nullptr;
    for (std::size_t i = 0; i < av.numel(); ++i) {
      const double d = av[i] - bv[i];
      const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      if (ga) (*ga)[i] += g * dd;
      if (gb) (*gb)[i] -= g * dd;
    }
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size())
    throw std::invalid_argument("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) s += weights[i] * terms[i].item();
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(Tensor({1}, s), std::vector<Var>(terms.begin(), terms.end()),
                     [w = std::move(w)](Node& n) {
                       for (std::size_t i = 0; i < w.size(); ++i)
                         if (wants(n, i)) grad_of(n, i)[0] += w[i] * n.grad[0];
                     });
}

Var max_pool2(const Var& x) {
  require_rank3(x, "max_pool2");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  auto arg = std::make_shared<std::vector<std::size_t>>(out.numel());
  const auto& xv = x.value();
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx, ++o) {
        std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                (static_cast<std::size_t>(ch) * h + 2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        out[o] = xv[best];
        (*arg)[o] = best;
      }
    }
  }
  return make_result(std::move(out), {x}, [arg](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < arg->size(); ++i) g[(*arg)[i]] += n.grad[i];
  });
}

Var upsample_nearest2(const Var& x) {
  require_rank3(x, "upsample_nearest2");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = xv.at(ch, y / 2, xx / 2);
  return make_result(std::move(out), {x}, [](Node& n) {
    auto& g = grad_of(n, 0);
    const int c = g.dim(0), h = g.dim(1), w = g.dim(2);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) g.at(ch, y / 2, xx / 2) += n.grad.at(ch, y, xx);
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int c = 0;
  for (const Var& p : parts) {
    require_rank3(p, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w)
      throw std::invalid_argument("concat_channels: spatial mismatch");
    c += p.dim(0);
  }
  Tensor out({c, h, w});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.numel(), out.data() + off);
    off += p.numel();
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [](Node& n) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                         const std::size_t len = n.inputs[i]->value.numel();
                         if (wants(n, i))
                           kernels::axpy(1.0, std::span(n.grad.data() + off, len),
                                         grad_of(n, i).span());
                         off += len;
                       }
                     });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank3(x, "instance_norm");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  if (gamma.numel() != static_cast<std::size_t>(c) ||
      beta.numel() != static_cast<std::size_t>(c))
    throw std::invalid_argument("instance_norm: affine size mismatch");
  Tensor out(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * hw;
    double m = 0.0;
    for (std::size_t i = 0; i < hw; ++i) m += src[i];
    m /= static_cast<double>(hw);
    double v = 0.0;
    for (std::size_t i = 0; i < hw; ++i) v += (src[i] - m) * (src[i] - m);
    v /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(v + eps);
    (*inv_std)[ch] = is;
    const double g = gamma.value()[ch], b = beta.value()[ch];
    double* dst = out.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = g * (src[i] - m) * is + b;
  }
  return make_result(std::move(out), {x, gamma, beta}, [inv_std, hw](Node& n) {
    const auto& xv = value_of(n, 0);
    const auto& gv = value_of(n, 1);
    const int c = xv.dim(0);
    const double inv_n = 1.0 / static_cast<double>(hw);
    std::vector<double> xhat(hw);
    for (int ch = 0; ch < c; ++ch) {
      const double* src = xv.data() + ch * hw;
      const double* g = n.grad.data() + ch * hw;
      double m = 0.0;
      for (std::size_t i = 0; i < hw; ++i) m += src[i];
      m *= inv_n;
      const double is = (*inv_std)[ch];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[i] = (src[i] - m) * is;
        sum_g += g[i];
        sum_gx += g[i] * xhat[i];
      }
      if (wants(n, 1)) grad_of(n, 1)[ch] += sum_gx;
      if (wants(n, 2)) grad_of(n, 2)[ch] += sum_g;
      if (wants(n, 0)) {
        double* gx = grad_of(n, 0).data() + ch * hw;
        const double k = gv[ch] * is;
        const double mg = sum_g * inv_n, mgx = sum_gx * inv_n;
        for (std::size_t i = 0; i < hw; ++i) gx[i] += k * (g[i] - mg - xhat[i] * mgx);
      }
    }
  });
}

Var channel_mean(const Var& x) {
  require_rank3(x, "channel_mean");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = x.value().data() + ch * hw;
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += src[i];
    out[ch] = s / static_cast<double>(hw);
  }
  return make_result(std::move(out), {x}, [hw](Node& n) {
    auto& g = grad_of(n, 0);
    for (int ch = 0; ch < g.dim(0); ++ch) {
      const double v = n.grad[ch] / static_cast<double>(hw);
      double* dst = g.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += v;
    }
  });
}

Var channel_std(const Var& x, double eps) {
  require_rank3(x, "channel_std");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out({c});
  auto means = std::make_shared<std::vector<double>>(c);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = x.value().data() + ch * hw;
    double m = 0.0;
    for (std::size_t i = 0; i < hw; ++i) m += src[i];
    m /= static_cast<double>(hw);
    double v = 0.0;
    for (std::size_t i = 0; i < hw; ++i) v += (src[i] - m) * (src[i] - m);
    (*means)[ch] = m;
    out[ch] = std::sqrt(v / static_cast<double>(hw) + eps);
  }
  return make_result(std::move(out), {x}, [means, hw](Node& n) {
    const auto& xv = value_of(n, 0);
    auto& g = grad_of(n, 0);
    for (int ch = 0; ch < g.dim(0); ++ch) {
      const double s = n.value[ch];
      if (s == 0.0) continue;
      const double k = n.grad[ch] / (static_cast<double>(hw) * s);
      const double m = (*means)[ch];
      const double* src = xv.data() + ch * hw;
      double* dst = g.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += k * (src[i] - m);
    }
  });
}

namespace {
struct Moments {
  std::vector<double> mean, std;
};

Moments spatial_moments(const Tensor& t) {
  const int c = t.dim(0);
  const std::size_t hw = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  Moments m{std::vector<double>(c), std::vector<double>(c)};
  for (int ch = 0; ch < c; ++ch) {
    const double* src = t.data() + ch * hw;
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += src[i];
    const double mu = s / static_cast<double>(hw);
    double v = 0.0;
    for (std::size_t i = 0; i < hw; ++i) v += (src[i] - mu) * (src[i] - mu);
    m.mean[ch] = mu;
    m.std[ch] = std::sqrt(v / static_cast<double>(hw));
  }
  return m;
}
}  // namespace

Var adain(const Var& content, const Var& style, double sigma_floor) {
  require_rank3(content, "adain");
  require_rank3(style, "adain");
  const int c = content.dim(0);
  if (c == 0) throw std::invalid_argument("adain: zero channels");
  if (style.dim(0) != c) throw std::invalid_argument("adain: channel mismatch");
  const std::size_t hw = static_cast<std::size_t>(content.dim(1)) * content.dim(2);
  const Moments mc = spatial_moments(content.value());
  const Moments ms = spatial_moments(style.value());
  Tensor out(content.shape());
  for (int ch = 0; ch < c; ++ch) {
    const double denom = std::max(mc.std[ch], sigma_floor);
    const double k = ms.std[ch] / denom;
    const double* src = content.value().data() + ch * hw;
    double* dst = out.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = k * (src[i] - mc.mean[ch]) + ms.mean[ch];
  }
  return make_result(std::move(out), {content, style}, [sigma_floor](Node& n) {
    const auto& cv = value_of(n, 0);
    const auto& sv = value_of(n, 1);
    const int c = cv.dim(0);
    const std::size_t hw = static_cast<std::size_t>(cv.dim(1)) * cv.dim(2);
    const std::size_t shw = static_cast<std::size_t>(sv.dim(1)) * sv.dim(2);
    const Moments mc = spatial_moments(cv);
    const Moments ms = spatial_moments(sv);
    for (int ch = 0; ch < c; ++ch) {
      const double* x = cv.data() + ch * hw;
      const double* g = n.grad.data() + ch * hw;
      const bool floored = !(mc.std[ch] > sigma_floor);
      const double denom = floored ? sigma_floor : mc.std[ch];
      double sum_g = 0.0, sum_gxc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_g += g[i];
        sum_gxc += g[i] * (x[i] - mc.mean[ch]);
      }
      if (wants(n, 0)) {
        double* gx = grad_of(n, 0).data() + ch * hw;
        const double a = ms.std[ch] / denom;
        const double mg = sum_g / static_cast<double>(hw);
        const double corr =
            floored ? 0.0
                    : ms.std[ch] * sum_gxc /
                          (denom * denom * denom * static_cast<double>(hw));
        for (std::size_t i = 0; i < hw; ++i)
          gx[i] += a * (g[i] - mg) - corr * (x[i] - mc.mean[ch]);
      }
      if (wants(n, 1)) {
        const double g_mu = sum_g;
        const double g_sigma = sum_gxc / denom;
        const double* s = sv.data() + ch * shw;
        double* gs = grad_of(n, 1).data() + ch * shw;
        const double inv = 1.0 / static_cast<double>(shw);
        const double ks = ms.std[ch] > 0.0 ? g_sigma * inv / ms.std[ch] : 0.0;
        for (std::size_t i = 0; i < shw; ++i)
          gs[i] += g_mu * inv + ks * (s[i] - ms.mean[ch]);
      }
    }
  });
}

Var gram(const Var& x) {
  require_rank3(x, "gram");
  const int c = x.dim(0);
  const int hw = x.dim(1) * x.dim(2);
  const double norm = 1.0 / (static_cast<double>(c) * hw);
  Tensor out({c, c});
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kYes, c, c, hw, norm,
                x.value().data(), hw, x.value().data(), hw, 0.0, out.data(), c);
  return make_result(std::move(out), {x}, [c, hw, norm](Node& n) {
    // dF = (dG + dG^T) F * norm
    Tensor sym({c, c});
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j)
        sym[i * c + j] = n.grad[i * c + j] + n.grad[j * c + i];
    kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, c, hw, c, norm,
                  sym.data(), c, value_of(n, 0).data(), hw, 1.0,
                  grad_of(n, 0).data(), hw);
  });
}

Var to_gray(const Var& rgb) {
  require_rank3(rgb, "to_gray");
  if (rgb.dim(0) != 3) throw std::invalid_argument("to_gray: expected 3 channels");
  static constexpr double kW[3] = {0.299, 0.587, 0.114};
  const int h = rgb.dim(1), w = rgb.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out({1, h, w});
  for (int ch = 0; ch < 3; ++ch)
    kernels::axpy(kW[ch], std::span(rgb.value().data() + ch * hw, hw), out.span());
  return make_result(std::move(out), {rgb}, [hw](Node& n) {
    auto& g = grad_of(n, 0);
    for (int ch = 0; ch < 3; ++ch)
      kernels::axpy(kW[ch], n.grad.span(), std::span(g.data() + ch * hw, hw));
  });
}

Var filter2d(const Var& x, const std::vector<double>& kernel, int k) {
  require_rank3(x, "filter2d");
  if (k % 2 == 0 || kernel.size() != static_cast<std::size_t>(k) * k)
    throw std::invalid_argument("filter2d: kernel must be odd k x k");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int r = k / 2;
  // Reflected index tables shared by forward and backward.
  auto rows = std::make_shared<std::vector<int>>(static_cast<std::size_t>(h) * k);
  auto cols = std::make_shared<std::vector<int>>(static_cast<std::size_t>(w) * k);
  for (int y = 0; y < h; ++y)
    for (int u = 0; u < k; ++u) (*rows)[y * k + u] = reflect_index(y + u - r, h);
  for (int xx = 0; xx < w; ++xx)
    for (int v = 0; v < k; ++v) (*cols)[xx * k + v] = reflect_index(xx + v - r, w);

  Tensor out(x.shape());
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int u = 0; u < k; ++u) {
          const int sy = (*rows)[y * k + u];
          for (int v = 0; v < k; ++v)
            s += kernel[u * k + v] * xv.at(ch, sy, (*cols)[xx * k + v]);
        }
        out.at(ch, y, xx) = s;
      }
  return make_result(std::move(out), {x}, [kernel, k, rows, cols](Node& n) {
    auto& g = grad_of(n, 0);
    const int c = g.dim(0), h = g.dim(1), w = g.dim(2);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const double gv = n.grad.at(ch, y, xx);
          if (gv == 0.0) continue;
          for (int u = 0; u < k; ++u) {
            const int sy = (*rows)[y * k + u];
            for (int v = 0; v < k; ++v)
              g.at(ch, sy, (*cols)[xx * k + v]) += kernel[u * k + v] * gv;
          }
        }
  });
}

Var grid_sample(const Var& img, const Var& grid, SamplePadding padding) {
  require_rank3(img, "grid_sample");
  require_rank3(grid, "grid_sample");
  if (grid.dim(0) != 2) throw std::invalid_argument("grid_sample: grid must be [2, H, W]");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int ho = grid.dim(1), wo = grid.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t ohw = static_cast<std::size_t>(ho) * wo;

  struct Tap {
    int x0, y0;
    double wx, wy;
    bool clamp_x, clamp_y;
  };
  auto locate = [h, w, padding](double x, double y) {
    Tap t{};
    if (padding == SamplePadding::kBorder) {
      t.clamp_x = !(x > 0.0 && x < w - 1);
      t.clamp_y = !(y > 0.0 && y < h - 1);
      x = std::clamp(x, 0.0, static_cast<double>(w - 1));
      y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    }
    const double fx = std::floor(x), fy = std::floor(y);
    t.x0 = static_cast<int>(fx);
    t.y0 = static_cast<int>(fy);
    t.wx = x - fx;
    t.wy = y - fy;
    return t;
  };
  // Corner fetch with padding; returns 0 weight outside for zeros mode.
  auto corner = [h, w, padding](int xi, int yi, int& idx) {
    if (padding == SamplePadding::kBorder) {
      xi = std::clamp(xi, 0, w - 1);
      yi = std::clamp(yi, 0, h - 1);
    } else if (xi < 0 || xi >= w || yi < 0 || yi >= h) {
      return false;
    }
    idx = yi * w + xi;
    return true;
  };

  Tensor out({c, ho, wo});
  const auto& iv = img.value();
  const auto& gv = grid.value();
  for (std::size_t p = 0; p < ohw; ++p) {
    const double x = gv[p], y = gv[ohw + p];
    if (!std::isfinite(x) || !std::isfinite(y)) continue;
    const Tap t = locate(x, y);
    int idx[4] = {0, 0, 0, 0};
    bool ok[4] = {corner(t.x0, t.y0, idx[0]), corner(t.x0 + 1, t.y0, idx[1]),
                  corner(t.x0, t.y0 + 1, idx[2]), corner(t.x0 + 1, t.y0 + 1, idx[3])};
    const double wts[4] = {(1 - t.wx) * (1 - t.wy), t.wx * (1 - t.wy),
                           (1 - t.wx) * t.wy, t.wx * t.wy};
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = iv.data() + ch * hw;
      double s = 0.0;
      for (int q = 0; q < 4; ++q)
        if (ok[q]) s += wts[q] * plane[idx[q]];
      out[ch * ohw + p] = s;
    }
  }

  return make_result(std::move(out), {img, grid}, [=](Node& n) {
    const auto& iv = value_of(n, 0);
    const auto& gv = value_of(n, 1);
    const bool want_img = wants(n, 0), want_grid = wants(n, 1);
    double* gimg = want_img ? grad_of(n, 0).data() : nullptr;
    double* ggrid = want_grid ? grad_of(n, 1).data() : nullptr;
    for (std::size_t p = 0; p < ohw; ++p) {
      const double x = gv[p], y = gv[ohw + p];
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      const Tap t = locate(x, y);
      int idx[4] = {0, 0, 0, 0};
      bool ok[4] = {corner(t.x0, t.y0, idx[0]), corner(t.x0 + 1, t.y0, idx[1]),
                    corner(t.x0, t.y0 + 1, idx[2]), corner(t.x0 + 1, t.y0 + 1, idx[3])};
      const double wts[4] = {(1 - t.wx) * (1 - t.wy), t.wx * (1 - t.wy),
                             (1 - t.wx) * t.wy, t.wx * t.wy};
      double gx = 0.0, gy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double go = n.grad[ch * ohw + p];
        if (go == 0.0) continue;
        if (gimg) {
          double* plane = gimg + ch * hw;
          for (int q = 0; q < 4; ++q)
            if (ok[q]) plane[idx[q]] += wts[q] * go;
        }
        if (ggrid) {
          const double* plane = iv.data() + ch * hw;
          double v[4];
          for (int q = 0; q < 4; ++q) v[q] = ok[q] ? plane[idx[q]] : 0.0;
          gx += go * ((v[1] - v[0]) * (1 - t.wy) + (v[3] - v[2]) * t.wy);
          gy += go * ((v[2] - v[0]) * (1 - t.wx) + (v[3] - v[1]) * t.wx);
        }
      }
      if (ggrid) {
        if (!t.clamp_x) ggrid[p] += gx;
        if (!t.clamp_y) ggrid[ohw + p] += gy;
      }
    }
  });
}

Var softmax_channels(const Var& x) {
  require_rank3(x, "softmax_channels");
  const int d = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < d; ++k) mx = std::max(mx, xv[k * hw + p]);
    double s = 0.0;
    for (int k = 0; k < d; ++k) {
      const double e = std::exp(xv[k * hw + p] - mx);
      out[k * hw + p] = e;
      s += e;
    }
    for (int k = 0; k < d; ++k) out[k * hw + p] /= s;
  }
  return make_result(std::move(out), {x}, [d, hw](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      double dotv = 0.0;
      for (int k = 0; k < d; ++k) dotv += n.grad[k * hw + p] * n.value[k * hw + p];
      for (int k = 0; k < d; ++k)
        g[k * hw + p] += n.value[k * hw + p] * (n.grad[k * hw + p] - dotv);
    }
  });
}

Var channel_weighted_sum(const Var& x, std::span<const double> weights) {
  require_rank3(x, "channel_weighted_sum");
  const int d = x.dim(0);
  if (weights.size() != static_cast<std::size_t>(d))
    throw std::invalid_argument("channel_weighted_sum: weight count mismatch");
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out({1, x.dim(1), x.dim(2)});
  for (int k = 0; k < d; ++k)
    kernels::axpy(weights[k], std::span(x.value().data() + k * hw, hw), out.span());
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(std::move(out), {x}, [w = std::move(w), hw](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t k = 0; k < w.size(); ++k)
      kernels::axpy(w[k], n.grad.span(), std::span(g.data() + k * hw, hw));
  });
}

Var channel_max(const Var& x) {
  require_rank3(x, "channel_max");
  const int d = x.dim(0);
  if (d == 0) throw std::invalid_argument("channel_max: zero channels");
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out({1, x.dim(1), x.dim(2)});
  std::vector<int> arg(hw, 0);
  const double* xv = x.value().data();
  for (std::size_t p = 0; p < hw; ++p) {
    double best = xv[p];
    for (int k = 1; k < d; ++k)
      if (xv[k * hw + p] > best) {
        best = xv[k * hw + p];
        arg[p] = k;
      }
    out[p] = best;
  }
  return make_result(std::move(out), {x}, [arg = std::move(arg), hw](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t p = 0; p < hw; ++p) g[arg[p] * hw + p] += n.grad[p];
  });
}

namespace {
// Out-of-place 1-D window mean along one axis with in-bounds counts.
// When `transpose` is set, applies the adjoint map instead.
void box1d(const double* src, double* dst, int len, std::size_t stride,
           int radius, bool transpose) {
  for (int i = 0; i < len; ++i) {
    const int lo = std::max(0, i - radius), hi = std::min(len - 1, i + radius);
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    if (!transpose) {
      double s = 0.0;
      for (int j = lo; j <= hi; ++j) s += src[j * stride];
      dst[i * stride] += s * inv;
    } else {
      const double v = src[i * stride] * inv;
      for (int j = lo; j <= hi; ++j) dst[j * stride] += v;
    }
  }
}

Tensor box_apply(const Tensor& in, int radius, bool transpose) {
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor tmp(in.shape()), out(in.shape());
  for (int ch = 0; ch < c; ++ch) {
    const std::size_t base = static_cast<std::size_t>(ch) * h * w;
    if (!transpose) {
      for (int y = 0; y < h; ++y)
        box1d(in.data() + base + y * w, tmp.data() + base + y * w, w, 1, radius, false);
      for (int x = 0; x < w; ++x)
        box1d(tmp.data() + base + x, out.data() + base + x, h, w, radius, false);
    } else {
      for (int x = 0; x < w; ++x)
        box1d(in.data() + base + x, tmp.data() + base + x, h, w, radius, true);
      for (int y = 0; y < h; ++y)
        box1d(tmp.data() + base + y * w, out.data() + base + y * w, w, 1, radius, true);
    }
  }
  return out;
}
}  // namespace

Var box_filter(const Var& x, int radius) {
  require_rank3(x, "box_filter");
  if (radius <= 0) return x;
  return make_result(box_apply(x.value(), radius, false), {x}, [radius](Node& n) {
    const Tensor g = box_apply(n.grad, radius, true);
    kernels::axpy(1.0, g.span(), grad_of(n, 0).span());
  });
}

Var group_normalize(const Var& x, int groups, double eps) {
  require_rank3(x, "group_normalize");
  const int c = x.dim(0);
  if (groups <= 0 || c % groups != 0)
    throw std::invalid_argument("group_normalize: groups must divide channels");
  const int per = c / groups;
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups) * hw);
  const auto& xv = x.value();
  for (int g = 0; g < groups; ++g)
    for (std::size_t p = 0; p < hw; ++p) {
      double s = eps;
      for (int k = 0; k < per; ++k) {
        const double v = xv[(g * per + k) * hw + p];
        s += v * v;
      }
      const double nrm = std::sqrt(s);
      (*norms)[g * hw + p] = nrm;
      for (int k = 0; k < per; ++k)
        out[(g * per + k) * hw + p] = xv[(g * per + k) * hw + p] / nrm;
    }
  return make_result(std::move(out), {x}, [groups, per, hw, norms](Node& n) {
    auto& gx = grad_of(n, 0);
    for (int g = 0; g < groups; ++g)
      for (std::size_t p = 0; p < hw; ++p) {
        double yg = 0.0;
        for (int k = 0; k < per; ++k) {
          const std::size_t i = (g * per + k) * hw + p;
          yg += n.value[i] * n.grad[i];
        }
        const double inv = 1.0 / (*norms)[g * hw + p];
        for (int k = 0; k < per; ++k) {
          const std::size_t i = (g * per + k) * hw + p;
          gx[i] += (n.grad[i] - n.value[i] * yg) * inv;
        }
      }
  });
}

}  // namespace muvie::ag
