#include <algorithm>
#include <memory>
#include <stdexcept>
#include <vector>

#include "muviecast/kernels.hpp"
#include "muviecast/ops.hpp"

namespace muvie::ag {
namespace {

using kernels::Trans;

// Upper bound on the im2col scratch buffer, in doubles.
constexpr std::size_t kMaxColumnElems = std::size_t{1} << 20;

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i >= n ? period - i : i;
}

struct ConvGeometry {
  int ci, h, w, co, k, stride, pad, ho, wo;
  // src_row[ky * ho + oy], src_col[kx * wo + ox]; -1 marks zero padding.
  std::vector<int> src_row, src_col;

  int columns() const { return ho * wo; }
  int rows() const { return ci * k * k; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

std::shared_ptr<ConvGeometry> make_geometry(const Tensor& x, const Tensor& w,
                                            const Conv2dOptions& opts) {
  auto g = std::make_shared<ConvGeometry>();
  g->ci = x.dim(0);
  g->h = x.dim(1);
  g->w = x.dim(2);
  g->co = w.dim(0);
  g->k = w.dim(2);
  g->stride = opts.stride;
  g->pad = opts.padding;
  g->ho = (g->h + 2 * g->pad - g->k) / g->stride + 1;
  g->wo = (g->w + 2 * g->pad - g->k) / g->stride + 1;
  if (g->ho <= 0 || g->wo <= 0)
    throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) +
                                " too small for kernel");
  auto map = [&](int o, int kk, int n) {
    const int i = o * g->stride + kk - g->pad;
    if (i >= 0 && i < n) return i;
    return opts.pad_mode == PadMode::kReflect ? reflect_index(i, n) : -1;
  };
  g->src_row.resize(static_cast<std::size_t>(g->k) * g->ho);
  g->src_col.resize(static_cast<std::size_t>(g->k) * g->wo);
  for (int kk = 0; kk < g->k; ++kk) {
    for (int o = 0; o < g->ho; ++o) g->src_row[kk * g->ho + o] = map(o, kk, g->h);
    for (int o = 0; o < g->wo; ++o) g->src_col[kk * g->wo + o] = map(o, kk, g->w);
  }
  return g;
}

int tile_columns(const ConvGeometry& g) {
  const std::size_t fit = std::max<std::size_t>(kMaxColumnElems / g.rows(), 8);
  const std::size_t cols = std::min<std::size_t>(fit, g.columns());
  return static_cast<int>(cols < static_cast<std::size_t>(g.columns()) ? cols / 8 * 8
                                                                        : cols);
}

// Fills col[rows, len] for output pixels [p0, p0 + len).
void im2col(const ConvGeometry& g, const double* x, int p0, int len, double* col) {
  const int k = g.k;
  for (int c = 0; c < g.ci; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < k; ++ky) {
      const int* rmap = g.src_row.data() + ky * g.ho;
      for (int kx = 0; kx < k; ++kx) {
        const int* cmap = g.src_col.data() + kx * g.wo;
        double* dst = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * len;
        int oy = p0 / g.wo, ox = p0 % g.wo;
        for (int j = 0; j < len; ++j) {
          const int sy = rmap[oy], sx = cmap[ox];
          dst[j] = (sy >= 0 && sx >= 0) ? plane[sy * g.w + sx] : 0.0;
          if (++ox == g.wo) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col into gx.
void col2im(const ConvGeometry& g, const double* col, int p0, int len, double* gx) {
  const int k = g.k;
  for (int c = 0; c < g.ci; ++c) {
    double* plane = gx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < k; ++ky) {
      const int* rmap = g.src_row.data() + ky * g.ho;
      for (int kx = 0; kx < k; ++kx) {
        const int* cmap = g.src_col.data() + kx * g.wo;
        const double* src = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * len;
        int oy = p0 / g.wo, ox = p0 % g.wo;
        for (int j = 0; j < len; ++j) {
          const int sy = rmap[oy], sx = cmap[ox];
          if (sy >= 0 && sx >= 0) plane[sy * g.w + sx] += src[j];
          if (++ox == g.wo) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dOptions& opts) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4)
    throw std::invalid_argument("conv2d: expected x [C, H, W] and weight [Co, Ci, k, k]");
  if (wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3))
    throw std::invalid_argument("conv2d: weight " + shape_str(wv.shape()) +
                                " incompatible with input " + shape_str(xv.shape()));
  if (opts.stride < 1 || opts.padding < 0)
    throw std::invalid_argument("conv2d: invalid stride/padding");
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(wv.dim(0)))
    throw std::invalid_argument("conv2d: bias size mismatch");

  auto geo = make_geometry(xv, wv, opts);
  const ConvGeometry& g = *geo;
  const int P = g.columns(), K = g.rows();
  Tensor out({g.co, g.ho, g.wo});

  if (g.pointwise()) {
    kernels::gemm(Trans::kNo, Trans::kNo, g.co, P, K, 1.0, wv.data(), K, xv.data(), P,
                  0.0, out.data(), P);
  } else {
    const int tile = tile_columns(g);
    std::vector<double> col(static_cast<std::size_t>(K) * tile);
    for (int p0 = 0; p0 < P; p0 += tile) {
      const int len = std::min(tile, P - p0);
      im2col(g, xv.data(), p0, len, col.data());
      kernels::gemm(Trans::kNo, Trans::kNo, g.co, len, K, 1.0, wv.data(), K, col.data(),
                    len, 0.0, out.data() + p0, P);
    }
  }
  if (bias.defined()) {
    for (int o = 0; o < g.co; ++o) {
      const double b = bias.value()[o];
      double* row = out.data() + static_cast<std::size_t>(o) * P;
      for (int p = 0; p < P; ++p) row[p] += b;
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [geo](Node& n) {
    const ConvGeometry& g = *geo;
    const int P = g.columns(), K = g.rows();
    const Tensor& xv = n.inputs[0]->value;
    const Tensor& wv = n.inputs[1]->value;
    const double* gy = n.grad.data();
    const bool want_x = n.inputs[0]->requires_grad;
    const bool want_w = n.inputs[1]->requires_grad;

    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      Tensor& gb = n.inputs[2]->grad_buffer();
      for (int o = 0; o < g.co; ++o) {
        const double* row = gy + static_cast<std::size_t>(o) * P;
        double s = 0.0;
        for (int p = 0; p < P; ++p) s += row[p];
        gb[o] += s;
      }
    }
    if (!want_x && !want_w) return;

    if (g.pointwise()) {
      if (want_w)
        kernels::gemm(Trans::kNo, Trans::kYes, g.co, K, P, 1.0, gy, P, xv.data(), P, 1.0,
                      n.inputs[1]->grad_buffer().data(), K);
      if (want_x)
        kernels::gemm(Trans::kYes, Trans::kNo, K, P, g.co, 1.0, wv.data(), K, gy, P, 1.0,
                      n.inputs[0]->grad_buffer().data(), P);
      return;
    }

    const int tile = tile_columns(g);
    std::vector<double> col(static_cast<std::size_t>(K) * tile);
    std::vector<double> gcol(want_x ? col.size() : 0);
    double* gw = want_w ? n.inputs[1]->grad_buffer().data() : nullptr;
    double* gx = want_x ? n.inputs[0]->grad_buffer().data() : nullptr;
    for (int p0 = 0; p0 < P; p0 += tile) {
      const int len = std::min(tile, P - p0);
      if (gw) {
        im2col(g, xv.data(), p0, len, col.data());
        kernels::gemm(Trans::kNo, Trans::kYes, g.co, K, len, 1.0, gy + p0, P, col.data(),
                      len, 1.0, gw, K);
      }
      if (gx) {
        kernels::gemm(Trans::kYes, Trans::kNo, K, len, g.co, 1.0, wv.data(), K, gy + p0, P,
                      0.0, gcol.data(), len);
        col2im(g, gcol.data(), p0, len, gx);
      }
    }
  });
}

}  // namespace muvie::ag
