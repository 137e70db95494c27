// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after a CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "kernel_tables.hpp"

namespace muvie::kernels::detail {
namespace {

// Register tile 6x8 (12 ymm accumulators), cache blocks sized for a
// 32 KiB L1 / 1 MiB L2 core.
constexpr int kMR = 6;
constexpr int kNR = 8;
constexpr int kMC = 96;
constexpr int kKC = 256;
constexpr int kNC = 2048;

inline double op_at(const double* p, int ld, bool trans, int r, int c) {
  return trans ? p[static_cast<std::ptrdiff_t>(c) * ld + r]
               : p[static_cast<std::ptrdiff_t>(r) * ld + c];
}

void pack_a(bool trans, const double* a, int lda, int i0, int mc, int p0,
            int kc, double* dst) {
  for (int ir = 0; ir < mc; ir += kMR) {
    const int mr = std::min(kMR, mc - ir);
    if (!trans && mr == kMR) {
      const double* rows[kMR];
      for (int r = 0; r < kMR; ++r)
        rows[r] = a + static_cast<std::ptrdiff_t>(i0 + ir + r) * lda + p0;
      for (int p = 0; p < kc; ++p) {
        for (int r = 0; r < kMR; ++r) dst[r] = rows[r][p];
        dst += kMR;
      }
      continue;
    }
    for (int p = 0; p < kc; ++p) {
      int r = 0;
      for (; r < mr; ++r) dst[r] = op_at(a, lda, trans, i0 + ir + r, p0 + p);
      for (; r < kMR; ++r) dst[r] = 0.0;
      dst += kMR;
    }
  }
}

void pack_b(bool trans, const double* b, int ldb, int p0, int kc, int j0,
            int nc, double* dst) {
  for (int jr = 0; jr < nc; jr += kNR) {
    const int nr = std::min(kNR, nc - jr);
    if (!trans && nr == kNR) {
      for (int p = 0; p < kc; ++p) {
        const double* src =
            b + static_cast<std::ptrdiff_t>(p0 + p) * ldb + j0 + jr;
        _mm256_storeu_pd(dst, _mm256_loadu_pd(src));
        _mm256_storeu_pd(dst + 4, _mm256_loadu_pd(src + 4));
        dst += kNR;
      }
      continue;
    }
    for (int p = 0; p < kc; ++p) {
      int c = 0;
      for (; c < nr; ++c) dst[c] = op_at(b, ldb, trans, p0 + p, j0 + jr + c);
      for (; c < kNR; ++c) dst[c] = 0.0;
      dst += kNR;
    }
  }
}

// c[0..5][0..7] += alpha * (pa panel x pb panel)
void micro_kernel(int kc, const double* pa, const double* pb, double alpha,
                  double* c, int ldc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();

  for (int p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(pb);
    const __m256d b1 = _mm256_loadu_pd(pb + 4);
    __m256d a = _mm256_broadcast_sd(pa + 0);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    a = _mm256_broadcast_sd(pa + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    a = _mm256_broadcast_sd(pa + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    a = _mm256_broadcast_sd(pa + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
    a = _mm256_broadcast_sd(pa + 4);
    c40 = _mm256_fmadd_pd(a, b0, c40);
    c41 = _mm256_fmadd_pd(a, b1, c41);
    a = _mm256_broadcast_sd(pa + 5);
    c50 = _mm256_fmadd_pd(a, b0, c50);
    c51 = _mm256_fmadd_pd(a, b1, c51);
    pa += kMR;
    pb += kNR;
  }

  const __m256d va = _mm256_set1_pd(alpha);
  auto store_row = [&](double* row, __m256d lo, __m256d hi) {
    _mm256_storeu_pd(row, _mm256_fmadd_pd(va, lo, _mm256_loadu_pd(row)));
    _mm256_storeu_pd(row + 4,
                     _mm256_fmadd_pd(va, hi, _mm256_loadu_pd(row + 4)));
  };
  store_row(c + 0 * static_cast<std::ptrdiff_t>(ldc), c00, c01);
  store_row(c + 1 * static_cast<std::ptrdiff_t>(ldc), c10, c11);
  store_row(c + 2 * static_cast<std::ptrdiff_t>(ldc), c20, c21);
  store_row(c + 3 * static_cast<std::ptrdiff_t>(ldc), c30, c31);
  store_row(c + 4 * static_cast<std::ptrdiff_t>(ldc), c40, c41);
  store_row(c + 5 * static_cast<std::ptrdiff_t>(ldc), c50, c51);
}

void gemm_avx2(Trans ta, Trans tb, int m, int n, int k, double alpha,
               const double* a, int lda, const double* b, int ldb, double beta,
               double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0) {
      std::fill(row, row + n, 0.0);
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;

  const bool trans_a = ta == Trans::kYes;
  const bool trans_b = tb == Trans::kYes;

  thread_local std::vector<double> packed_a;
  thread_local std::vector<double> packed_b;
  packed_a.resize(static_cast<std::size_t>(kMC) * kKC);
  packed_b.resize(static_cast<std::size_t>(kKC) *
                  ((std::min(n, kNC) + kNR - 1) / kNR * kNR));
  alignas(32) double edge[kMR * kNR];

  for (int jc = 0; jc < n; jc += kNC) {
    const int nc = std::min(kNC, n - jc);
    for (int pc = 0; pc < k; pc += kKC) {
      const int kc = std::min(kKC, k - pc);
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, packed_b.data());
      for (int ic = 0; ic < m; ic += kMC) {
        const int mc = std::min(kMC, m - ic);
        pack_a(trans_a, a, lda, ic, mc, pc, kc, packed_a.data());
        for (int jr = 0; jr < nc; jr += kNR) {
          const int nr = std::min(kNR, nc - jr);
          const double* pb = packed_b.data() + static_cast<std::ptrdiff_t>(jr) * kc;
          for (int ir = 0; ir < mc; ir += kMR) {
            const int mr = std::min(kMR, mc - ir);
            const double* pa =
                packed_a.data() + static_cast<std::ptrdiff_t>(ir) * kc;
            double* ctile = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc +
                            jc + jr;
            if (mr == kMR && nr == kNR) {
              micro_kernel(kc, pa, pb, alpha, ctile, ldc);
            } else {
              std::memset(edge, 0, sizeof(edge));
              micro_kernel(kc, pa, pb, alpha, edge, kNR);
              for (int r = 0; r < mr; ++r)
                for (int j = 0; j < nr; ++j)
                  ctile[static_cast<std::ptrdiff_t>(r) * ldc + j] +=
                      edge[r * kNR + j];
            }
          }
        }
      }
    }
  }
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                           _mm256_loadu_pd(y + i + 4), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(double alpha, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

double sum_sq_diff_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void relu_forward_avx2(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    // max(v, 0) but keeps -0.0/NaN semantics of the scalar `x > 0 ? x : 0`
    const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_and_pd(mask, v));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* x, const double* gy, double* gx,
                        std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask =
        _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(gy + i));
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) gx[i] += gy[i];
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable t{Isa::kAvx2,       gemm_avx2,
                             dot_avx2,         axpy_avx2,
                             scale_avx2,       sum_sq_diff_avx2,
                             relu_forward_avx2, relu_backward_avx2};
  return t;
}

}  // namespace muvie::kernels::detail
