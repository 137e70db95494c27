#include <algorithm>

#include "kernel_tables.hpp"

namespace muvie::kernels::detail {
namespace {

void gemm_scalar(Trans ta, Trans tb, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0) {
      std::fill(row, row + n, 0.0);
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (k == 0 || alpha == 0.0) return;

  const bool trans_a = ta == Trans::kYes;
  const bool trans_b = tb == Trans::kYes;
  for (int i = 0; i < m; ++i) {
    double* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const double aip =
          alpha * (trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                           : a[static_cast<std::ptrdiff_t>(i) * lda + p]);
      if (trans_b) {
        for (int j = 0; j < n; ++j)
          row[j] += aip * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      } else {
        const double* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) row[j] += aip * brow[j];
      }
    }
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

double sum_sq_diff_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void relu_forward_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(const double* x, const double* gy, double* gx,
                          std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) gx[i] += gy[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{Isa::kScalar,       gemm_scalar,
                             dot_scalar,         axpy_scalar,
                             scale_scalar,       sum_sq_diff_scalar,
                             relu_forward_scalar, relu_backward_scalar};
  return t;
}

}  // namespace muvie::kernels::detail
