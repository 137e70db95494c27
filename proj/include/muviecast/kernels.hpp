#pragma once

// Dense arithmetic kernels with a portable scalar reference and SIMD
// variants. The active variant is chosen once from CPUID (overridable with
// MUVIECAST_ISA=scalar|avx2) and can be switched at runtime for testing.

#include <cstddef>
#include <span>
#include <string_view>

namespace muvie::kernels {

enum class Isa { kScalar, kAvx2 };

enum class Trans : bool { kNo = false, kYes = true };

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C with op(A) m x k and
// op(B) k x n. When beta == 0, C is overwritten without being read.
using GemmFn = void (*)(Trans ta, Trans tb, int m, int n, int k, double alpha,
                        const double* a, int lda, const double* b, int ldb,
                        double beta, double* c, int ldc);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y,
                        std::size_t n);
using ScaleFn = void (*)(double alpha, double* x, std::size_t n);
using SumSqDiffFn = double (*)(const double* a, const double* b,
                               std::size_t n);
using ReluFwdFn = void (*)(const double* x, double* y, std::size_t n);
// gx += gy * (x > 0)
using ReluBwdFn = void (*)(const double* x, const double* gy, double* gx,
                           std::size_t n);

struct KernelTable {
  Isa isa;
  GemmFn gemm;
  DotFn dot;
  AxpyFn axpy;
  ScaleFn scale;
  SumSqDiffFn sum_sq_diff;
  ReluFwdFn relu_forward;
  ReluBwdFn relu_backward;
};

bool isa_supported(Isa isa);
Isa detect_isa();
Isa active_isa();
void set_isa(Isa isa);  // throws std::invalid_argument if unsupported
std::string_view isa_name(Isa isa);
const KernelTable& table();
const KernelTable& table_for(Isa isa);

inline void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  table().gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  return table().dot(x.data(), y.data(), x.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  table().axpy(alpha, x.data(), y.data(), x.size());
}

inline void scale(double alpha, std::span<double> x) {
  table().scale(alpha, x.data(), x.size());
}

inline double sum_sq_diff(std::span<const double> a,
                          std::span<const double> b) {
  return table().sum_sq_diff(a.data(), b.data(), a.size());
}

inline void relu_forward(std::span<const double> x, std::span<double> y) {
  table().relu_forward(x.data(), y.data(), x.size());
}

inline void relu_backward(std::span<const double> x,
                          std::span<const double> gy, std::span<double> gx) {
  table().relu_backward(x.data(), gy.data(), gx.data(), x.size());
}

// RAII switch used by equivalence tests and benchmarks.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
  ~ScopedIsa() { set_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace muvie::kernels
