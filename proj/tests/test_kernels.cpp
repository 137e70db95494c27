#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

#include "muviecast/kernels.hpp"

namespace {

using muvie::kernels::Isa;
using muvie::kernels::Trans;

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Triple loop, independent of both kernel variants.
void naive_gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
                int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p)
        s += (ta ? a[p * lda + i] : a[i * lda + p]) * (tb ? b[j * ldb + p] : b[p * ldb + j]);
      c[i * ldc + j] = alpha * s + (beta == 0.0 ? 0.0 : beta * c[i * ldc + j]);
    }
}

std::vector<Isa> isas() {
  std::vector<Isa> out{Isa::kScalar};
  if (muvie::kernels::isa_supported(Isa::kAvx2)) out.push_back(Isa::kAvx2);
  return out;
}

class GemmShapes : public ::testing::TestWithParam<std::tuple<int, int, int, bool, bool>> {};

TEST_P(GemmShapes, MatchesNaiveForEveryIsa) {
  const auto [m, n, k, ta, tb] = GetParam();
  std::mt19937_64 rng(m * 1000003 + n * 1009 + k);
  const int lda = ta ? m + 1 : k + 2;
  const int ldb = tb ? k + 3 : n + 1;
  const int ldc = n + 5;
  const auto a = random_vec(static_cast<std::size_t>(lda) * (ta ? k : m), rng);
  const auto b = random_vec(static_cast<std::size_t>(ldb) * (tb ? n : k), rng);
  const auto c0 = random_vec(static_cast<std::size_t>(ldc) * m, rng);

  for (double beta : {0.0, 1.0, -0.5}) {
    auto expected = c0;
    naive_gemm(ta, tb, m, n, k, 0.75, a.data(), lda, b.data(), ldb, beta, expected.data(), ldc);
    for (Isa isa : isas()) {
      SCOPED_TRACE(std::string(muvie::kernels::isa_name(isa)) + " beta=" + std::to_string(beta));
      auto c = c0;
      muvie::kernels::table_for(isa).gemm(ta ? Trans::kYes : Trans::kNo,
                                          tb ? Trans::kYes : Trans::kNo, m, n, k, 0.75,
                                          a.data(), lda, b.data(), ldb, beta, c.data(), ldc);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ASSERT_NEAR(c[i * ldc + j], expected[i * ldc + j], 1e-11 * (k + 1))
              << "at (" << i << ", " << j << ")";
      // Padding columns beyond n must be left untouched.
      for (int i = 0; i < m; ++i)
        for (int j = n; j < ldc; ++j) ASSERT_EQ(c[i * ldc + j], c0[i * ldc + j]);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(
    Kernels, GemmShapes,
    ::testing::Combine(::testing::Values(1, 5, 6, 13, 97), ::testing::Values(1, 7, 8, 17, 300),
                       ::testing::Values(1, 9, 257), ::testing::Bool(), ::testing::Bool()));

TEST(Kernels, LargeGemmCrossesAllBlockBoundaries) {
  std::mt19937_64 rng(3);
  const int m = 200, n = 2100, k = 520;
  const auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
  const auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
  std::vector<double> ref(static_cast<std::size_t>(m) * n), c(ref.size());
  muvie::kernels::table_for(Isa::kScalar)
      .gemm(Trans::kNo, Trans::kNo, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, ref.data(), n);
  for (Isa isa : isas()) {
    muvie::kernels::table_for(isa).gemm(Trans::kNo, Trans::kNo, m, n, k, 1.0, a.data(), k,
                                        b.data(), n, 0.0, c.data(), n);
    for (std::size_t i = 0; i < c.size(); ++i) ASSERT_NEAR(c[i], ref[i], 1e-10);
  }
}

TEST(Kernels, VectorOpsAgreeAcrossIsas) {
  std::mt19937_64 rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 1000u}) {
    const auto x = random_vec(n, rng);
    const auto y = random_vec(n, rng);
    const auto& ref = muvie::kernels::table_for(Isa::kScalar);
    for (Isa isa : isas()) {
      const auto& t = muvie::kernels::table_for(isa);
      EXPECT_NEAR(t.dot(x.data(), y.data(), n), ref.dot(x.data(), y.data(), n), 1e-12);
      EXPECT_NEAR(t.sum_sq_diff(x.data(), y.data(), n), ref.sum_sq_diff(x.data(), y.data(), n),
                  1e-12);

      auto y1 = y, y2 = y;
      t.axpy(-0.3, x.data(), y1.data(), n);
      ref.axpy(-0.3, x.data(), y2.data(), n);
      // FMA contraction may differ from mul+add in the last bit.
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-15);

      auto s1 = x, s2 = x;
      t.scale(2.5, s1.data(), n);
      ref.scale(2.5, s2.data(), n);
      EXPECT_EQ(s1, s2);

      std::vector<double> r1(n), r2(n);
      t.relu_forward(x.data(), r1.data(), n);
      ref.relu_forward(x.data(), r2.data(), n);
      EXPECT_EQ(r1, r2);

      auto g1 = y, g2 = y;
      t.relu_backward(x.data(), y.data(), g1.data(), n);
      ref.relu_backward(x.data(), y.data(), g2.data(), n);
      EXPECT_EQ(g1, g2);
    }
  }
}

TEST(Kernels, ReluTreatsNegativeZeroAndNanLikeScalar) {
  const std::vector<double> x{-0.0, 0.0, std::nan(""), -1.0, 2.0, -0.0, 1e-300, -1e-300};
  const std::vector<double> gy(x.size(), 1.0);
  const auto& ref = muvie::kernels::table_for(Isa::kScalar);
  std::vector<double> expected(x.size(), 0.0);
  ref.relu_backward(x.data(), gy.data(), expected.data(), x.size());
  for (Isa isa : isas()) {
    std::vector<double> g(x.size(), 0.0);
    muvie::kernels::table_for(isa).relu_backward(x.data(), gy.data(), g.data(), x.size());
    EXPECT_EQ(g, expected);
  }
}

TEST(Kernels, ScopedIsaRestoresPrevious) {
  const Isa before = muvie::kernels::active_isa();
  {
    muvie::kernels::ScopedIsa scoped(Isa::kScalar);
    EXPECT_EQ(muvie::kernels::active_isa(), Isa::kScalar);
  }
  EXPECT_EQ(muvie::kernels::active_isa(), before);
}

}  // namespace
