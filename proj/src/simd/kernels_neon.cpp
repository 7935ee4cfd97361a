#include <arm_neon.h>

#include <algorithm>
#include <cmath>

#include "foldnet/simd.hpp"

namespace foldnet::simd::detail {
namespace {

void axpy(std::size_t n, double a, const double* x, double* y) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    vst1q_f64(y + i + 2, vfmaq_f64(vld1q_f64(y + i + 2), va, vld1q_f64(x + i + 2)));
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

double dot(std::size_t n, const double* x, const double* y) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

double squared_distance(std::size_t n, const double* x, const double* y) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(x + i), vld1q_f64(y + i));
    acc = vfmaq_f64(acc, d, d);
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s = std::fma(d, d, s);
  }
  return s;
}

double manhattan_distance(std::size_t n, const double* x, const double* y) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    acc = vaddq_f64(acc, vabdq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += std::fabs(x[i] - y[i]);
  return s;
}

template <std::size_t Rows>
inline void gemm_rows(std::size_t n, std::size_t k, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    float64x2_t acc[Rows][2];
    for (std::size_t r = 0; r < Rows; ++r) {
      acc[r][0] = vld1q_f64(c + r * ldc + j);
      acc[r][1] = vld1q_f64(c + r * ldc + j + 2);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const float64x2_t b0 = vld1q_f64(b + p * ldb + j);
      const float64x2_t b1 = vld1q_f64(b + p * ldb + j + 2);
      for (std::size_t r = 0; r < Rows; ++r) {
        const float64x2_t av = vdupq_n_f64(a[r * lda + p]);
        acc[r][0] = vfmaq_f64(acc[r][0], av, b0);
        acc[r][1] = vfmaq_f64(acc[r][1], av, b1);
      }
    }
    for (std::size_t r = 0; r < Rows; ++r) {
      vst1q_f64(c + r * ldc + j, acc[r][0]);
      vst1q_f64(c + r * ldc + j + 2, acc[r][1]);
    }
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < Rows; ++r) {
      double s = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) s = std::fma(a[r * lda + p], b[p * ldb + j], s);
      c[r * ldc + j] = s;
    }
  }
}

void gemm_panel(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 5 <= m; i += 5) gemm_rows<5>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  a += i * lda;
  c += i * ldc;
  switch (m - i) {
    case 4: gemm_rows<4>(n, k, a, lda, b, ldb, c, ldc); break;
    case 3: gemm_rows<3>(n, k, a, lda, b, ldb, c, ldc); break;
    case 2: gemm_rows<2>(n, k, a, lda, b, ldb, c, ldc); break;
    case 1: gemm_rows<1>(n, k, a, lda, b, ldb, c, ldc); break;
    default: break;
  }
}

// Column panels keep the slice of B being swept resident in cache across row blocks.
constexpr std::size_t kPanel = 128;

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t j = 0; j < n; j += kPanel) {
    gemm_panel(m, std::min(kPanel, n - j), k, a, lda, b + j, ldb, c + j, ldc);
  }
}

constexpr KernelTable kTable{Backend::neon, "neon", axpy, dot, squared_distance,
                             manhattan_distance, gemm};

}  // namespace

const KernelTable* neon_table() noexcept { return &kTable; }

}  // namespace foldnet::simd::detail
