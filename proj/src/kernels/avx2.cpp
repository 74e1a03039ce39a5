#include "ulw/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <vector>

namespace ulw::kernels::detail {
namespace {

constexpr std::size_t kPanel = 8;  // columns of B per packed panel (two ymm)

// 4 rows of A against one packed K x 8 panel of B; 8 accumulators.
inline void micro_4x8(std::size_t k, const double* a, std::size_t lda, const double* panel, double* c,
                      std::size_t ldc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_load_pd(panel + p * kPanel);
    const __m256d b1 = _mm256_load_pd(panel + p * kPanel + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  auto flush = [](double* row, __m256d lo, __m256d hi) {
    _mm256_storeu_pd(row, _mm256_add_pd(_mm256_loadu_pd(row), lo));
    _mm256_storeu_pd(row + 4, _mm256_add_pd(_mm256_loadu_pd(row + 4), hi));
  };
  flush(c, c00, c01);
  flush(c + ldc, c10, c11);
  flush(c + 2 * ldc, c20, c21);
  flush(c + 3 * ldc, c30, c31);
}

inline void micro_1x8(std::size_t k, const double* a, const double* panel, double* c) {
  __m256d lo = _mm256_setzero_pd(), hi = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    lo = _mm256_fmadd_pd(av, _mm256_load_pd(panel + p * kPanel), lo);
    hi = _mm256_fmadd_pd(av, _mm256_load_pd(panel + p * kPanel + 4), hi);
  }
  _mm256_storeu_pd(c, _mm256_add_pd(_mm256_loadu_pd(c), lo));
  _mm256_storeu_pd(c + 4, _mm256_add_pd(_mm256_loadu_pd(c + 4), hi));
}

struct AlignedPanel {
  double* data = nullptr;
  std::size_t capacity = 0;
  ~AlignedPanel() { _mm_free(data); }
  double* reserve(std::size_t count) {
    if (count > capacity) {
      _mm_free(data);
      data = static_cast<double*>(_mm_malloc(count * sizeof(double), 32));
      capacity = count;
    }
    return data;
  }
};

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  thread_local AlignedPanel scratch;
  double* panel = scratch.reserve(k * kPanel);
  const std::size_t n_full = n / kPanel * kPanel;
  for (std::size_t j0 = 0; j0 < n_full; j0 += kPanel) {
    for (std::size_t p = 0; p < k; ++p) {
      _mm256_store_pd(panel + p * kPanel, _mm256_loadu_pd(b + p * ldb + j0));
      _mm256_store_pd(panel + p * kPanel + 4, _mm256_loadu_pd(b + p * ldb + j0 + 4));
    }
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) micro_4x8(k, a + i * lda, lda, panel, c + i * ldc + j0, ldc);
    for (; i < m; ++i) micro_1x8(k, a + i * lda, panel, c + i * ldc + j0);
  }
  if (n_full == n) return;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * lda + p];
      const double* brow = b + p * ldb;
      for (std::size_t j = n_full; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum_sq_diff(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable avx2_table{Isa::avx2, "avx2", &gemm, &dot, &sum_sq_diff, &axpy};

}  // namespace ulw::kernels::detail

#endif
