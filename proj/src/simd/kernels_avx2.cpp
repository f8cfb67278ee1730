// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include "tables.hpp"

namespace xmodal::simd::detail {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// MR rows of C, 8 columns.
template <int MR>
inline void micro_nn8(std::size_t k, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  __m256d lo[MR];
  __m256d hi[MR];
  for (int r = 0; r < MR; ++r) {
    lo[r] = _mm256_setzero_pd();
    hi[r] = _mm256_setzero_pd();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < MR; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      lo[r] = _mm256_fmadd_pd(av, b0, lo[r]);
      hi[r] = _mm256_fmadd_pd(av, b1, hi[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    double* crow = c + r * ldc;
    if (accumulate) {
      lo[r] = _mm256_add_pd(lo[r], _mm256_loadu_pd(crow));
      hi[r] = _mm256_add_pd(hi[r], _mm256_loadu_pd(crow + 4));
    }
    _mm256_storeu_pd(crow, lo[r]);
    _mm256_storeu_pd(crow + 4, hi[r]);
  }
}

template <int MR>
inline void micro_nn4(std::size_t k, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  __m256d acc[MR];
  for (int r = 0; r < MR; ++r) acc[r] = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    for (int r = 0; r < MR; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * lda + p), b0, acc[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    double* crow = c + r * ldc;
    if (accumulate) acc[r] = _mm256_add_pd(acc[r], _mm256_loadu_pd(crow));
    _mm256_storeu_pd(crow, acc[r]);
  }
}

template <int MR>
inline void micro_nn1(std::size_t k, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (int r = 0; r < MR; ++r) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a[r * lda + p] * b[p * ldb];
    c[r * ldc] = accumulate ? c[r * ldc] + s : s;
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  // Column panels outermost so each B panel stays cache resident while all
  // row blocks of A stream past it.
  std::size_t j = 0;
  auto run_panel = [&](std::size_t col, auto micro4, auto micro3, auto micro2, auto micro1) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) micro4(k, a + i * lda, lda, b + col, ldb, c + i * ldc + col, ldc, accumulate);
    switch (m - i) {
      case 3: micro3(k, a + i * lda, lda, b + col, ldb, c + i * ldc + col, ldc, accumulate); break;
      case 2: micro2(k, a + i * lda, lda, b + col, ldb, c + i * ldc + col, ldc, accumulate); break;
      case 1: micro1(k, a + i * lda, lda, b + col, ldb, c + i * ldc + col, ldc, accumulate); break;
      default: break;
    }
  };
  for (; j + 8 <= n; j += 8) {
    run_panel(j, micro_nn8<4>, micro_nn8<3>, micro_nn8<2>, micro_nn8<1>);
  }
  for (; j + 4 <= n; j += 4) {
    run_panel(j, micro_nn4<4>, micro_nn4<3>, micro_nn4<2>, micro_nn4<1>);
  }
  for (; j < n; ++j) {
    run_panel(j, micro_nn1<4>, micro_nn1<3>, micro_nn1<2>, micro_nn1<1>);
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

// 2 rows of A against 4 rows of B; every C entry is a length-k dot product.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  auto store = [&](std::size_t i, std::size_t j, double v) {
    double& dst = c[i * ldc + j];
    dst = accumulate ? dst + v : v;
  };
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* bj[4] = {b + j * ldb, b + (j + 1) * ldb, b + (j + 2) * ldb, b + (j + 3) * ldb};
      __m256d s0[4];
      __m256d s1[4];
      for (int q = 0; q < 4; ++q) {
        s0[q] = _mm256_setzero_pd();
        s1[q] = _mm256_setzero_pd();
      }
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d va0 = _mm256_loadu_pd(a0 + p);
        const __m256d va1 = _mm256_loadu_pd(a1 + p);
        for (int q = 0; q < 4; ++q) {
          const __m256d vb = _mm256_loadu_pd(bj[q] + p);
          s0[q] = _mm256_fmadd_pd(va0, vb, s0[q]);
          s1[q] = _mm256_fmadd_pd(va1, vb, s1[q]);
        }
      }
      for (int q = 0; q < 4; ++q) {
        double t0 = hsum(s0[q]);
        double t1 = hsum(s1[q]);
        for (std::size_t pp = p; pp < k; ++pp) {
          t0 += a0[pp] * bj[q][pp];
          t1 += a1[pp] * bj[q][pp];
        }
        store(i, j + q, t0);
        store(i + 1, j + q, t1);
      }
    }
    for (; j < n; ++j) {
      store(i, j, dot(a0, b + j * ldb, k));
      store(i + 1, j, dot(a1, b + j * ldb, k));
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) store(i, j, dot(a + i * lda, b + j * ldb, k));
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::avx2, gemm_nn, gemm_nt, dot, axpy};
  return table;
}

}  // namespace xmodal::simd::detail
