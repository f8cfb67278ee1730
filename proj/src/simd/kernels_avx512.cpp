// Compiled with -mavx512f -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include "tables.hpp"

namespace xmodal::simd::detail {

namespace {

inline __mmask8 tail_mask(std::size_t count) {
  return static_cast<__mmask8>((1u << count) - 1u);
}

// MR rows of C, 16 columns.
template <int MR>
inline void micro_nn16(std::size_t k, const double* a, std::size_t lda, const double* b,
                       std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  __m512d lo[MR];
  __m512d hi[MR];
  for (int r = 0; r < MR; ++r) {
    lo[r] = _mm512_setzero_pd();
    hi[r] = _mm512_setzero_pd();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m512d b0 = _mm512_loadu_pd(b + p * ldb);
    const __m512d b1 = _mm512_loadu_pd(b + p * ldb + 8);
    for (int r = 0; r < MR; ++r) {
      const __m512d av = _mm512_set1_pd(a[r * lda + p]);
      lo[r] = _mm512_fmadd_pd(av, b0, lo[r]);
      hi[r] = _mm512_fmadd_pd(av, b1, hi[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    double* crow = c + r * ldc;
    if (accumulate) {
      lo[r] = _mm512_add_pd(lo[r], _mm512_loadu_pd(crow));
      hi[r] = _mm512_add_pd(hi[r], _mm512_loadu_pd(crow + 8));
    }
    _mm512_storeu_pd(crow, lo[r]);
    _mm512_storeu_pd(crow + 8, hi[r]);
  }
}

// MR rows of C, up to 8 columns selected by mask.
template <int MR>
inline void micro_nn_masked(std::size_t k, const double* a, std::size_t lda, const double* b,
                            std::size_t ldb, double* c, std::size_t ldc, bool accumulate,
                            __mmask8 mask) {
  __m512d acc[MR];
  for (int r = 0; r < MR; ++r) acc[r] = _mm512_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m512d b0 = _mm512_maskz_loadu_pd(mask, b + p * ldb);
    for (int r = 0; r < MR; ++r) {
      acc[r] = _mm512_fmadd_pd(_mm512_set1_pd(a[r * lda + p]), b0, acc[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    double* crow = c + r * ldc;
    if (accumulate) acc[r] = _mm512_add_pd(acc[r], _mm512_maskz_loadu_pd(mask, crow));
    _mm512_mask_storeu_pd(crow, mask, acc[r]);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) micro_nn16<4>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    switch (m - i) {
      case 3: micro_nn16<3>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate); break;
      case 2: micro_nn16<2>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate); break;
      case 1: micro_nn16<1>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate); break;
      default: break;
    }
  }
  while (j < n) {
    const std::size_t width = n - j < 8 ? n - j : 8;
    const __mmask8 mask = tail_mask(width);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      micro_nn_masked<4>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate, mask);
    }
    for (; i < m; ++i) {
      micro_nn_masked<1>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate, mask);
    }
    j += width;
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m512d s0 = _mm512_setzero_pd();
  __m512d s1 = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i), s0);
    s1 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i + 8), _mm512_loadu_pd(y + i + 8), s1);
  }
  while (i < n) {
    const std::size_t width = n - i < 8 ? n - i : 8;
    const __mmask8 mask = tail_mask(width);
    s0 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(mask, x + i), _mm512_maskz_loadu_pd(mask, y + i), s0);
    i += width;
  }
  return _mm512_reduce_add_pd(_mm512_add_pd(s0, s1));
}

// MR x NR dot products over one k panel, added into (or stored to) C.
template <int MR, int NR>
inline void micro_nt(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, bool accumulate) {
  __m512d acc[MR][NR];
  for (int r = 0; r < MR; ++r)
    for (int q = 0; q < NR; ++q) acc[r][q] = _mm512_setzero_pd();
  std::size_t p = 0;
  for (; p + 8 <= k; p += 8) {
    __m512d va[MR];
    for (int r = 0; r < MR; ++r) va[r] = _mm512_loadu_pd(a + r * lda + p);
    for (int q = 0; q < NR; ++q) {
      const __m512d vb = _mm512_loadu_pd(b + q * ldb + p);
      for (int r = 0; r < MR; ++r) acc[r][q] = _mm512_fmadd_pd(va[r], vb, acc[r][q]);
    }
  }
  if (p < k) {
    const __mmask8 mask = tail_mask(k - p);
    __m512d va[MR];
    for (int r = 0; r < MR; ++r) va[r] = _mm512_maskz_loadu_pd(mask, a + r * lda + p);
    for (int q = 0; q < NR; ++q) {
      const __m512d vb = _mm512_maskz_loadu_pd(mask, b + q * ldb + p);
      for (int r = 0; r < MR; ++r) acc[r][q] = _mm512_fmadd_pd(va[r], vb, acc[r][q]);
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int q = 0; q < NR; ++q) {
      double& dst = c[r * ldc + q];
      const double v = _mm512_reduce_add_pd(acc[r][q]);
      dst = accumulate ? dst + v : v;
    }
}

template <int MR>
inline void micro_nt_cols(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                          std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) micro_nt<MR, 4>(k, a, lda, b + j * ldb, ldb, c + j, ldc, accumulate);
  for (; j < n; ++j) micro_nt<MR, 1>(k, a, lda, b + j * ldb, ldb, c + j, ldc, accumulate);
}

// Panels of k keep the A and B rows of one block resident in cache.
constexpr std::size_t kPanelNt = 512;

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = 0.0;
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kPanelNt) {
    const std::size_t kb = k - p0 < kPanelNt ? k - p0 : kPanelNt;
    const bool acc = accumulate || p0 > 0;
    const double* ap = a + p0;
    const double* bp = b + p0;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) micro_nt_cols<4>(n, kb, ap + i * lda, lda, bp, ldb, c + i * ldc, ldc, acc);
    switch (m - i) {
      case 3: micro_nt_cols<3>(n, kb, ap + i * lda, lda, bp, ldb, c + i * ldc, ldc, acc); break;
      case 2: micro_nt_cols<2>(n, kb, ap + i * lda, lda, bp, ldb, c + i * ldc, ldc, acc); break;
      case 1: micro_nt_cols<1>(n, kb, ap + i * lda, lda, bp, ldb, c + i * ldc, ldc, acc); break;
      default: break;
    }
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m512d va = _mm512_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm512_storeu_pd(y + i, _mm512_fmadd_pd(va, _mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& avx512_table() {
  static const KernelTable table{Isa::avx512, gemm_nn, gemm_nt, dot, axpy};
  return table;
}

}  // namespace xmodal::simd::detail
