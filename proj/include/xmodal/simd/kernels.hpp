#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

// Dense double-precision inner loops behind the tensor ops.
//
// Each instruction set provides the same table of kernels. The scalar table
// is the reference; vector tables must agree with it to rounding (see
// tests/test_simd.cpp). Matrices are row-major with explicit leading
// dimensions.

namespace xmodal::simd {

enum class Isa { scalar, avx2, avx512 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;

  // C[M x N] (+)= A[M x K] * B[K x N]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t lda, const double* b, std::size_t ldb, double* c,
                  std::size_t ldc, bool accumulate);

  // C[M x N] (+)= A[M x K] * B[N x K]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t lda, const double* b, std::size_t ldb, double* c,
                  std::size_t ldc, bool accumulate);

  double (*dot)(const double* x, const double* y, std::size_t n);

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

bool isa_supported(Isa isa);

// All instruction sets usable on this machine, scalar first.
std::vector<Isa> supported_isas();

const KernelTable& kernels_for(Isa isa);

// The table selected at first use: the widest supported ISA, unless the
// XMODAL_SIMD environment variable names another supported one.
const KernelTable& active();

}  // namespace xmodal::simd
