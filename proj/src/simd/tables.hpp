#pragma once

#include "xmodal/simd/kernels.hpp"

namespace xmodal::simd::detail {

const KernelTable& scalar_table();
#if defined(XMODAL_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(XMODAL_HAVE_AVX512)
const KernelTable& avx512_table();
#endif

}  // namespace xmodal::simd::detail
