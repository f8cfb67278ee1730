#include <cstdlib>
#include <string>

#include "tables.hpp"

namespace xmodal::simd {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::avx512: return "avx512";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(XMODAL_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::avx512:
#if defined(XMODAL_HAVE_AVX512)
      return __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::vector<Isa> supported_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::scalar, Isa::avx2, Isa::avx512}) {
    if (isa_supported(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& kernels_for(Isa isa) {
  switch (isa) {
#if defined(XMODAL_HAVE_AVX2)
    case Isa::avx2:
      if (isa_supported(isa)) return detail::avx2_table();
      break;
#endif
#if defined(XMODAL_HAVE_AVX512)
    case Isa::avx512:
      if (isa_supported(isa)) return detail::avx512_table();
      break;
#endif
    default:
      break;
  }
  return detail::scalar_table();
}

namespace {

const KernelTable& select() {
  if (const char* forced = std::getenv("XMODAL_SIMD")) {
    const std::string want(forced);
    for (Isa isa : supported_isas()) {
      if (isa_name(isa) == want) return kernels_for(isa);
    }
  }
  return kernels_for(supported_isas().back());
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace xmodal::simd
