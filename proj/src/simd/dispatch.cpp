#include <cstdlib>
#include <string>

#include "metafunc/simd/kernels.hpp"

namespace metafunc::simd {

std::string_view name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

namespace {

bool cpu_supports(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(METAFUNC_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(METAFUNC_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& select() noexcept {
  const char* env = std::getenv("METAFUNC_SIMD");
  const std::string want = env ? env : "auto";
  for (const Isa isa : {Isa::avx2, Isa::neon, Isa::scalar}) {
    if (want != "auto" && want != name(isa)) continue;
    if (const auto* t = table_for(isa)) return *t;
  }
  return detail::scalar_table;
}

}  // namespace

const KernelTable* table_for(Isa isa) noexcept {
  if (!cpu_supports(isa)) return nullptr;
  switch (isa) {
    case Isa::scalar: return &detail::scalar_table;
#if defined(METAFUNC_HAVE_AVX2)
    case Isa::avx2: return &detail::avx2_table;
#endif
#if defined(METAFUNC_HAVE_NEON)
    case Isa::neon: return &detail::neon_table;
#endif
    default: return nullptr;
  }
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out;
  for (const Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
    if (table_for(isa)) out.push_back(isa);
  return out;
}

const KernelTable& active() noexcept {
  static const KernelTable& table = select();
  return table;
}

}  // namespace metafunc::simd
