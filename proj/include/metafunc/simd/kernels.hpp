#pragma once

// Dense double-precision inner loops shared by the classifier solvers and the
// neural layers. Every kernel has a scalar reference implementation and, when
// the build target allows, a vectorised variant (AVX2+FMA on x86-64, NEON on
// AArch64). The variant is chosen once per process from CPU features; setting
// METAFUNC_SIMD=scalar|avx2|neon|auto overrides the choice.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace metafunc::simd {

enum class Isa { scalar, avx2, neon };

std::string_view name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  /// x *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
};

/// Kernel table for a specific ISA, or nullptr if the build or CPU lacks it.
const KernelTable* table_for(Isa isa) noexcept;

/// ISAs usable on this machine, scalar first.
std::vector<Isa> available_isas();

/// The process-wide selection.
const KernelTable& active() noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  return active().squared_distance(a.data(), b.data(), a.size());
}

inline void scale(double alpha, std::span<double> x) noexcept { active().scale(alpha, x.data(), x.size()); }

namespace detail {
extern const KernelTable scalar_table;
#if defined(METAFUNC_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
#if defined(METAFUNC_HAVE_NEON)
extern const KernelTable neon_table;
#endif
}  // namespace detail

}  // namespace metafunc::simd
