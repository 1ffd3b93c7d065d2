#include <gtest/gtest.h>

#include <cmath>

#include "metafunc/rng.hpp"
#include "metafunc/simd/kernels.hpp"

namespace metafunc::simd {
namespace {

std::vector<double> random_vec(Rng& r, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = r.uniform(-3.0, 3.0);
  return v;
}

// Vector variants reassociate sums, so agreement is to rounding, not bits.
void expect_close(double a, double b, double scale) { EXPECT_NEAR(a, b, 1e-13 * (1.0 + scale)); }

TEST(Kernels, ScalarAlwaysAvailableAndFirst) {
  const auto isas = available_isas();
  ASSERT_FALSE(isas.empty());
  EXPECT_EQ(isas.front(), Isa::scalar);
  EXPECT_NE(table_for(Isa::scalar), nullptr);
}

TEST(Kernels, EveryVariantMatchesScalar) {
  const KernelTable& ref = *table_for(Isa::scalar);
  Rng r(99);
  for (const Isa isa : available_isas()) {
    const KernelTable& k = *table_for(isa);
    SCOPED_TRACE(std::string(name(isa)));
    for (std::size_t n = 0; n <= 67; ++n) {
      const auto a = random_vec(r, n);
      const auto b = random_vec(r, n);
      double mag = 0;
      for (std::size_t i = 0; i < n; ++i) mag += std::abs(a[i] * b[i]);
      expect_close(k.dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), mag);

      double sq = 0;
      for (std::size_t i = 0; i < n; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
      expect_close(k.squared_distance(a.data(), b.data(), n), ref.squared_distance(a.data(), b.data(), n), sq);

      auto y1 = b, y2 = b;
      k.axpy(0.7, a.data(), y1.data(), n);
      ref.axpy(0.7, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) expect_close(y1[i], y2[i], std::abs(y2[i]));

      auto s1 = a, s2 = a;
      k.scale(-1.3, s1.data(), n);
      ref.scale(-1.3, s2.data(), n);
      for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(s1[i], s2[i]);
    }
  }
}

TEST(Kernels, ScalarMatchesNaiveLoops) {
  const KernelTable& ref = *table_for(Isa::scalar);
  const std::vector<double> a{1, 2, 3}, b{4, -5, 6};
  EXPECT_EQ(ref.dot(a.data(), b.data(), 3), 12.0);
  EXPECT_EQ(ref.squared_distance(a.data(), b.data(), 3), 9.0 + 49.0 + 9.0);
}

TEST(Kernels, ActiveIsOneOfTheAvailable) {
  const auto isas = available_isas();
  EXPECT_NE(std::find(isas.begin(), isas.end(), active().isa), isas.end());
}

}  // namespace
}  // namespace metafunc::simd
