#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "metafunc/rng.hpp"

namespace metafunc {
namespace {

TEST(Rng, SameKeySameStream) {
  Rng a(42, {1, 2});
  Rng b(42, {1, 2});
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamIdsAreNotInterchangeable) {
  EXPECT_NE(derive_key(42, {1, 2}), derive_key(42, {2, 1}));
  EXPECT_NE(derive_key(42, {1}), derive_key(43, {1}));
  EXPECT_NE(derive_key(42, {1}), derive_key(42, {1, 0}));
}

TEST(Rng, BelowStaysInRange) {
  Rng r(7);
  for (std::uint64_t n : {1ull, 2ull, 3ull, 7ull, 1000ull})
    for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(n), n);
}

TEST(Rng, UniformAndNormalMoments) {
  Rng r(11);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng r(3);
  for (int t = 0; t < 50; ++t) {
    const auto s = r.sample_without_replacement(20, 12);
    ASSERT_EQ(s.size(), 12u);
    std::set<std::size_t> uniq(s.begin(), s.end());
    EXPECT_EQ(uniq.size(), 12u);
    EXPECT_LT(*std::max_element(s.begin(), s.end()), 20u);
  }
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(5);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

}  // namespace
}  // namespace metafunc
