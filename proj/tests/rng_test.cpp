#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "patchforge/error.hpp"
#include "patchforge/rng.hpp"

using namespace patchforge;

TEST(CounterRng, SplitMixReferenceValues) {
  // SplitMix64 seeded with 0: first outputs of the reference generator.
  CounterRng rng(0);
  EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next(), 0x06C45D188009454FULL);
}

TEST(CounterRng, CounterAddressable) {
  CounterRng a(42);
  for (int i = 0; i < 10; ++i) {
    a.next();
  }
  CounterRng b(42, 10);
  EXPECT_EQ(a.next(), b.next());
}

TEST(CounterRng, SubstreamsDiffer) {
  auto a = CounterRng::substream(7, "coords");
  auto b = CounterRng::substream(7, "slide");
  auto c = CounterRng::substream(8, "coords");
  EXPECT_NE(a.key(), b.key());
  EXPECT_NE(a.key(), c.key());
  EXPECT_EQ(a.key(), CounterRng::substream(7, "coords").key());
}

TEST(CounterRng, BelowStaysInRangeAndCoversIt) {
  CounterRng rng(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(rng.below(1), 0u);
  for (int i = 0; i < 100; ++i) {
    const auto v = rng.between(-3, 3);
    ASSERT_GE(v, -3);
    ASSERT_LE(v, 3);
  }
}

TEST(CounterRng, UniformInUnitInterval) {
  CounterRng rng(9);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(CounterRng, WeightedRespectsZerosAndRejectsBadWeights) {
  CounterRng rng(3);
  const std::vector<double> w{0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) {
    ASSERT_EQ(rng.weighted(w), 1u);
  }
  const std::vector<double> zeros{0.0, 0.0};
  EXPECT_THROW(rng.weighted(zeros), ValidationError);
  const std::vector<double> neg{1.0, -1.0};
  EXPECT_THROW(rng.weighted(neg), ValidationError);
}

TEST(CounterRng, ShuffleIsAPermutation) {
  CounterRng rng(11);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto s = v;
  rng.shuffle(s.begin(), s.end());
  EXPECT_NE(s, v);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, v);
}
