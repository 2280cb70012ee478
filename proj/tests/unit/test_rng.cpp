// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rway/rng.hpp"

using rway::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitIgnoresParentConsumption) {
  Rng a(7), b(7);
  for (int i = 0; i < 50; ++i) b.next_u64();
  Rng ca = a.split("layer"), cb = b.split("layer");
  for (int i = 0; i < 100; ++i) ASSERT_EQ(ca.next_u64(), cb.next_u64());
}

TEST(Rng, SplitLabelsAndIndicesAreDistinct) {
  Rng root(3);
  std::set<std::uint64_t> firsts;
  for (std::uint64_t i = 0; i < 64; ++i) firsts.insert(root.split(i).next_u64());
  firsts.insert(root.split("a").next_u64());
  firsts.insert(root.split("b").next_u64());
  EXPECT_EQ(firsts.size(), 66u);
}

TEST(Rng, UniformInUnitInterval) {
  Rng rng(11);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000.0, 0.5, 0.01);
}

TEST(Rng, UniformIntCoversRange) {
  Rng rng(5);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.uniform_int(10)];
  for (int c : counts) EXPECT_NEAR(c, 5000, 400);
}

TEST(Rng, NormalMoments) {
  Rng rng(9);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(1.0, 2.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 2.0, 0.02);
}

TEST(Rng, Fnv1aKnownVector) {
  // Published FNV-1a 64 test vector for "a".
  EXPECT_EQ(rway::fnv1a64("a", 1), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(rway::fnv1a64("", 0), 0xcbf29ce484222325ULL);
}
