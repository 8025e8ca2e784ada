#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "sspcr/binary_io.hpp"
#include "sspcr/random.hpp"

using namespace sspcr;

TEST(Random, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Random, DerivedSeedsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(7, 0xAB, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(derive_seed(7, 1, 2), derive_seed(7, 2, 1));
}

TEST(Random, UniformInUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Random, IndexCoversRangeUniformly) {
  Rng r(3);
  std::vector<int> hist(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++hist[r.index(7)];
  const double p = 1.0 / 7.0, sd = std::sqrt(n * p * (1 - p));
  for (int h : hist) EXPECT_NEAR(h, n * p, 4 * sd);
}

TEST(Random, NormalMoments) {
  Rng r(5);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Random, PoissonMeanAndVariance) {
  for (double lambda : {0.5, 8.0, 450.0}) {
    Rng r(11);
    const int n = 20000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double k = r.poisson(lambda);
      s += k;
      s2 += k * k;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    EXPECT_NEAR(mean, lambda, 4 * std::sqrt(lambda / n)) << lambda;
    EXPECT_NEAR(var / lambda, 1.0, 0.06) << lambda;
  }
  Rng r(1);
  EXPECT_EQ(r.poisson(0.0), 0u);
}

TEST(Random, ShuffleIsPermutation) {
  Rng r(9);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(ByteIo, RoundTripsLittleEndian) {
  io::ByteWriter w;
  w.u16(0x0102);
  w.u32(0x03040506);
  w.f32(1.5f);
  w.f64(-2.25);
  const auto buf = w.release();
  ASSERT_EQ(buf.size(), 2u + 4 + 4 + 8);
  EXPECT_EQ(static_cast<unsigned char>(buf[0]), 0x02);
  EXPECT_EQ(static_cast<unsigned char>(buf[1]), 0x01);
  io::ByteReader r(buf);
  EXPECT_EQ(r.u16("a"), 0x0102);
  EXPECT_EQ(r.u32("b"), 0x03040506u);
  EXPECT_EQ(r.f32("c"), 1.5f);
  EXPECT_EQ(r.f64("d"), -2.25);
  EXPECT_NO_THROW(r.expect_end());
}

TEST(ByteIo, TruncationReportsOffset) {
  io::ByteWriter w;
  w.u32(1);
  w.u16(2);
  const auto buf = w.release();
  io::ByteReader r(buf);
  r.u32("head");
  try {
    r.u32("tail");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}
