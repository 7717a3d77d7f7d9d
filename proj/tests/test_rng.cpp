#include <gtest/gtest.h>

#include <cmath>

#include "vortex/rng.hpp"

using namespace vortex;

// Known-answer vectors from the Random123 distribution (kat_vectors).
TEST(Philox, KnownAnswers) {
  const auto zero = philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(zero, (Philox4x32Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  const auto ones = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(ones, (Philox4x32Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  const auto pi = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(pi, (Philox4x32Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RngStream, OrderIndependent) {
  const RngStream rng(42);
  const auto a = rng.normal2(17, 5);
  (void)rng.normal2(3, 9);
  const auto b = rng.normal2(17, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(rng.normal2(17, 6), a);
  EXPECT_NE(RngStream(43).normal2(17, 5), a);
  EXPECT_NE(rng.with_tag(StreamTag::initial_sample).normal2(17, 5), a);
}

TEST(RngStream, UniformsInOpenInterval) {
  const RngStream rng(1);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const auto [u, v] = rng.uniform2(0, i);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(RngStream, NormalMoments) {
  const RngStream rng(2024);
  const int n = 200000;
  double s1 = 0, s2 = 0, s4 = 0, cross = 0;
  for (int i = 0; i < n; ++i) {
    const auto [a, b] = rng.normal2(i / 1000, i % 1000);
    s1 += a + b;
    s2 += a * a + b * b;
    s4 += a * a * a * a + b * b * b * b;
    cross += a * b;
  }
  const double m = 2.0 * n;
  EXPECT_NEAR(s1 / m, 0.0, 4.0 / std::sqrt(m));
  EXPECT_NEAR(s2 / m, 1.0, 4.0 * std::sqrt(2.0 / m));
  EXPECT_NEAR(s4 / m, 3.0, 4.0 * std::sqrt(96.0 / m));
  EXPECT_NEAR(cross / n, 0.0, 4.0 / std::sqrt(n));
}
