#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vortex/particle.hpp"
#include "vortex/treecode.hpp"

using namespace vortex;

namespace {

std::vector<Vec2> uniform_disk(std::size_t n, std::uint64_t seed) {
  const RngStream rng(seed, StreamTag::test);
  std::vector<Vec2> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [u, v] = rng.uniform2(0, i);
    const double r = std::sqrt(u), th = 2.0 * std::numbers::pi * v;
    p[i] = {r * std::cos(th), r * std::sin(th)};
  }
  return p;
}

double relative_error(const std::vector<Vec2>& a, const std::vector<Vec2>& ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, norm(a[i] - ref[i]));
    den = std::max(den, norm(ref[i]));
  }
  return num / den;
}

}  // namespace

TEST(Treecode, TwoParticlesMatchDirect) {
  const std::vector<Vec2> p{{1.0, 0.0}, {-1.0, 0.0}};
  EXPECT_EQ(drift_treecode(p, {0.5, 6, 1}), drift_direct(p));
}

TEST(Treecode, TinyThetaIsBitwiseDirect) {
  const auto p = uniform_disk(2000, 1);
  EXPECT_EQ(drift_treecode(p, {1e-9, 6, 16}), drift_direct(p));
  EXPECT_EQ(drift_treecode(p, {1e-9, 6, 16}, {0.05, 1.0}), drift_direct(p, {0.05, 1.0}));
}

TEST(Treecode, UniformDiskAccuracy) {
  const auto p = uniform_disk(1024, 2);
  const auto ref = drift_direct(p);
  EXPECT_LE(relative_error(drift_treecode(p, {0.5, 6, 32}), ref), 1e-3);
}

TEST(Treecode, ErrorGrowsWithTheta) {
  const auto p = uniform_disk(4096, 3);
  const auto ref = drift_direct(p);
  double previous = -1.0;
  for (double theta : {0.2, 0.4, 0.6, 0.8}) {
    const double e = relative_error(drift_treecode(p, {theta, 2, 16}), ref);
    EXPECT_GE(e, previous);
    previous = e;
  }
  EXPECT_GT(previous, 0.0);
}

TEST(Treecode, HigherOrderIsMoreAccurate) {
  const auto p = uniform_disk(4096, 4);
  const auto ref = drift_direct(p);
  const double e1 = relative_error(drift_treecode(p, {0.5, 1, 16}), ref);
  const double e6 = relative_error(drift_treecode(p, {0.5, 6, 16}), ref);
  EXPECT_LT(e6, 0.1 * e1);
}

TEST(Treecode, RejectsBadTheta) {
  const auto p = uniform_disk(10, 5);
  EXPECT_THROW(drift_treecode(p, {0.0, 6, 8}), std::invalid_argument);
  EXPECT_THROW(drift_treecode(p, {1.0, 6, 8}), std::invalid_argument);
}
