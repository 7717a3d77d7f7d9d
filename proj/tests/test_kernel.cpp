#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "vortex/kernel.hpp"

using namespace vortex;

TEST(BiotSavart, ZeroAtOrigin) {
  const Vec2 k = biot_savart({0.0, 0.0});
  EXPECT_EQ(k.x1, 0.0);
  EXPECT_EQ(k.x2, 0.0);
}

TEST(BiotSavart, UnitAndDoubleDistance) {
  const Vec2 a = biot_savart({1.0, 0.0});
  EXPECT_NEAR(a.x1, 0.0, 1e-15);
  EXPECT_NEAR(a.x2, 0.1591549430918953, 1e-15);
  const Vec2 b = biot_savart({2.0, 0.0});
  EXPECT_NEAR(b.x2, 0.0795774715459477, 1e-15);
}

TEST(BiotSavart, RegularizedFormula) {
  const KernelConfig cfg{0.5, 1.0};
  const Vec2 k = biot_savart({1.0, 0.0}, cfg);
  EXPECT_NEAR(k.x2, 1.0 / (2.0 * std::numbers::pi * 1.25), 1e-15);
  // The blob is finite at the origin.
  EXPECT_EQ(biot_savart({0.0, 0.0}, cfg), (Vec2{0.0, 0.0}));
}

TEST(BiotSavart, OrthogonalAndOdd) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (double eps : {0.0, 0.1, 1.0}) {
    const KernelConfig cfg{eps, 1.0};
    for (int k = 0; k < 1000; ++k) {
      const Vec2 x{nd(gen), nd(gen)};
      const Vec2 v = biot_savart(x, cfg);
      EXPECT_NEAR(dot(v, x), 0.0, 1e-14 * (1.0 + norm(v) * norm(x)));
      const Vec2 w = biot_savart(-x, cfg);
      EXPECT_EQ(w.x1, -v.x1);
      EXPECT_EQ(w.x2, -v.x2);
    }
  }
}

TEST(BiotSavart, RegularizedIsDivergenceFree) {
  const KernelConfig cfg{0.3, 1.0};
  const Vec2 x{0.4, -0.7};
  double previous = 1e300;
  for (double h : {1e-2, 1e-3, 1e-4}) {
    const double div = (biot_savart({x.x1 + h, x.x2}, cfg).x1 - biot_savart({x.x1 - h, x.x2}, cfg).x1) / (2 * h) +
                       (biot_savart({x.x1, x.x2 + h}, cfg).x2 - biot_savart({x.x1, x.x2 - h}, cfg).x2) / (2 * h);
    EXPECT_LT(std::abs(div), previous + 1e-12);
    previous = std::abs(div);
  }
  EXPECT_LT(previous, 1e-7);
}

TEST(KernelSplit, Branches) {
  const auto far = kernel_split({2.0, 0.0});
  EXPECT_NEAR(far.far.x2, 1.0 / (4.0 * std::numbers::pi), 1e-15);
  EXPECT_EQ(far.near, (Vec2{0.0, 0.0}));
  const auto near = kernel_split({0.5, 0.0});
  EXPECT_EQ(near.far, (Vec2{0.0, 0.0}));
  EXPECT_NEAR(near.near.x2, 1.0 / std::numbers::pi, 1e-15);
  const auto origin = kernel_split({0.0, 0.0});
  EXPECT_EQ(origin.far, (Vec2{0.0, 0.0}));
  EXPECT_EQ(origin.near, (Vec2{0.0, 0.0}));
}

TEST(KernelSplit, SumsToKernelAndFarIsBounded) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> ud(-3.0, 3.0);
  for (int k = 0; k < 2000; ++k) {
    const Vec2 x{ud(gen), ud(gen)};
    const auto s = kernel_split(x);
    const Vec2 sum = s.far + s.near;
    EXPECT_EQ(sum, biot_savart(x));
    EXPECT_LE(norm(s.far), 1.0 / (2.0 * std::numbers::pi) + 1e-15);
  }
}

TEST(KernelSplit, NearPartIntegratesToOne) {
  // Polar midpoint rule for int_{|x|<1} |K_near| dx = int_0^1 (1/(2 pi r)) 2 pi r dr.
  const int nr = 400, nt = 64;
  double total = 0.0;
  for (int a = 0; a < nr; ++a) {
    const double r = (a + 0.5) / nr;
    for (int b = 0; b < nt; ++b) {
      const double th = 2.0 * std::numbers::pi * (b + 0.5) / nt;
      const auto s = kernel_split({r * std::cos(th), r * std::sin(th)});
      total += norm(s.near) * r * (1.0 / nr) * (2.0 * std::numbers::pi / nt);
    }
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(StreamPotential, BranchValuesAndBound) {
  EXPECT_EQ(stream_potential({-1.0, 0.0}), 0.25);
  EXPECT_EQ(stream_potential({1.0, 0.0}), -0.25);
  EXPECT_EQ(stream_potential({0.0, 0.0}), 0.0);
  EXPECT_NEAR(stream_potential({1.0, 1.0}), -0.125, 1e-15);
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd(0.0, 5.0);
  for (int k = 0; k < 1000; ++k) EXPECT_LE(std::abs(stream_potential({nd(gen), nd(gen)})), 0.25);
}

TEST(StreamPotential, GradientMatchesKernelOffTheCut) {
  const double h = 1e-6;
  for (const Vec2 x : {Vec2{1.0, 1.0}, Vec2{-0.3, 2.0}, Vec2{0.7, -0.4}}) {
    const Vec2 grad{(stream_potential({x.x1 + h, x.x2}) - stream_potential({x.x1 - h, x.x2})) / (2 * h),
                    (stream_potential({x.x1, x.x2 + h}) - stream_potential({x.x1, x.x2 - h})) / (2 * h)};
    const Vec2 k = biot_savart(x);
    EXPECT_NEAR(grad.x1, k.x1, 1e-8);
    EXPECT_NEAR(grad.x2, k.x2, 1e-8);
  }
}
