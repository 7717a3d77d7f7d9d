#pragma once

#include <cmath>
#include <numbers>
#include <utility>

namespace vortex {

/// A point or vector in the plane.
struct Vec2 {
  double x1 = 0.0;
  double x2 = 0.0;

  constexpr Vec2& operator+=(const Vec2& o) {
    x1 += o.x1;
    x2 += o.x2;
    return *this;
  }
  constexpr Vec2& operator-=(const Vec2& o) {
    x1 -= o.x1;
    x2 -= o.x2;
    return *this;
  }
  constexpr Vec2& operator*=(double s) {
    x1 *= s;
    x2 *= s;
    return *this;
  }
  friend constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend constexpr Vec2 operator-(const Vec2& a) { return {-a.x1, -a.x2}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }
  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

constexpr double dot(const Vec2& a, const Vec2& b) { return a.x1 * b.x1 + a.x2 * b.x2; }
constexpr double norm2(const Vec2& a) { return dot(a, a); }
inline double norm(const Vec2& a) { return std::hypot(a.x1, a.x2); }
/// Counter-clockwise rotation by a right angle.
constexpr Vec2 perp(const Vec2& a) { return {-a.x2, a.x1}; }
inline bool is_finite(const Vec2& a) { return std::isfinite(a.x1) && std::isfinite(a.x2); }

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kInvTwoPi = 1.0 / kTwoPi;

/// Squared separations below this are treated as collisions and produce no
/// velocity when the kernel is unregularized (extends K(0) = 0).
inline constexpr double kCollisionRadiusSq = 1e-24;

struct KernelConfig {
  double epsilon = 0.0;       ///< blob regularization length, 0 = exact kernel
  double split_radius = 1.0;  ///< radius separating the bounded and integrable parts
};

/// Biot-Savart kernel K(x) = (-x2, x1) / (2 pi (|x|^2 + eps^2)), with K(0) = 0.
inline Vec2 biot_savart(const Vec2& x, const KernelConfig& cfg = {}) {
  const double r2 = norm2(x);
  const double eps2 = cfg.epsilon * cfg.epsilon;
  if (eps2 == 0.0 && r2 < kCollisionRadiusSq) return {};
  const double s = kInvTwoPi / (r2 + eps2);
  return {-x.x2 * s, x.x1 * s};
}

struct KernelSplit {
  Vec2 far;   ///< K restricted to |x| >= split radius (bounded by 1/(2 pi r))
  Vec2 near;  ///< K restricted to |x| < split radius (integrable)
};

inline KernelSplit kernel_split(const Vec2& x, double split_radius = 1.0) {
  const Vec2 k = biot_savart(x);
  if (norm2(x) >= split_radius * split_radius) return {k, {}};
  return {{}, k};
}

/// Bounded stream potential g(x) = -(1/2 pi) arctan(x1 / x2) whose
/// convolution with a density has the velocity as negative gradient.
/// On the line x2 = 0 the value is 1/4 for x1 < 0 and -1/4 for x1 > 0;
/// the origin maps to 0.
inline double stream_potential(const Vec2& x) {
  if (x.x2 == 0.0) {
    if (x.x1 < 0.0) return 0.25;
    if (x.x1 > 0.0) return -0.25;
    return 0.0;
  }
  return -kInvTwoPi * std::atan(x.x1 / x.x2);
}

}  // namespace vortex
