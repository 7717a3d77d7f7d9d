#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vortex/kernel.hpp"

namespace vortex {

/// Raised when a point falls outside the truncated computational box.
class DomainBreach : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Square node lattice on [-L, L)^2 with n points per axis, periodic in the
/// spectral solver. Node (i, j) sits at (-L + i h, -L + j h); storage is
/// row-major with the row index j along x2.
struct GridGeometry {
  double half_width = 12.0;
  std::size_t n = 256;

  double spacing() const { return 2.0 * half_width / static_cast<double>(n); }
  double cell_area() const { return spacing() * spacing(); }
  std::size_t size() const { return n * n; }
  double coord(std::size_t i) const { return -half_width + static_cast<double>(i) * spacing(); }
  Vec2 node(std::size_t i, std::size_t j) const { return {coord(i), coord(j)}; }
  std::size_t index(std::size_t i, std::size_t j) const { return j * n + i; }

  void validate() const {
    if (!(half_width > 0.0) || !std::isfinite(half_width))
      throw std::invalid_argument("grid half_width must be positive");
    if (n < 4 || (n & (n - 1)) != 0) throw std::invalid_argument("grid n must be a power of two >= 4");
  }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Bilinear interpolation stencil for a point strictly inside the node lattice.
struct BilinearStencil {
  std::size_t i0, j0;
  double wx, wy;
};

inline BilinearStencil bilinear_stencil(const GridGeometry& g, const Vec2& x) {
  const double h = g.spacing();
  const double sx = (x.x1 + g.half_width) / h;
  const double sy = (x.x2 + g.half_width) / h;
  const double top = static_cast<double>(g.n - 1);
  if (!(sx > 0.0 && sx < top && sy > 0.0 && sy < top)) {
    throw DomainBreach("point (" + std::to_string(x.x1) + ", " + std::to_string(x.x2) +
                       ") is outside the interior of the grid [-L, L-h]^2 with L=" +
                       std::to_string(g.half_width));
  }
  const auto i0 = static_cast<std::size_t>(sx);
  const auto j0 = static_cast<std::size_t>(sy);
  return {i0, j0, sx - static_cast<double>(i0), sy - static_cast<double>(j0)};
}

inline double interpolate(const GridGeometry& g, std::span<const double> values, const Vec2& x) {
  const auto s = bilinear_stencil(g, x);
  const double v00 = values[g.index(s.i0, s.j0)];
  const double v10 = values[g.index(s.i0 + 1, s.j0)];
  const double v01 = values[g.index(s.i0, s.j0 + 1)];
  const double v11 = values[g.index(s.i0 + 1, s.j0 + 1)];
  return (1.0 - s.wy) * ((1.0 - s.wx) * v00 + s.wx * v10) + s.wy * ((1.0 - s.wx) * v01 + s.wx * v11);
}

/// Samples of a probability (vorticity) density on a GridGeometry.
struct DensityGrid {
  GridGeometry geometry;
  std::vector<double> values;
  double time = 0.0;
  double sigma = 1.0;

  DensityGrid() = default;
  DensityGrid(GridGeometry g, double t, double s) : geometry(g), values(g.size(), 0.0), time(t), sigma(s) {}

  double& at(std::size_t i, std::size_t j) { return values[geometry.index(i, j)]; }
  double at(std::size_t i, std::size_t j) const { return values[geometry.index(i, j)]; }

  /// Trapezoid (periodic) quadrature of the density.
  double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * geometry.cell_area();
  }
  double max_value() const { return *std::max_element(values.begin(), values.end()); }
  double min_value() const { return *std::min_element(values.begin(), values.end()); }

  /// Largest value on the outermost ring of nodes.
  double boundary_max() const {
    const std::size_t n = geometry.n;
    double m = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      m = std::max({m, std::abs(at(k, 0)), std::abs(at(k, n - 1)), std::abs(at(0, k)), std::abs(at(n - 1, k))});
    }
    return m;
  }

  double interpolate(const Vec2& x) const { return vortex::interpolate(geometry, values, x); }
};

namespace detail {
inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}
}  // namespace detail

struct DensityInvariants {
  double min_allowed = -1e-12;
  double mass_tolerance = 1e-8;
  double tail_tolerance = 1e-12;
};

/// Throws std::domain_error naming the first violated invariant.
inline void check_density_invariants(const DensityGrid& rho, const DensityInvariants& tol = {}) {
  const double lo = rho.min_value();
  if (lo < tol.min_allowed) throw std::domain_error("density minimum " + detail::sci(lo) + " below tolerance");
  const double m = rho.mass();
  if (std::abs(m - 1.0) > tol.mass_tolerance)
    throw std::domain_error("density mass " + detail::sci(m) + " differs from 1");
  const double b = rho.boundary_max();
  if (b > tol.tail_tolerance)
    throw std::domain_error("density boundary value " + detail::sci(b) + " exceeds tail tolerance");
}

/// Velocity samples u = K * rho on the same lattice as a DensityGrid.
struct VelocityGrid {
  GridGeometry geometry;
  std::vector<double> u1;
  std::vector<double> u2;
  double time = 0.0;

  VelocityGrid() = default;
  VelocityGrid(GridGeometry g, double t) : geometry(g), u1(g.size(), 0.0), u2(g.size(), 0.0), time(t) {}

  Vec2 at(std::size_t i, std::size_t j) const {
    const auto k = geometry.index(i, j);
    return {u1[k], u2[k]};
  }
  Vec2 interpolate(const Vec2& x) const {
    return {vortex::interpolate(geometry, u1, x), vortex::interpolate(geometry, u2, x)};
  }
  double max_speed() const {
    double m = 0.0;
    for (std::size_t k = 0; k < u1.size(); ++k) m = std::max(m, std::hypot(u1[k], u2[k]));
    return m;
  }
};

}  // namespace vortex
