#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vortex/grid.hpp"
#include "vortex/meanfield.hpp"
#include "vortex/rng.hpp"
#include "vortex/spectral.hpp"

namespace vortex {

/// Result of fitting the constant in a pointwise inequality on the masked grid.
struct BoundReport {
  std::string inequality_id;
  double fitted_constant = 0.0;  ///< smallest admissible constant (clamped at 0)
  double worst_ratio = -std::numeric_limits<double>::infinity();
  Vec2 worst_x{};
  double worst_t = 0.0;
  double mask_coverage = 0.0;    ///< fraction of grid points that entered the fit
  double cap = std::numeric_limits<double>::infinity();
  bool passed = false;
  std::size_t skipped = 0;       ///< samples rejected (harnack only)

  void observe(double ratio, const Vec2& x, double t) {
    if (ratio > worst_ratio) {
      worst_ratio = ratio;
      worst_x = x;
      worst_t = t;
    }
  }
  void finish() {
    fitted_constant = std::max({fitted_constant, worst_ratio, 0.0});
    passed = std::isfinite(fitted_constant) && fitted_constant <= cap;
  }
};

/// Combines per-snapshot reports of the same inequality.
inline BoundReport merge(const BoundReport& a, const BoundReport& b) {
  BoundReport out = a.worst_ratio >= b.worst_ratio ? a : b;
  out.fitted_constant = std::max(a.fitted_constant, b.fitted_constant);
  out.mask_coverage = std::min(a.mask_coverage, b.mask_coverage);
  out.skipped = a.skipped + b.skipped;
  out.cap = std::min(a.cap, b.cap);
  out.passed = std::isfinite(out.fitted_constant) && out.fitted_constant <= out.cap;
  return out;
}

inline constexpr double kDensityFloor = 1e-10;

/// f = log rho and its derivatives on one snapshot.
struct LogDensityFields {
  GridGeometry geometry;
  std::vector<double> f, f1, f2, f11, f12, f22, dt_f;
  std::vector<std::uint8_t> mask;
  double time = 0.0;
  double sigma = 1.0;

  Vec2 grad(std::size_t k) const { return {f1[k], f2[k]}; }
  double hess_frobenius(std::size_t k) const {
    return std::sqrt(f11[k] * f11[k] + 2.0 * f12[k] * f12[k] + f22[k] * f22[k]);
  }
  double coverage() const {
    std::size_t c = 0;
    for (auto m : mask) c += m;
    return static_cast<double>(c) / static_cast<double>(mask.size());
  }
};

namespace detail {

// Derivative at t_k of the quadratic through three (t, y) samples.
inline double three_point_derivative(double ta, double ya, double tb, double yb, double tc, double yc, double at) {
  const double la = ((at - tb) + (at - tc)) / ((ta - tb) * (ta - tc));
  const double lb = ((at - ta) + (at - tc)) / ((tb - ta) * (tb - tc));
  const double lc = ((at - ta) + (at - tb)) / ((tc - ta) * (tc - tb));
  return la * ya + lb * yb + lc * yc;
}

// Indices of the three snapshots used for the time derivative at k.
inline std::array<std::size_t, 3> time_stencil(std::size_t k, std::size_t count) {
  if (k == 0) return {0, 1, 2};
  if (k + 1 == count) return {count - 3, count - 2, count - 1};
  return {k - 1, k, k + 1};
}

struct Peak {
  double value;
  Vec2 x;
};

// Maximum of the quadratic model fitted to the 3x3 block around node (i, j).
// Falls back to the node value unless the model has a proper maximum within
// one cell and the whole block is finite.
inline Peak refined_peak(const GridGeometry& g, const std::vector<double>& field, std::size_t i, std::size_t j) {
  const Vec2 x0 = g.node(i, j);
  const double v0 = field[g.index(i, j)];
  if (i == 0 || j == 0 || i + 1 >= g.n || j + 1 >= g.n) return {v0, x0};
  double q[3][3];
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      q[dj + 1][di + 1] = field[g.index(i + di, j + dj)];
      if (!std::isfinite(q[dj + 1][di + 1])) return {v0, x0};
    }
  const double gx = 0.5 * (q[1][2] - q[1][0]), gy = 0.5 * (q[2][1] - q[0][1]);
  const double hxx = q[1][2] - 2.0 * v0 + q[1][0], hyy = q[2][1] - 2.0 * v0 + q[0][1];
  const double hxy = 0.25 * (q[2][2] - q[0][2] - q[2][0] + q[0][0]);
  const double det = hxx * hyy - hxy * hxy;
  if (!(hxx < 0.0 && det > 0.0)) return {v0, x0};
  const double dx = -(hyy * gx - hxy * gy) / det, dy = -(hxx * gy - hxy * gx) / det;
  if (std::abs(dx) > 1.0 || std::abs(dy) > 1.0) return {v0, x0};
  const double h = g.spacing();
  return {std::max(v0, v0 + 0.5 * (gx * dx + gy * dy)), {x0.x1 + dx * h, x0.x2 + dy * h}};
}

// Observes the refined maximum of a field that is NaN off the mask.
// Returns the number of finite entries.
inline std::size_t observe_sup(BoundReport& rep, const GridGeometry& g, const std::vector<double>& field, double t) {
  std::size_t best = field.size(), used = 0;
  for (std::size_t k = 0; k < field.size(); ++k) {
    if (!std::isfinite(field[k])) continue;
    ++used;
    if (best == field.size() || field[k] > field[best]) best = k;
  }
  if (best < field.size()) {
    const Peak p = refined_peak(g, field, best % g.n, best / g.n);
    rep.observe(p.value, p.x, t);
  }
  return used;
}

}  // namespace detail

/// Fields at snapshot k. Space derivatives come from spectral derivatives of
/// rho (grad f = grad rho / rho, hess f = hess rho / rho - grad f grad f^T);
/// the time derivative is the three-point difference of log rho, centered
/// except at the ends. A node is masked in when rho >= floor there on every
/// snapshot of the time stencil and it is not on the boundary ring.
inline LogDensityFields log_fields_at(std::span<const DensityGrid> series, std::size_t k, SpectralPlan& plan,
                                      double floor = kDensityFloor) {
  if (series.size() < 3) throw std::invalid_argument("log_fields needs at least 3 snapshots");
  const GridGeometry& g = series[k].geometry;
  for (const auto& s : series)
    if (!(s.geometry == g)) throw std::invalid_argument("snapshots must share one geometry");
  if (!(plan.geometry() == g)) throw std::invalid_argument("spectral plan does not match the snapshots");
  const std::size_t n = g.n, size = g.size();
  const auto ts = detail::time_stencil(k, series.size());
  const auto& rho = series[k].values;

  LogDensityFields out;
  out.geometry = g;
  out.time = series[k].time;
  out.sigma = series[k].sigma;
  out.f.assign(size, std::numeric_limits<double>::quiet_NaN());
  out.f1 = out.f2 = out.f11 = out.f12 = out.f22 = out.dt_f = out.f;
  out.mask.assign(size, 0);
  for (std::size_t idx = 0; idx < size; ++idx)
    if (rho[idx] > 0.0) out.f[idx] = std::log(rho[idx]);

  const auto r1 = plan.derivative(rho, 1, 0), r2 = plan.derivative(rho, 0, 1);
  const auto r11 = plan.derivative(rho, 2, 0), r12 = plan.derivative(rho, 1, 1), r22 = plan.derivative(rho, 0, 2);
  std::size_t covered = 0;
  for (std::size_t j = 1; j + 1 < n; ++j)
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const std::size_t idx = g.index(i, j);
      bool ok = true;
      for (std::size_t s : ts) ok = ok && series[s].values[idx] >= floor;
      if (!ok) continue;
      const double v = rho[idx];
      const double a = r1[idx] / v, b = r2[idx] / v;
      out.f1[idx] = a;
      out.f2[idx] = b;
      out.f11[idx] = r11[idx] / v - a * a;
      out.f12[idx] = r12[idx] / v - a * b;
      out.f22[idx] = r22[idx] / v - b * b;
      out.dt_f[idx] = detail::three_point_derivative(
          series[ts[0]].time, std::log(series[ts[0]].values[idx]), series[ts[1]].time,
          std::log(series[ts[1]].values[idx]), series[ts[2]].time, std::log(series[ts[2]].values[idx]),
          series[k].time);
      out.mask[idx] = 1;
      ++covered;
    }
  if (covered == 0) throw std::domain_error("every grid point is below the density floor");
  return out;
}

inline LogDensityFields log_fields_at(std::span<const DensityGrid> series, std::size_t k,
                                      double floor = kDensityFloor) {
  if (series.empty()) throw std::invalid_argument("log_fields needs at least 3 snapshots");
  SpectralPlan plan(series[k].geometry);
  return log_fields_at(series, k, plan, floor);
}

inline std::vector<LogDensityFields> log_fields(std::span<const DensityGrid> series, double floor = kDensityFloor) {
  std::vector<LogDensityFields> out;
  out.reserve(series.size());
  if (series.empty()) return out;
  SpectralPlan plan(series.front().geometry);
  for (std::size_t k = 0; k < series.size(); ++k) out.push_back(log_fields_at(series, k, plan, floor));
  return out;
}

// ---------------------------------------------------------------------------
// Li-Yau gradient estimate and Harnack inequality

enum class LiYauRegion { outer, inner };  ///< |x| >= 2 and |x| <= 2

/// F = |grad f|^2 - alpha(x) d_t f with alpha = 1 + |x|^-2 outside radius 2
/// and 5/4 inside; NaN off the mask.
inline std::vector<double> li_yau_quantity(const LogDensityFields& fl) {
  const GridGeometry& g = fl.geometry;
  std::vector<double> F(g.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) {
      const std::size_t k = g.index(i, j);
      if (!fl.mask[k]) continue;
      const double r2 = norm2(g.node(i, j));
      const double alpha = r2 >= 4.0 ? 1.0 + 1.0 / r2 : 1.25;
      F[k] = norm2(fl.grad(k)) - alpha * fl.dt_f[k];
    }
  return F;
}

/// Bilinear interpolation of the Li-Yau quantity; throws if the stencil leaves the mask.
inline double li_yau_value(const LogDensityFields& fl, const Vec2& x) {
  const auto F = li_yau_quantity(fl);
  const double v = interpolate(fl.geometry, F, x);
  if (!std::isfinite(v)) throw std::domain_error("Li-Yau quantity requested outside the mask");
  return v;
}

inline BoundReport li_yau_check(const LogDensityFields& fl, LiYauRegion region, double cap = 1e6) {
  BoundReport rep;
  rep.inequality_id = region == LiYauRegion::outer ? "li_yau_outer" : "li_yau_inner";
  rep.cap = cap;
  const GridGeometry& g = fl.geometry;
  auto ratio = li_yau_quantity(fl);
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) {
      const std::size_t k = g.index(i, j);
      const double r2 = norm2(g.node(i, j));
      ratio[k] = (region == LiYauRegion::outer) == (r2 >= 4.0) ? ratio[k] / (1.0 + r2)
                                                                : std::numeric_limits<double>::quiet_NaN();
    }
  const std::size_t used = detail::observe_sup(rep, g, ratio, fl.time);
  if (used == 0) throw std::domain_error("Li-Yau region has no masked points");
  rep.mask_coverage = static_cast<double>(used) / static_cast<double>(g.size());
  rep.finish();
  return rep;
}

inline BoundReport li_yau_check(std::span<const LogDensityFields> series, LiYauRegion region, double cap = 1e6) {
  BoundReport rep = li_yau_check(series.front(), region, cap);
  for (std::size_t k = 1; k < series.size(); ++k) rep = merge(rep, li_yau_check(series[k], region, cap));
  return rep;
}

struct HarnackSample {
  Vec2 x1;
  double t1;
  Vec2 x2;
  double t2;
};

/// log rho at (x, t): bilinear in space, linear in time between snapshots.
/// Returns NaN when any stencil value is below the floor.
inline double log_density_at(std::span<const DensityGrid> series, const Vec2& x, double t, double floor) {
  if (t < series.front().time || t > series.back().time) return std::numeric_limits<double>::quiet_NaN();
  std::size_t k = 0;
  while (k + 2 < series.size() && series[k + 1].time <= t) ++k;
  const double ta = series[k].time, tb = series[k + 1].time;
  const double w = tb > ta ? (t - ta) / (tb - ta) : 0.0;
  double val[2];
  for (int s = 0; s < 2; ++s) {
    const DensityGrid& rho = series[k + s];
    BilinearStencil st;
    try {
      st = bilinear_stencil(rho.geometry, x);
    } catch (const DomainBreach&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    const double v00 = rho.at(st.i0, st.j0), v10 = rho.at(st.i0 + 1, st.j0);
    const double v01 = rho.at(st.i0, st.j0 + 1), v11 = rho.at(st.i0 + 1, st.j0 + 1);
    if (std::min({v00, v10, v01, v11}) < floor) return std::numeric_limits<double>::quiet_NaN();
    const double f00 = std::log(v00), f10 = std::log(v10), f01 = std::log(v01), f11 = std::log(v11);
    val[s] = (1.0 - st.wy) * ((1.0 - st.wx) * f00 + st.wx * f10) + st.wy * ((1.0 - st.wx) * f01 + st.wx * f11);
  }
  return (1.0 - w) * val[0] + w * val[1];
}

/// Deterministic sample pairs with x in the ball of radius R and t1 < t2 in [t_lo, t_hi].
inline std::vector<HarnackSample> harnack_samples(std::size_t count, double R, double t_lo, double t_hi,
                                                  std::uint64_t seed) {
  const RngStream rng(seed, StreamTag::test);
  std::vector<HarnackSample> out(count);
  for (std::size_t s = 0; s < count; ++s) {
    auto point = [&](std::uint64_t step) {
      const auto [u, v] = rng.uniform2(step, s);
      const double r = R * std::sqrt(u), th = kTwoPi * v;
      return Vec2{r * std::cos(th), r * std::sin(th)};
    };
    const auto [a, b] = rng.uniform2(2, s);
    const double ta = t_lo + (t_hi - t_lo) * a, tb = t_lo + (t_hi - t_lo) * b;
    out[s] = {point(0), std::min(ta, tb), point(1), std::max(ta, tb)};
  }
  return out;
}

/// Smallest C with f(x2,t2) - f(x1,t1) >= -C (|x1-x2|^2/(t2-t1) + R^2 (t2-t1)).
inline BoundReport harnack_check(std::span<const DensityGrid> series, std::span<const HarnackSample> samples, double R,
                                 double floor = kDensityFloor, double cap = 1e6) {
  if (series.size() < 2) throw std::invalid_argument("harnack_check needs at least 2 snapshots");
  if (!(R >= 2.0)) throw std::invalid_argument("harnack_check needs R >= 2");
  BoundReport rep;
  rep.inequality_id = "harnack";
  rep.cap = cap;
  std::size_t used = 0;
  for (const auto& s : samples) {
    if (!(s.t1 < s.t2) || norm(s.x1) > R || norm(s.x2) > R) {
      ++rep.skipped;
      continue;
    }
    const double f1 = log_density_at(series, s.x1, s.t1, floor);
    const double f2 = log_density_at(series, s.x2, s.t2, floor);
    if (!std::isfinite(f1) || !std::isfinite(f2)) {
      ++rep.skipped;
      continue;
    }
    const double dt = s.t2 - s.t1;
    const double scale = norm2(s.x1 - s.x2) / dt + R * R * dt;
    rep.observe((f1 - f2) / scale, s.x2, s.t2);
    ++used;
  }
  rep.mask_coverage = samples.empty() ? 0.0 : static_cast<double>(used) / static_cast<double>(samples.size());
  if (used == 0) throw std::domain_error("no usable Harnack samples");
  rep.finish();
  return rep;
}

// ---------------------------------------------------------------------------
// Gaussian envelopes

/// Smallest c1 with rho >= exp(-c1 (1 + t)(1 + |x|^2)) on rho >= floor.
inline BoundReport gaussian_lower_check(std::span<const DensityGrid> series, double floor = kDensityFloor,
                                        double cap = 1e6) {
  BoundReport rep;
  rep.inequality_id = "gaussian_lower";
  rep.cap = cap;
  rep.mask_coverage = 1.0;
  for (const auto& rho : series) {
    const GridGeometry& g = rho.geometry;
    std::vector<double> ratio(g.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < g.n; ++j)
      for (std::size_t i = 0; i < g.n; ++i) {
        const double v = rho.at(i, j);
        if (v >= floor) ratio[g.index(i, j)] = -std::log(v) / ((1.0 + rho.time) * (1.0 + norm2(g.node(i, j))));
      }
    const std::size_t used = detail::observe_sup(rep, g, ratio, rho.time);
    rep.mask_coverage = std::min(rep.mask_coverage, static_cast<double>(used) / static_cast<double>(g.size()));
  }
  rep.finish();
  return rep;
}

/// Smallest C with rho <= C / (t v 1) exp(-|x|^2 / (8t + C)) on rho >= floor.
/// The envelope is increasing in C, so each violating point is resolved by bisection.
inline BoundReport gaussian_upper_check(std::span<const DensityGrid> series, double floor = kDensityFloor,
                                        double cap = 1e6) {
  BoundReport rep;
  rep.inequality_id = "gaussian_upper";
  rep.cap = cap;
  rep.mask_coverage = 1.0;
  double C = 0.0;
  auto holds = [](double c, double v, double r2, double t) {
    return c > 0.0 && std::log(v) <= std::log(c) - std::log(std::max(t, 1.0)) - r2 / (8.0 * t + c);
  };
  for (const auto& rho : series) {
    const GridGeometry& g = rho.geometry;
    const double t = rho.time;
    std::size_t used = 0;
    for (std::size_t j = 0; j < g.n; ++j)
      for (std::size_t i = 0; i < g.n; ++i) {
        const double v = rho.at(i, j);
        if (v < floor) continue;
        ++used;
        const double r2 = norm2(g.node(i, j));
        if (holds(C, v, r2, t)) continue;
        double lo = C, hi = std::max(1.0, 2.0 * C);
        while (!holds(hi, v, r2, t)) hi *= 2.0;
        for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
          const double mid = 0.5 * (lo + hi);
          (holds(mid, v, r2, t) ? hi : lo) = mid;
        }
        C = hi;
        rep.observe(C, g.node(i, j), t);
      }
    rep.mask_coverage = std::min(rep.mask_coverage, static_cast<double>(used) / static_cast<double>(g.size()));
  }
  rep.finish();
  return rep;
}

// ---------------------------------------------------------------------------
// Growth of log-derivatives

namespace detail {

// Least-squares slope b of y = a + b s.
inline double ls_slope(const std::vector<double>& s, const std::vector<double>& y) {
  const double n = static_cast<double>(s.size());
  double ms = 0, my = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    ms += s[k];
    my += y[k];
  }
  ms /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    sxy += (s[k] - ms) * (y[k] - my);
    sxx += (s[k] - ms) * (s[k] - ms);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

// Fit for q(x) <= M w(|x|) where w grows like `growth(r)` at infinity. The
// fitted constant is the larger of the masked sup of q / w and the asymptotic
// slope of q against growth(r) over the outer quarter of the masked radii.
template <class Q, class W, class G>
BoundReport growth_fit(const LogDensityFields& fl, std::string id, Q q, W w, G growth, double cap) {
  BoundReport rep;
  rep.inequality_id = std::move(id);
  rep.cap = cap;
  const GridGeometry& g = fl.geometry;
  double r_max = 0.0;
  std::vector<double> ratio(g.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) {
      const std::size_t k = g.index(i, j);
      if (!fl.mask[k]) continue;
      const double r = norm(g.node(i, j));
      r_max = std::max(r_max, r);
      ratio[k] = q(k) / w(r);
    }
  const std::size_t used = observe_sup(rep, g, ratio, fl.time);
  std::vector<double> s, y;
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) {
      const std::size_t k = g.index(i, j);
      const double r = norm(g.node(i, j));
      if (!fl.mask[k] || r < 0.75 * r_max) continue;
      s.push_back(growth(r));
      y.push_back(q(k));
    }
  if (s.size() >= 8) rep.fitted_constant = std::max(0.0, ls_slope(s, y));
  rep.mask_coverage = static_cast<double>(used) / static_cast<double>(g.size());
  rep.finish();
  return rep;
}

}  // namespace detail

struct GrowthReports {
  BoundReport grad;  ///< |grad log rho| <= M1 (1 + |x|)
  BoundReport hess;  ///< |hess log rho|_F <= M2 (1 + |x|^2)
};

inline GrowthReports growth_checks(const LogDensityFields& fl, double cap = 1e6) {
  GrowthReports out;
  out.grad = detail::growth_fit(
      fl, "log_gradient_M1", [&](std::size_t k) { return norm(fl.grad(k)); }, [](double r) { return 1.0 + r; },
      [](double r) { return r; }, cap);
  out.hess = detail::growth_fit(
      fl, "log_hessian_M2", [&](std::size_t k) { return fl.hess_frobenius(k); },
      [](double r) { return 1.0 + r * r; }, [](double r) { return r * r; }, cap);
  return out;
}

inline GrowthReports growth_checks(std::span<const LogDensityFields> series, double cap = 1e6) {
  GrowthReports out = growth_checks(series.front(), cap);
  for (std::size_t k = 1; k < series.size(); ++k) {
    const auto r = growth_checks(series[k], cap);
    out.grad = merge(out.grad, r.grad);
    out.hess = merge(out.hess, r.hess);
  }
  return out;
}

/// Initial-data hypothesis |grad log rho0|^2 <= C1 (1 + |x|^2).
inline BoundReport initial_gradient_check(const LogDensityFields& fl, double cap = 1e6) {
  return detail::growth_fit(
      fl, "initial_gradient_C1", [&](std::size_t k) { return norm2(fl.grad(k)); },
      [](double r) { return 1.0 + r * r; }, [](double r) { return r * r; }, cap);
}

// ---------------------------------------------------------------------------
// Decay of the vorticity, the velocity and their derivatives

namespace detail {

// Fourth-order central first derivative along axis 0 (x1) or 1 (x2); NaN near the boundary.
inline std::vector<double> fd4_derivative(const GridGeometry& g, const std::vector<double>& v, int axis) {
  const std::size_t n = g.n;
  const double h = g.spacing();
  std::vector<double> out(g.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 2; j + 2 < n; ++j)
    for (std::size_t i = 2; i + 2 < n; ++i) {
      auto at = [&](int d) {
        return axis == 0 ? v[g.index(i + d, j)] : v[g.index(i, j + d)];
      };
      out[g.index(i, j)] = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
    }
  return out;
}

}  // namespace detail

struct DecayReports {
  BoundReport a1;          ///< ||u||_inf <= A1 / sqrt(t v 1)
  BoundReport a2_rho_k1;   ///< ||grad rho||_inf <= A2 / (t v 1)^(3/2)
  BoundReport a2_rho_k2;   ///< ||hess rho||_inf <= A2 / (t v 1)^2
  BoundReport a2_u_k1;     ///< ||grad u||_inf <= A2 / (t v 1)
  BoundReport a2_u_k2;     ///< ||hess u||_inf <= A2 / (t v 1)^(3/2)
  BoundReport a3;          ///< ||K * d_t rho||_inf <= A3 / (t v 1)^(3/2)

  double a2() const {
    return std::max({a2_rho_k1.fitted_constant, a2_rho_k2.fitted_constant, a2_u_k1.fitted_constant,
                     a2_u_k2.fitted_constant});
  }
  std::vector<BoundReport> all() const { return {a1, a2_rho_k1, a2_rho_k2, a2_u_k1, a2_u_k2, a3}; }
};

/// Sup norms on every snapshot, scaled by the decay rates. Derivatives of rho
/// are spectral; derivatives of u use fourth-order differences because the
/// planar velocity is not periodic. K * d_t rho uses centered differences in time.
inline DecayReports decay_checks(std::span<const DensityGrid> series, MeanFieldSolver& solver, double cap = 1e6) {
  if (series.size() < 3) throw std::invalid_argument("decay_checks needs at least 3 snapshots");
  DecayReports out;
  out.a1.inequality_id = "velocity_A1";
  out.a2_rho_k1.inequality_id = "rho_gradient_A2";
  out.a2_rho_k2.inequality_id = "rho_hessian_A2";
  out.a2_u_k1.inequality_id = "velocity_gradient_A2";
  out.a2_u_k2.inequality_id = "velocity_hessian_A2";
  out.a3.inequality_id = "velocity_time_derivative_A3";
  for (auto* r : {&out.a1, &out.a2_rho_k1, &out.a2_rho_k2, &out.a2_u_k1, &out.a2_u_k2, &out.a3}) {
    r->cap = cap;
    r->mask_coverage = 1.0;
  }
  SpectralPlan& plan = solver.plan();
  const GridGeometry& g = solver.geometry();
  for (std::size_t k = 0; k < series.size(); ++k) {
    const DensityGrid& rho = series[k];
    const double t = rho.time, tv = std::max(t, 1.0);
    const VelocityGrid u = solver.velocity(rho);
    auto sup = [&](BoundReport& rep, std::vector<double> field, double weight) {
      for (auto& v : field) v *= weight;
      detail::observe_sup(rep, g, field, t);
    };
    std::vector<double> speed(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) speed[i] = std::hypot(u.u1[i], u.u2[i]);
    sup(out.a1, speed, std::sqrt(tv));

    const auto r1 = plan.derivative(rho.values, 1, 0), r2 = plan.derivative(rho.values, 0, 1);
    const auto r11 = plan.derivative(rho.values, 2, 0), r12 = plan.derivative(rho.values, 1, 1),
               r22 = plan.derivative(rho.values, 0, 2);
    std::vector<double> g1(g.size()), g2(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g1[i] = std::hypot(r1[i], r2[i]);
      g2[i] = std::sqrt(r11[i] * r11[i] + 2.0 * r12[i] * r12[i] + r22[i] * r22[i]);
    }
    sup(out.a2_rho_k1, g1, std::pow(tv, 1.5));
    sup(out.a2_rho_k2, g2, tv * tv);

    const auto u11 = detail::fd4_derivative(g, u.u1, 0), u12 = detail::fd4_derivative(g, u.u1, 1);
    const auto u21 = detail::fd4_derivative(g, u.u2, 0), u22 = detail::fd4_derivative(g, u.u2, 1);
    std::vector<double> gu(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      gu[i] = std::sqrt(u11[i] * u11[i] + u12[i] * u12[i] + u21[i] * u21[i] + u22[i] * u22[i]);
    sup(out.a2_u_k1, gu, tv);
    std::vector<double> hu(g.size(), 0.0);
    for (const auto* c : {&u11, &u12, &u21, &u22})
      for (int axis = 0; axis < 2; ++axis) {
        const auto d = detail::fd4_derivative(g, *c, axis);
        for (std::size_t i = 0; i < g.size(); ++i) hu[i] += d[i] * d[i];
      }
    for (auto& v : hu) v = std::sqrt(v);
    sup(out.a2_u_k2, hu, std::pow(tv, 1.5));

    const auto ts = detail::time_stencil(k, series.size());
    DensityGrid drho(g, t, rho.sigma);
    for (std::size_t i = 0; i < g.size(); ++i)
      drho.values[i] = detail::three_point_derivative(series[ts[0]].time, series[ts[0]].values[i], series[ts[1]].time,
                                                      series[ts[1]].values[i], series[ts[2]].time,
                                                      series[ts[2]].values[i], t);
    const VelocityGrid du = solver.velocity(drho);
    for (std::size_t i = 0; i < g.size(); ++i) speed[i] = std::hypot(du.u1[i], du.u2[i]);
    sup(out.a3, speed, std::pow(tv, 1.5));
  }
  for (auto* r : {&out.a1, &out.a2_rho_k1, &out.a2_rho_k2, &out.a2_u_k1, &out.a2_u_k2, &out.a3}) r->finish();
  return out;
}

// ---------------------------------------------------------------------------
// Equalities and inequalities for rho log rho, rho (log rho)^2 and friends

struct ResidualStats {
  std::string identity_id;
  double max_abs = 0.0;    ///< max masked |lhs - rhs|
  double max_scale = 0.0;  ///< max masked |rhs|, for context
  double time = 0.0;
  std::size_t points = 0;
};

struct BochnerReport {
  ResidualStats wlogw;
  ResidualStats wlogwsquare;
  BoundReport nablaw;  ///< smallest A with (d_t - Delta_f)(|grad rho|^2/rho) <= 2A/(t v 1) |grad rho|^2/rho
  BoundReport hessw;   ///< same for |hess rho|^2/rho with 5A/(t v 1) and A/(t v 1)^2 weights
};

/// Residuals at the middle snapshot of (prev, cur, next). The operator is
/// d_t - Delta_f with Delta_f X = sigma Delta X - u . grad X (so that
/// d_t rho = Delta_f rho). Space derivatives are spectral; d_t is the
/// three-point difference. Inequality checks use `a2` as the cap.
inline BochnerReport bochner_residuals(const DensityGrid& prev, const DensityGrid& cur, const DensityGrid& next,
                                       MeanFieldSolver& solver, double a2 = std::numeric_limits<double>::infinity(),
                                       double floor = kDensityFloor) {
  const GridGeometry& g = solver.geometry();
  const std::size_t size = g.size();
  SpectralPlan& plan = solver.plan();
  const double sigma = cur.sigma, t = cur.time, tv = std::max(t, 1.0);
  const VelocityGrid u = solver.velocity(cur);

  // d_t X - sigma Delta X + u . grad X for a field built pointwise from rho.
  auto heat_transport = [&](auto&& build) {
    std::vector<double> xp(size), xc(size), xn(size);
    for (std::size_t i = 0; i < size; ++i) {
      xp[i] = build(prev, i);
      xc[i] = build(cur, i);
      xn[i] = build(next, i);
    }
    const auto x1 = plan.derivative(xc, 1, 0), x2 = plan.derivative(xc, 0, 1);
    const auto x11 = plan.derivative(xc, 2, 0), x22 = plan.derivative(xc, 0, 2);
    std::vector<double> out(size);
    for (std::size_t i = 0; i < size; ++i) {
      const double dt = detail::three_point_derivative(prev.time, xp[i], cur.time, xc[i], next.time, xn[i], t);
      out[i] = dt - sigma * (x11[i] + x22[i]) + u.u1[i] * x1[i] + u.u2[i] * x2[i];
    }
    return out;
  };

  struct Derivs {
    std::vector<double> d1, d2, d11, d12, d22;
  };
  auto derivs = [&](const DensityGrid& r) {
    return Derivs{plan.derivative(r.values, 1, 0), plan.derivative(r.values, 0, 1), plan.derivative(r.values, 2, 0),
                  plan.derivative(r.values, 1, 1), plan.derivative(r.values, 0, 2)};
  };
  const Derivs dp = derivs(prev), dc = derivs(cur), dn = derivs(next);
  auto pick = [&](const DensityGrid& r) -> const Derivs& { return &r == &prev ? dp : (&r == &next ? dn : dc); };

  auto wlogw = [](const DensityGrid& r, std::size_t i) {
    const double v = r.values[i];
    return v > 0.0 ? v * std::log(v) : 0.0;
  };
  auto wlog2 = [](const DensityGrid& r, std::size_t i) {
    const double v = r.values[i];
    return v > 0.0 ? v * std::log(v) * std::log(v) : 0.0;
  };
  // Regularized below the floor to keep the spectral derivatives clean.
  auto grad_sq_over = [&](const DensityGrid& r, std::size_t i) {
    const Derivs& d = pick(r);
    return (d.d1[i] * d.d1[i] + d.d2[i] * d.d2[i]) / std::max(r.values[i], floor);
  };
  auto hess_sq_over = [&](const DensityGrid& r, std::size_t i) {
    const Derivs& d = pick(r);
    return (d.d11[i] * d.d11[i] + 2.0 * d.d12[i] * d.d12[i] + d.d22[i] * d.d22[i]) / std::max(r.values[i], floor);
  };

  const auto l1 = heat_transport(wlogw);
  const auto l2 = heat_transport(wlog2);
  const auto l3 = heat_transport(grad_sq_over);
  const auto l4 = heat_transport(hess_sq_over);

  BochnerReport rep;
  rep.wlogw.identity_id = "wlogw";
  rep.wlogwsquare.identity_id = "wlogwsquare";
  rep.wlogw.time = rep.wlogwsquare.time = t;
  rep.nablaw.inequality_id = "nablawsquare";
  rep.hessw.inequality_id = "hessianw";
  rep.nablaw.cap = rep.hessw.cap = a2;

  double wmax = 0.0, hmax = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    if (cur.values[i] >= floor) {
      wmax = std::max(wmax, grad_sq_over(cur, i));
      hmax = std::max(hmax, hess_sq_over(cur, i));
    }

  std::size_t used = 0;
  for (std::size_t j = 1; j + 1 < g.n; ++j)
    for (std::size_t i = 1; i + 1 < g.n; ++i) {
      const std::size_t k = g.index(i, j);
      if (prev.values[k] < floor || cur.values[k] < floor || next.values[k] < floor) continue;
      ++used;
      const double v = cur.values[k];
      const double gq = grad_sq_over(cur, k), hq = hess_sq_over(cur, k);
      const double rhs1 = -sigma * gq;
      const double rhs2 = -2.0 * sigma * gq * (1.0 + std::log(v));
      rep.wlogw.max_abs = std::max(rep.wlogw.max_abs, std::abs(l1[k] - rhs1));
      rep.wlogw.max_scale = std::max(rep.wlogw.max_scale, std::abs(rhs1));
      rep.wlogwsquare.max_abs = std::max(rep.wlogwsquare.max_abs, std::abs(l2[k] - rhs2));
      rep.wlogwsquare.max_scale = std::max(rep.wlogwsquare.max_scale, std::abs(rhs2));
      const Vec2 x = g.node(i, j);
      // Weights too small relative to the field maximum carry no information.
      if (gq > 1e-6 * wmax) rep.nablaw.observe(l3[k] * tv / (2.0 * gq), x, t);
      const double hw = 5.0 * hq / tv + gq / (tv * tv);
      if (hw > 1e-6 * (5.0 * hmax + wmax)) rep.hessw.observe(l4[k] / hw, x, t);
    }
  rep.wlogw.points = rep.wlogwsquare.points = used;
  rep.nablaw.mask_coverage = rep.hessw.mask_coverage = static_cast<double>(used) / static_cast<double>(size);
  rep.nablaw.finish();
  rep.hessw.finish();
  return rep;
}

struct SuiteOptions {
  double harnack_radius = 2.0;
  std::size_t harnack_samples = 2000;
  std::uint64_t harnack_seed = 7;
  double floor = kDensityFloor;
  double cap = 1e6;
};

/// Every fitted constant of a solved series, in a fixed order: C1, M1, M2,
/// Li-Yau (outer, inner), c1, C2', Harnack, A1, the four A2 parts and A3.
struct SuiteReport {
  std::vector<BoundReport> reports;
  double li_yau_probe = std::numeric_limits<double>::quiet_NaN();  ///< F at (2, 0) on the snapshot nearest probe_time

  const BoundReport& find(const std::string& id) const {
    for (const auto& r : reports)
      if (r.inequality_id == id) return r;
    throw std::out_of_range("no report named " + id);
  }
  /// Largest of the four A2 parts.
  double a2() const {
    double m = 0.0;
    for (const char* id : {"rho_gradient_A2", "rho_hessian_A2", "velocity_gradient_A2", "velocity_hessian_A2"})
      m = std::max(m, find(id).fitted_constant);
    return m;
  }
};

inline SuiteReport regularity_suite(std::span<const DensityGrid> series, MeanFieldSolver& solver,
                                    const SuiteOptions& opt = {}, double probe_time = -1.0) {
  if (series.size() < 3) throw std::invalid_argument("regularity_suite needs at least 3 snapshots");
  SuiteReport out;
  SpectralPlan& plan = solver.plan();
  BoundReport outer, inner;
  GrowthReports growth;
  std::size_t probe = series.size();
  if (probe_time >= 0.0) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < series.size(); ++k)
      if (std::abs(series[k].time - probe_time) < best) {
        best = std::abs(series[k].time - probe_time);
        probe = k;
      }
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto f = log_fields_at(series, k, plan, opt.floor);
    const auto a = li_yau_check(f, LiYauRegion::outer, opt.cap), b = li_yau_check(f, LiYauRegion::inner, opt.cap);
    const auto gr = growth_checks(f, opt.cap);
    if (k == 0) {
      out.reports.push_back(initial_gradient_check(f, opt.cap));
      outer = a;
      inner = b;
      growth = gr;
    } else {
      outer = merge(outer, a);
      inner = merge(inner, b);
      growth.grad = merge(growth.grad, gr.grad);
      growth.hess = merge(growth.hess, gr.hess);
    }
    if (k == probe) out.li_yau_probe = li_yau_value(f, {2.0, 0.0});
  }
  out.reports.push_back(growth.grad);
  out.reports.push_back(growth.hess);
  out.reports.push_back(outer);
  out.reports.push_back(inner);
  out.reports.push_back(gaussian_lower_check(series, opt.floor, opt.cap));
  out.reports.push_back(gaussian_upper_check(series, opt.floor, opt.cap));
  const auto hs = harnack_samples(opt.harnack_samples, opt.harnack_radius, series.front().time, series.back().time,
                                  opt.harnack_seed);
  out.reports.push_back(harnack_check(series, hs, opt.harnack_radius, opt.floor, opt.cap));
  for (auto& r : decay_checks(series, solver, opt.cap).all()) out.reports.push_back(std::move(r));
  return out;
}

}  // namespace vortex
