#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vortex/grid.hpp"
#include "vortex/kernel.hpp"
#include "vortex/meanfield.hpp"
#include "vortex/particle.hpp"
#include "vortex/regularity.hpp"

namespace vortex {

/// 1600^2 + 36 e^4.
inline const double kJabinWangConstant = 1600.0 * 1600.0 + 36.0 * std::pow(std::numbers::e, 4);

/// Everything phi(x, y) needs on one snapshot: rho and its spectral gradient,
/// u = K * rho, and grad log rho on the mask (rho >= floor on the five-point
/// cross around the node).
struct PhiField {
  GridGeometry geometry;
  double time = 0.0;
  std::vector<double> rho, r1, r2, u1, u2, g1, g2;
  std::vector<double> a;            ///< u . grad log rho, NaN off the mask
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> masked;  ///< masked node indices in grid order

  double drift_term(std::size_t k) const { return a[k]; }
  double coverage() const { return static_cast<double>(masked.size()) / static_cast<double>(geometry.size()); }
};

inline PhiField phi_field(const DensityGrid& rho, MeanFieldSolver& solver, double floor = kDensityFloor) {
  const GridGeometry& g = rho.geometry;
  if (!(solver.geometry() == g)) throw std::invalid_argument("solver grid does not match the density");
  PhiField out;
  out.geometry = g;
  out.time = rho.time;
  out.rho = rho.values;
  out.r1 = solver.plan().derivative(rho.values, 1, 0);
  out.r2 = solver.plan().derivative(rho.values, 0, 1);
  const VelocityGrid u = solver.velocity(rho);
  out.u1 = u.u1;
  out.u2 = u.u2;
  out.g1.assign(g.size(), std::numeric_limits<double>::quiet_NaN());
  out.g2 = out.g1;
  out.mask.assign(g.size(), 0);
  // Fourth-order differences of log rho: exact for Gaussian log-densities and
  // free of the 1/rho amplification that spectral grad rho / rho suffers near the floor.
  const double h = g.spacing();
  const auto& v = rho.values;
  for (std::size_t j = 2; j + 2 < g.n; ++j)
    for (std::size_t i = 2; i + 2 < g.n; ++i) {
      const std::size_t k = g.index(i, j);
      bool ok = true;
      for (int d = -2; d <= 2 && ok; ++d) ok = v[g.index(i + d, j)] >= floor && v[g.index(i, j + d)] >= floor;
      if (!ok) continue;
      auto lg = [&](int di, int dj) { return std::log(v[g.index(i + di, j + dj)]); };
      out.mask[k] = 1;
      out.g1[k] = (-lg(2, 0) + 8.0 * lg(1, 0) - 8.0 * lg(-1, 0) + lg(-2, 0)) / (12.0 * h);
      out.g2[k] = (-lg(0, 2) + 8.0 * lg(0, 1) - 8.0 * lg(0, -1) + lg(0, -2)) / (12.0 * h);
      out.masked.push_back(k);
    }
  if (out.masked.empty()) throw std::domain_error("every grid point is below the density floor");
  out.a.assign(g.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k : out.masked) out.a[k] = out.u1[k] * out.g1[k] + out.u2[k] * out.g2[k];
  return out;
}

namespace detail {

// phi from the pieces at x and y; K(0) = 0.
inline double phi_value(double ax, double ay, const Vec2& x, const Vec2& y, const Vec2& gx, const Vec2& gy,
                        bool pair_term = true) {
  double v = 0.5 * (ax + ay);
  if (pair_term) {
    const Vec2 d = x - y;
    const double r2 = norm2(d);
    if (r2 > 0.0) v -= 0.5 * kInvTwoPi * (-d.x2 * (gx.x1 - gy.x1) + d.x1 * (gx.x2 - gy.x2)) / r2;
  }
  return v;
}

struct PointData {
  Vec2 x, g;
  double a = 0.0;
};

// Bilinear in a = u . grad f and in grad f. Interpolating a itself keeps it
// zero between nodes when u is orthogonal to grad f at the nodes.
inline PointData point_data(const PhiField& f, const Vec2& x) {
  const GridGeometry& gm = f.geometry;
  BilinearStencil st;
  try {
    st = bilinear_stencil(gm, x);
  } catch (const DomainBreach&) {
    throw std::domain_error("phi evaluated outside the grid");
  }
  PointData out{x, {}, 0.0};
  for (std::size_t dj = 0; dj < 2; ++dj)
    for (std::size_t di = 0; di < 2; ++di) {
      const double w = (di ? st.wx : 1.0 - st.wx) * (dj ? st.wy : 1.0 - st.wy);
      if (w == 0.0) continue;
      const std::size_t k = gm.index(st.i0 + di, st.j0 + dj);
      if (!f.mask[k]) throw std::domain_error("phi evaluated outside the mask");
      out.a += w * f.a[k];
      out.g += Vec2{w * f.g1[k], w * f.g2[k]};
    }
  return out;
}

}  // namespace detail

/// phi(x, y) = 1/2 u(x).grad f(x) + 1/2 u(y).grad f(y) - 1/2 K(x - y).(grad f(x) - grad f(y)),
/// with f = log rho, bilinear in the node values. Throws off the mask.
inline double phi_eval(const Vec2& x, const Vec2& y, const PhiField& f) {
  const auto px = detail::point_data(f, x), py = detail::point_data(f, y);
  return detail::phi_value(px.a, py.a, x, y, px.g, py.g);
}

struct CancellationReport {
  double max_abs_x_integral = 0.0;  ///< max over sampled y of |int phi(x, y) rho(x) dx|
  double max_abs_y_integral = 0.0;  ///< max over sampled x of |int phi(x, y) rho(y) dy|
  std::size_t sampled = 0;
};

/// Quadrature of both cancellation integrals over the whole grid, for every
/// `stride`-th masked node as the fixed argument. rho grad log rho is written
/// as grad rho so that the integrands are defined off the mask too.
inline CancellationReport phi_cancellation_check(const PhiField& f, std::size_t stride = 16, bool pair_term = true) {
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  const GridGeometry& g = f.geometry;
  const double cell = g.cell_area();
  double mass = 0.0, div_term = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    mass += f.rho[k];
    div_term += f.u1[k] * f.r1[k] + f.u2[k] * f.r2[k];
  }
  mass *= cell;
  div_term *= cell;

  CancellationReport rep;
  for (std::size_t s = 0; s < f.masked.size(); s += stride) {
    const std::size_t kf = f.masked[s];
    const Vec2 z = g.node(kf % g.n, kf / g.n);
    const Vec2 gz{f.g1[kf], f.g2[kf]};
    const double az = f.drift_term(kf);
    // Sums of K(w - z) rho(w) and K(w - z) . grad rho(w) over the grid nodes w.
    Vec2 k_rho{};
    double k_grad = 0.0;
    if (pair_term) {
      for (std::size_t j = 0; j < g.n; ++j)
        for (std::size_t i = 0; i < g.n; ++i) {
          const std::size_t k = g.index(i, j);
          if (k == kf) continue;
          const Vec2 d = g.node(i, j) - z;
          const double inv = kInvTwoPi / norm2(d);
          const Vec2 kv{-d.x2 * inv, d.x1 * inv};
          k_rho += f.rho[k] * kv;
          k_grad += kv.x1 * f.r1[k] + kv.x2 * f.r2[k];
        }
      k_rho = cell * k_rho;
      k_grad *= cell;
    }
    // Fixed y = z: 1/2 int u.grad rho + 1/2 a(z) mass - 1/2 int K(x - z).(grad rho(x) - rho(x) grad f(z)).
    const double ix = 0.5 * div_term + 0.5 * az * mass - 0.5 * (k_grad - dot(k_rho, gz));
    // Fixed x = z: K(z - y) = -K(y - z).
    const double iy = 0.5 * az * mass + 0.5 * div_term + 0.5 * (dot(k_rho, gz) - k_grad);
    rep.max_abs_x_integral = std::max(rep.max_abs_x_integral, std::abs(ix));
    rep.max_abs_y_integral = std::max(rep.max_abs_y_integral, std::abs(iy));
    ++rep.sampled;
  }
  return rep;
}

struct GammaReport {
  double gamma = 0.0;
  double sup_ratio = 0.0;      ///< sup_p ||s||_{L^p(rho)} / p
  int argmax_p = 1;
  double lambda = 0.0;
  double lambda_route = 0.0;   ///< (1/lambda) int exp(lambda s) rho, an upper bound for sup_ratio
  double s_max = 0.0;          ///< max of s(x) = sup_y |phi(x, y)| on the mask
  double eta_max = 0.0;        ///< gamma(eta phi) < 1 for eta < eta_max
  BoundReport c1_prime;        ///< s(x) <= C1' (1 + sqrt t + |x|^2) on the mask
};

/// s(x) = max over masked y of |phi(x, y)| for every masked x (both on a
/// `stride` subgrid), extended off the mask by the fitted quadratic envelope.
/// Then sup over p = 1..p_max of ||s||_{L^p(rho dx)} / p, gamma = C_JW sup^2,
/// and the exponential route with lambda = 1 / (2 C1' (8t + C2')).
inline GammaReport gamma_estimate(const PhiField& f, double c2_prime, int p_max = 64, std::size_t stride = 1,
                                  double cap = 1e6) {
  if (p_max < 8) throw std::invalid_argument("p_max must be at least 8");
  if (!(c2_prime > 0.0)) throw std::invalid_argument("C2' must be positive");
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  const GridGeometry& g = f.geometry;
  const double t = f.time, cell = g.cell_area() * static_cast<double>(stride * stride);

  struct Node {
    std::size_t k;
    Vec2 x, grad;
    double a;
  };
  std::vector<Node> nodes;
  for (std::size_t k : f.masked) {
    const std::size_t i = k % g.n, j = k / g.n;
    if (i % stride != 0 || j % stride != 0) continue;
    nodes.push_back({k, g.node(i, j), {f.g1[k], f.g2[k]}, f.drift_term(k)});
  }
  if (nodes.empty()) throw std::domain_error("no masked nodes on the stride subgrid");

  std::vector<double> s(nodes.size(), 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    double m = 0.0;
    for (std::size_t b = 0; b < nodes.size(); ++b)
      m = std::max(m, std::abs(detail::phi_value(nodes[a].a, nodes[b].a, nodes[a].x, nodes[b].x, nodes[a].grad,
                                                 nodes[b].grad)));
    s[a] = m;
  }

  GammaReport rep;
  rep.c1_prime.inequality_id = "phi_growth_C1prime";
  rep.c1_prime.cap = cap;
  rep.c1_prime.mask_coverage = f.coverage();
  const double root_t = std::sqrt(std::max(t, 0.0));
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    rep.s_max = std::max(rep.s_max, s[a]);
    rep.c1_prime.observe(s[a] / (1.0 + root_t + norm2(nodes[a].x)), nodes[a].x, t);
  }
  rep.c1_prime.finish();
  const double c1 = rep.c1_prime.fitted_constant;

  // (value, weight) pairs: masked subgrid nodes plus the envelope on the unmasked subgrid nodes.
  std::vector<std::pair<double, double>> mass_points;
  for (std::size_t a = 0; a < nodes.size(); ++a) mass_points.emplace_back(s[a], f.rho[nodes[a].k] * cell);
  for (std::size_t j = 0; j < g.n; j += stride)
    for (std::size_t i = 0; i < g.n; i += stride) {
      const std::size_t k = g.index(i, j);
      if (f.mask[k] || !(f.rho[k] > 0.0)) continue;
      mass_points.emplace_back(c1 * (1.0 + root_t + norm2(g.node(i, j))), f.rho[k] * cell);
    }

  for (int p = 1; p <= p_max; ++p) {
    // log sum w s^p by log-sum-exp.
    double lmax = -std::numeric_limits<double>::infinity();
    for (const auto& [v, w] : mass_points)
      if (v > 0.0 && w > 0.0) lmax = std::max(lmax, p * std::log(v) + std::log(w));
    double norm_p = 0.0;
    if (std::isfinite(lmax)) {
      double acc = 0.0;
      for (const auto& [v, w] : mass_points)
        if (v > 0.0 && w > 0.0) acc += std::exp(p * std::log(v) + std::log(w) - lmax);
      norm_p = std::exp((lmax + std::log(acc)) / p);
    }
    if (norm_p / p > rep.sup_ratio) {
      rep.sup_ratio = norm_p / p;
      rep.argmax_p = p;
    }
  }
  rep.gamma = kJabinWangConstant * rep.sup_ratio * rep.sup_ratio;
  rep.eta_max = rep.gamma > 0.0 ? 1.0 / std::sqrt(rep.gamma) : std::numeric_limits<double>::infinity();

  if (c1 > 0.0) {
    rep.lambda = 1.0 / (2.0 * c1 * (8.0 * t + c2_prime));
    double integral = 0.0;
    for (const auto& [v, w] : mass_points) integral += std::exp(rep.lambda * v) * w;
    if (!std::isfinite(integral))
      throw std::overflow_error("exponential moment diverges: lambda = " + std::to_string(rep.lambda) +
                                ", max s = " + std::to_string(rep.s_max));
    rep.lambda_route = integral / rep.lambda;
  }
  return rep;
}

/// eta(t) = 1 / (C5 (1 + t)).
inline double eta_schedule(double t, double c5) {
  if (!(c5 > 0.0)) throw std::invalid_argument("C5 must be positive");
  if (!(t >= 0.0)) throw std::invalid_argument("t must be nonnegative");
  return 1.0 / (c5 * (1.0 + t));
}

struct EntropyBudget {
  double kernel_term = 0.0;      ///< mean over runs of (1/N^2) sum_ij (K(x_i - x_j) - u(x_i)) . grad f(x_i)
  double kernel_term_se = 0.0;
  double log_moment = 0.0;       ///< second-order proxy for log E exp(N eta Phi_N) under i.i.d. rho
  double dv_bound = 0.0;         ///< (1/eta) (H + log_moment / N)
  double eta = 0.0;
  std::size_t excluded = 0;      ///< particles whose stencil left the mask
};

/// Monte Carlo kernel term over the runs and the Donsker-Varadhan bound with
/// the exponential moment replaced by its cumulant expansion
/// eta D + eta^2 / 2 (2 (N-1)/N S + V/N), where D = int phi(x,x) rho,
/// S = int int phi^2 rho rho and V = Var phi(x,x); the pair moments come from
/// quadrature on a `stride` subgrid.
inline EntropyBudget entropy_budget(std::span<const ParticleEnsemble> runs, const PhiField& f, double eta, double h,
                                    std::size_t stride = 4) {
  if (runs.empty()) throw std::invalid_argument("entropy_budget needs runs");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  const std::size_t n = runs.front().size();
  for (const auto& r : runs)
    if (r.size() != n) throw std::invalid_argument("runs must share N");

  EntropyBudget out;
  out.eta = eta;
  std::vector<double> per_run;
  for (const auto& run : runs) {
    const auto drift = drift_direct(run);  // (1/N) sum_j K(x_i - x_j)
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      detail::PointData p;
      try {
        p = detail::point_data(f, run.positions[i]);
      } catch (const std::domain_error&) {
        ++out.excluded;
        continue;
      }
      acc += dot(drift[i], p.g) - p.a;
    }
    per_run.push_back(acc / static_cast<double>(n));
  }
  const double m = static_cast<double>(per_run.size());
  for (double v : per_run) out.kernel_term += v;
  out.kernel_term /= m;
  if (per_run.size() > 1) {
    double var = 0.0;
    for (double v : per_run) var += (v - out.kernel_term) * (v - out.kernel_term);
    out.kernel_term_se = std::sqrt(var / (m - 1.0) / m);
  }

  const GridGeometry& g = f.geometry;
  const double cell = g.cell_area() * static_cast<double>(stride * stride);
  std::vector<std::size_t> sub;
  for (std::size_t k : f.masked)
    if ((k % g.n) % stride == 0 && (k / g.n) % stride == 0) sub.push_back(k);
  double d = 0.0, d2 = 0.0, s = 0.0;
  for (std::size_t a : sub) {
    const double w = f.rho[a] * cell, ta = f.drift_term(a);
    d += ta * w;
    d2 += ta * ta * w;
    const Vec2 xa = g.node(a % g.n, a / g.n), ga{f.g1[a], f.g2[a]};
    double inner = 0.0;
    for (std::size_t b : sub) {
      const double v = detail::phi_value(ta, f.drift_term(b), xa, g.node(b % g.n, b / g.n), ga, {f.g1[b], f.g2[b]});
      inner += v * v * f.rho[b] * cell;
    }
    s += inner * w;
  }
  const double nn = static_cast<double>(n);
  out.log_moment = eta * d + 0.5 * eta * eta * (2.0 * (nn - 1.0) / nn * s + (d2 - d * d) / nn);
  out.dv_bound = (h + out.log_moment / nn) / eta;
  return out;
}

}  // namespace vortex
