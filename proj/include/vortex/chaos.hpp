#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vortex/grid.hpp"
#include "vortex/particle.hpp"

namespace vortex {

enum class EstimatorKind { histogram, kde, exact };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::histogram: return "histogram";
    case EstimatorKind::kde: return "kde";
    case EstimatorKind::exact: return "exact";
  }
  return "?";
}

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kde;
  double bandwidth = 0.0;          ///< kde only; 0 selects Silverman's rule
  GridGeometry grid{8.0, 128};     ///< per-coordinate grid; k = 2 uses grid.n^4 cells
  std::size_t min_samples = 1000;
};

/// Density estimate of the k-particle marginal on grid^k. Entries are stored
/// with the first coordinate pair fastest: index = i1 + n (j1 + n (i2 + n j2)).
struct MarginalEstimate {
  int k = 1;
  EstimatorKind kind = EstimatorKind::kde;
  double bandwidth = 0.0;
  GridGeometry geometry;
  std::vector<double> density;
  std::size_t sample_count = 0;
  std::size_t dropped = 0;  ///< pooled samples that fell outside the grid

  double cell_volume() const { return std::pow(geometry.cell_area(), k); }
  double mass() const {
    double s = 0.0;
    for (double v : density) s += v;
    return s * cell_volume();
  }
};

namespace detail {

// Discrete Gaussian weights on the grid spacing, truncated at 4 bandwidths and summing to 1.
inline std::vector<double> gaussian_taps(double bandwidth, double h) {
  const int half = static_cast<int>(std::ceil(4.0 * bandwidth / h));
  std::vector<double> w(2 * half + 1);
  double s = 0.0;
  for (int m = -half; m <= half; ++m) {
    const double z = m * h / bandwidth;
    s += w[m + half] = std::exp(-0.5 * z * z);
  }
  for (auto& v : w) v /= s;
  return w;
}

// Convolves every axis of a dims-dimensional n^dims array with the taps (zero outside).
inline void smooth_axes(std::vector<double>& a, std::size_t n, int dims, const std::vector<double>& taps) {
  const int half = static_cast<int>(taps.size() / 2);
  std::vector<double> line(n), out(n);
  std::size_t stride = 1;
  for (int axis = 0; axis < dims; ++axis, stride *= n) {
    const std::size_t outer = a.size() / (n * stride);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t inner = 0; inner < stride; ++inner) {
        const std::size_t base = o * n * stride + inner;
        for (std::size_t i = 0; i < n; ++i) line[i] = a[base + i * stride];
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          const int lo = std::max(-half, -static_cast<int>(i));
          const int hi = std::min(half, static_cast<int>(n - 1 - i));
          for (int m = lo; m <= hi; ++m) s += taps[m + half] * line[i + m];
          out[i] = s;
        }
        for (std::size_t i = 0; i < n; ++i) a[base + i * stride] = out[i];
      }
  }
}

// Nodes and weights of 4-point Gauss-Legendre on [-1, 1].
inline constexpr std::array<double, 4> kGlNodes{-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                                                0.8611363115940526};
inline constexpr std::array<double, 4> kGlWeights{0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                                  0.3478548451374538};

// Grid position of coordinate x in units of the spacing.
inline double grid_coordinate(const GridGeometry& g, double x) { return (x + g.half_width) / g.spacing(); }

inline void normalize(std::vector<double>& v, double cell) {
  double s = 0.0;
  for (double x : v) s += x;
  if (!(s > 0.0)) throw std::domain_error("density estimate has no mass on the grid");
  const double f = 1.0 / (s * cell);
  for (auto& x : v) x *= f;
}

}  // namespace detail

/// Silverman's rule for a d-dimensional Gaussian kernel with a common bandwidth.
inline double silverman_bandwidth(std::span<const double> coordinates, int d) {
  if (coordinates.size() < 2) throw std::invalid_argument("silverman bandwidth needs samples");
  double m = 0.0;
  for (double c : coordinates) m += c;
  m /= static_cast<double>(coordinates.size());
  double v = 0.0;
  for (double c : coordinates) v += (c - m) * (c - m);
  v /= static_cast<double>(coordinates.size() - 1);
  const double count = static_cast<double>(coordinates.size()) / d;
  return std::sqrt(v) * std::pow(4.0 / (d + 2.0), 1.0 / (d + 4.0)) * std::pow(count, -1.0 / (d + 4.0));
}

/// Density of the first k particles, pooled over particles (k = 1) or
/// disjoint pairs (k = 2) of every run by exchangeability. The kde bins
/// linearly onto the nodes and smooths with a truncated Gaussian; the
/// histogram bins to the nearest node.
inline MarginalEstimate marginal_density(std::span<const ParticleEnsemble> runs, int k, const EstimatorConfig& cfg = {}) {
  if (runs.empty()) throw std::invalid_argument("marginal_density needs at least one run");
  if (k != 1 && k != 2) throw std::invalid_argument("marginal order must be 1 or 2");
  if (cfg.kind == EstimatorKind::exact) throw std::invalid_argument("exact is not a sample estimator");
  const GridGeometry& g = cfg.grid;
  g.validate();
  const std::size_t n = g.n;

  std::vector<std::array<Vec2, 2>> samples;
  for (const auto& run : runs) {
    const auto& p = run.positions;
    if (k == 1)
      for (const auto& x : p) samples.push_back({x, Vec2{}});
    else
      for (std::size_t i = 0; i + 1 < p.size(); i += 2) samples.push_back({p[i], p[i + 1]});
  }
  if (samples.size() < cfg.min_samples)
    throw std::invalid_argument("insufficient samples: " + std::to_string(samples.size()) + " pooled, need " +
                                std::to_string(cfg.min_samples));

  MarginalEstimate est;
  est.k = k;
  est.kind = cfg.kind;
  est.geometry = g;
  est.sample_count = samples.size();
  std::size_t cells = 1;
  for (int d = 0; d < 2 * k; ++d) cells *= n;
  est.density.assign(cells, 0.0);

  if (cfg.kind == EstimatorKind::kde) {
    est.bandwidth = cfg.bandwidth;
    if (est.bandwidth == 0.0) {
      std::vector<double> coords;
      coords.reserve(samples.size() * 2 * k);
      for (const auto& s : samples)
        for (int a = 0; a < k; ++a) {
          coords.push_back(s[a].x1);
          coords.push_back(s[a].x2);
        }
      est.bandwidth = silverman_bandwidth(coords, 2 * k);
    }
    if (!(est.bandwidth > 0.0)) throw std::invalid_argument("kde bandwidth must be positive");
  }

  const std::size_t dims = 2 * static_cast<std::size_t>(k);
  for (const auto& s : samples) {
    std::array<std::size_t, 4> base{};
    std::array<double, 4> frac{};
    bool inside = true;
    for (std::size_t d = 0; d < dims && inside; ++d) {
      const Vec2& x = s[d / 2];
      const double u = detail::grid_coordinate(g, d % 2 == 0 ? x.x1 : x.x2);
      if (cfg.kind == EstimatorKind::histogram) {
        const double r = std::floor(u + 0.5);
        inside = r >= 0.0 && r < static_cast<double>(n);
        base[d] = static_cast<std::size_t>(std::max(r, 0.0));
      } else {
        const double f = std::floor(u);
        inside = f >= 0.0 && f + 1.0 < static_cast<double>(n);
        base[d] = static_cast<std::size_t>(std::max(f, 0.0));
        frac[d] = u - f;
      }
    }
    if (!inside) {
      ++est.dropped;
      continue;
    }
    if (cfg.kind == EstimatorKind::histogram) {
      std::size_t idx = 0;
      for (std::size_t d = dims; d-- > 0;) idx = idx * n + base[d];
      est.density[idx] += 1.0;
      continue;
    }
    for (std::size_t corner = 0; corner < (std::size_t{1} << dims); ++corner) {
      double w = 1.0;
      std::size_t idx = 0;
      for (std::size_t d = dims; d-- > 0;) {
        const bool up = (corner >> d) & 1u;
        w *= up ? frac[d] : 1.0 - frac[d];
        idx = idx * n + base[d] + (up ? 1 : 0);
      }
      est.density[idx] += w;
    }
  }
  if (cfg.kind == EstimatorKind::kde)
    detail::smooth_axes(est.density, n, static_cast<int>(dims), detail::gaussian_taps(est.bandwidth, g.spacing()));
  detail::normalize(est.density, est.cell_volume());
  return est;
}

/// The exact density tabulated on the nodes and renormalized to unit grid mass.
inline MarginalEstimate tabulate_marginal(const std::function<double(const Vec2&)>& rho, const GridGeometry& g) {
  g.validate();
  MarginalEstimate est;
  est.kind = EstimatorKind::exact;
  est.geometry = g;
  est.density.resize(g.size());
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) est.density[g.index(i, j)] = rho(g.node(i, j));
  detail::normalize(est.density, est.cell_volume());
  return est;
}

/// rho pushed through the same estimator as `est`: the expectation of the
/// binning (tent or box average, by Gauss-Legendre) followed by the same
/// smoothing. Returned as a k = 1 grid with unit grid mass.
inline DensityGrid matched_reference(const std::function<double(const Vec2&)>& rho, const MarginalEstimate& est,
                                     double time = 0.0, double sigma = 1.0) {
  const GridGeometry& g = est.geometry;
  const double h = g.spacing();
  DensityGrid out(g, time, sigma);
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) {
      const Vec2 x = g.node(i, j);
      double v = 0.0;
      if (est.kind == EstimatorKind::exact) {
        v = rho(x);
      } else if (est.kind == EstimatorKind::histogram) {
        for (std::size_t a = 0; a < 4; ++a)
          for (std::size_t b = 0; b < 4; ++b)
            v += detail::kGlWeights[a] * detail::kGlWeights[b] *
                 rho({x.x1 + 0.5 * h * detail::kGlNodes[a], x.x2 + 0.5 * h * detail::kGlNodes[b]});
        v *= 0.25;
      } else {
        // Tent weight (1 - |s|) on each side of the node, Gauss-Legendre on [0, 1] per half.
        for (int sa : {-1, 1})
          for (int sb : {-1, 1})
            for (std::size_t a = 0; a < 4; ++a)
              for (std::size_t b = 0; b < 4; ++b) {
                const double ua = 0.5 * (detail::kGlNodes[a] + 1.0), ub = 0.5 * (detail::kGlNodes[b] + 1.0);
                v += 0.25 * detail::kGlWeights[a] * detail::kGlWeights[b] * (1.0 - ua) * (1.0 - ub) *
                     rho({x.x1 + sa * ua * h, x.x2 + sb * ub * h});
              }
      }
      out.values[g.index(i, j)] = v;
    }
  if (est.kind == EstimatorKind::kde) detail::smooth_axes(out.values, g.n, 2, detail::gaussian_taps(est.bandwidth, h));
  detail::normalize(out.values, g.cell_area());
  return out;
}

inline DensityGrid matched_reference(const DensityGrid& rho, const MarginalEstimate& est) {
  const auto fn = [&](const Vec2& x) {
    try {
      return std::max(rho.interpolate(x), 0.0);
    } catch (const DomainBreach&) {
      return 0.0;
    }
  };
  return matched_reference(fn, est, rho.time, rho.sigma);
}

namespace detail {

inline void check_compatible(const MarginalEstimate& est, const DensityGrid& reference) {
  if (!(est.geometry == reference.geometry)) throw std::invalid_argument("estimate and reference grids differ");
  const std::size_t m = reference.values.size();
  if (est.density.size() != (est.k == 1 ? m : m * m))
    throw std::invalid_argument("estimate size does not match its marginal order");
}

// Reference value of the tensor power at a flat estimate index.
inline double tensor_value(const MarginalEstimate& est, const DensityGrid& reference, std::size_t idx) {
  if (est.k == 1) return reference.values[idx];
  const std::size_t m = reference.values.size();
  return reference.values[idx % m] * reference.values[idx / m];
}

}  // namespace detail

/// Scaled relative entropy (1/k) int rho_hat log(rho_hat / rho_bar^{(x)k}) by
/// quadrature on the common grid. Throws on a support breach.
inline double relative_entropy_k(const MarginalEstimate& est, const DensityGrid& reference, double floor = 0.0) {
  detail::check_compatible(est, reference);
  double h = 0.0;
  for (std::size_t idx = 0; idx < est.density.size(); ++idx) {
    const double p = est.density[idx];
    if (p <= 0.0) continue;
    const double q = detail::tensor_value(est, reference, idx);
    if (q <= floor)
      throw std::domain_error("support breach: estimate is positive where the reference vanishes (cell " +
                              std::to_string(idx) + ")");
    h += p * std::log(p / q);
  }
  return h * est.cell_volume() / est.k;
}

struct L1Ckp {
  double l1 = 0.0;
  double slack = 0.0;  ///< sqrt(2 k H_k) - l1
  bool holds = false;
};

/// L1 distance to the tensorized reference and the Csiszar-Kullback-Pinsker
/// check l1 <= sqrt(2 k H_k) + tolerance.
inline L1Ckp l1_and_ckp(const MarginalEstimate& est, const DensityGrid& reference, double hk, double tolerance = 0.0) {
  detail::check_compatible(est, reference);
  double l1 = 0.0;
  for (std::size_t idx = 0; idx < est.density.size(); ++idx)
    l1 += std::abs(est.density[idx] - detail::tensor_value(est, reference, idx));
  L1Ckp out;
  out.l1 = l1 * est.cell_volume();
  out.slack = std::sqrt(2.0 * est.k * std::max(hk, 0.0)) - out.l1;
  out.holds = out.slack >= -tolerance;
  return out;
}

struct PowerFit {
  double slope = 0.0;
  double intercept = 0.0;  ///< natural log of the prefactor
  double r2 = 0.0;
};

/// Least squares of log(error) against log(N).
inline PowerFit convergence_fit(std::span<const std::pair<double, double>> rows) {
  if (rows.size() < 3) throw std::invalid_argument("convergence_fit needs at least 3 rows");
  std::vector<double> x, y;
  for (const auto& [n, e] : rows) {
    if (!(e > 0.0) || !(n > 0.0)) throw std::invalid_argument("convergence_fit needs positive N and errors");
    x.push_back(std::log(n));
    y.push_back(std::log(e));
  }
  const double m = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("convergence_fit needs distinct N");
  PowerFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

/// Jackknife standard error from leave-one-group-out estimates.
inline double jackknife_se(std::span<const double> leave_one_out) {
  const double g = static_cast<double>(leave_one_out.size());
  if (leave_one_out.size() < 2) throw std::invalid_argument("jackknife needs at least 2 groups");
  double m = 0.0;
  for (double v : leave_one_out) m += v;
  m /= g;
  double s = 0.0;
  for (double v : leave_one_out) s += (v - m) * (v - m);
  return std::sqrt((g - 1.0) / g * s);
}

struct ChaosRow {
  std::size_t n_particles = 0;
  std::size_t runs = 0;
  double h1 = 0.0;
  double h1_se = 0.0;
  double l1 = 0.0;
  double l1_se = 0.0;
  double ckp_slack = 0.0;
  double bandwidth = 0.0;
};

/// One rung of the chaos ladder: H_1, L1 and the CKP slack of the pooled
/// 1-marginal against the bias-matched reference, with jackknife errors over
/// `groups` contiguous blocks of runs.
inline ChaosRow chaos_row(std::span<const ParticleEnsemble> runs, const std::function<double(const Vec2&)>& rho_bar,
                          const EstimatorConfig& cfg, std::size_t groups = 8) {
  if (runs.empty()) throw std::invalid_argument("chaos_row needs runs");
  ChaosRow row;
  row.n_particles = runs.front().size();
  row.runs = runs.size();
  const auto est = marginal_density(runs, 1, cfg);
  const auto ref = matched_reference(rho_bar, est);
  row.bandwidth = est.bandwidth;
  row.h1 = relative_entropy_k(est, ref);
  const auto c = l1_and_ckp(est, ref, row.h1);
  row.l1 = c.l1;
  row.ckp_slack = c.slack;

  groups = std::min(groups, runs.size());
  if (groups >= 2) {
    EstimatorConfig fixed = cfg;
    fixed.bandwidth = est.bandwidth;
    fixed.min_samples = 1;
    std::vector<double> h, l;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t lo = gi * runs.size() / groups, hi = (gi + 1) * runs.size() / groups;
      std::vector<ParticleEnsemble> rest(runs.begin(), runs.begin() + lo);
      rest.insert(rest.end(), runs.begin() + hi, runs.end());
      const auto e = marginal_density(rest, 1, fixed);
      const double hh = relative_entropy_k(e, ref);
      h.push_back(hh);
      l.push_back(l1_and_ckp(e, ref, hh).l1);
    }
    row.h1_se = jackknife_se(h);
    row.l1_se = jackknife_se(l);
  }
  return row;
}

}  // namespace vortex
