#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vortex/grid.hpp"
#include "vortex/meanfield.hpp"
#include "vortex/particle.hpp"
#include "vortex/rng.hpp"
#include "vortex/spectral.hpp"

namespace vortex {

// ---------------------------------------------------------------------------
// Test functions

struct TestFunction {
  std::string id;
  std::function<double(const Vec2&)> eval;
};

/// Normalized Hermite function psi_m(x) = (2^m m! sqrt(pi))^{-1/2} H_m(x) e^{-x^2/2}.
inline double hermite_function_1d(int m, double x) {
  if (m < 0) throw std::invalid_argument("Hermite order must be nonnegative");
  double prev = 0.0, cur = std::exp(-0.5 * x * x) / std::sqrt(std::sqrt(std::numbers::pi));
  for (int k = 0; k < m; ++k) {
    const double next = std::sqrt(2.0 / (k + 1)) * x * cur - std::sqrt(static_cast<double>(k) / (k + 1)) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

inline TestFunction hermite_test_function(int m, int n) {
  if (m < 0 || n < 0) throw std::invalid_argument("Hermite orders must be nonnegative");
  return {"H" + std::to_string(m) + std::to_string(n),
          [m, n](const Vec2& x) { return hermite_function_1d(m, x.x1) * hermite_function_1d(n, x.x2); }};
}

/// H_{m,n} for m + n <= max_degree, ordered by degree then by m descending.
/// max_degree = 4 gives the 15-function family.
inline std::vector<TestFunction> hermite_family(int max_degree = 4) {
  std::vector<TestFunction> out;
  for (int d = 0; d <= max_degree; ++d)
    for (int m = d; m >= 0; --m) out.push_back(hermite_test_function(m, d - m));
  return out;
}

inline TestFunction constant_test_function(double c) {
  return {"const", [c](const Vec2&) { return c; }};
}

// ---------------------------------------------------------------------------
// Particle pairings

/// int h rho / int rho by grid quadrature, for each test function.
struct ReferencePairing {
  double time = 0.0;
  std::vector<double> means;
};

inline ReferencePairing reference_pairing(const DensityGrid& rho, std::span<const TestFunction> tests) {
  const GridGeometry& g = rho.geometry;
  ReferencePairing out{rho.time, std::vector<double>(tests.size(), 0.0)};
  double mass = 0.0;
  for (double v : rho.values) mass += v;
  if (!(mass > 0.0)) throw std::invalid_argument("reference density has no mass");
  for (std::size_t t = 0; t < tests.size(); ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j < g.n; ++j)
      for (std::size_t i = 0; i < g.n; ++i) acc += tests[t].eval(g.node(i, j)) * rho.values[g.index(i, j)];
    out.means[t] = acc / mass;
  }
  return out;
}

namespace detail {

inline void require_same_time(double a, double b) {
  if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a)))
    throw std::invalid_argument("ensemble time " + std::to_string(a) + " does not match reference time " +
                                std::to_string(b));
}

}  // namespace detail

/// sqrt(N) ((1/N) sum h(X_i) - int h rho) for each test function.
inline std::vector<double> pair_fluctuations(const ParticleEnsemble& ens, const ReferencePairing& ref,
                                             std::span<const TestFunction> tests) {
  if (ens.size() == 0) throw std::invalid_argument("empty ensemble");
  if (ref.means.size() != tests.size()) throw std::invalid_argument("reference pairing does not match the tests");
  detail::require_same_time(ens.time, ref.time);
  const double n = static_cast<double>(ens.size());
  std::vector<double> out(tests.size());
  for (std::size_t t = 0; t < tests.size(); ++t) {
    double acc = 0.0;
    for (const auto& x : ens.positions) acc += tests[t].eval(x);
    out[t] = std::sqrt(n) * (acc / n - ref.means[t]);
  }
  return out;
}

inline double pair_fluctuation(const ParticleEnsemble& ens, const DensityGrid& reference, const TestFunction& h) {
  const std::span<const TestFunction> one(&h, 1);
  return pair_fluctuations(ens, reference_pairing(reference, one), one).front();
}

// ---------------------------------------------------------------------------
// Sample sets

struct FluctuationSample {
  std::size_t run = 0;
  double time = 0.0;
  std::vector<double> values;  ///< aligned with FluctuationSet::ids
};

struct FluctuationSet {
  std::vector<std::string> ids;
  std::vector<double> times;
  std::vector<FluctuationSample> samples;

  /// values of test `t` at times[time_index], in run order.
  std::vector<double> column(std::size_t time_index, std::size_t t) const {
    std::vector<double> out;
    for (const auto& s : samples)
      if (std::abs(s.time - times.at(time_index)) <= 1e-9 * std::max(1.0, s.time)) out.push_back(s.values.at(t));
    return out;
  }
};

inline std::vector<std::string> test_ids(std::span<const TestFunction> tests) {
  std::vector<std::string> out;
  for (const auto& t : tests) out.push_back(t.id);
  return out;
}

/// Particle replicas r = 0..runs-1 with seed base_seed + r, paired at `times`
/// against the matching references.
inline FluctuationSet particle_fluctuations(const SimConfig& base, const InitialDensity& init, std::size_t runs,
                                            std::span<const DensityGrid> references,
                                            std::span<const TestFunction> tests) {
  if (runs == 0) throw std::invalid_argument("runs must be positive");
  if (references.empty()) throw std::invalid_argument("no reference times");
  std::vector<ReferencePairing> pairings;
  FluctuationSet out;
  out.ids = test_ids(tests);
  for (const auto& r : references) {
    pairings.push_back(reference_pairing(r, tests));
    out.times.push_back(r.time);
  }
  std::vector<std::vector<FluctuationSample>> per_run(runs);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t r = 0; r < runs; ++r) {
    SimConfig cfg = base;
    cfg.seed = base.seed + r;
    simulate(cfg, init, [&](const ParticleEnsemble& e) {
      for (const auto& p : pairings)
        if (std::abs(e.time - p.time) <= 1e-9 * std::max(1.0, p.time))
          per_run[r].push_back({r, p.time, pair_fluctuations(e, p, tests)});
    });
  }
  for (std::size_t r = 0; r < runs; ++r) {
    if (per_run[r].size() != pairings.size())
      throw std::invalid_argument("reference times must be snapshot times of the simulation");
    for (auto& s : per_run[r]) out.samples.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Limiting SPDE

struct SpdeConfig {
  bool transport = true;  ///< false drops both transport terms (test hook)
  bool noise = true;
};

/// d eta = sigma Delta eta - div(rho K*eta + u eta) - sqrt(2 sigma) div(sqrt(rho) xi), on the
/// periodic grid. One step: exact heat over dt/2, Heun transport, the noise
/// increment, exact heat over dt/2.
class FluctuationSpde {
 public:
  explicit FluctuationSpde(const GridGeometry& g, PdeConfig pde = {}, SpdeConfig cfg = {})
      : solver_(g, pde), cfg_(cfg) {}

  const GridGeometry& geometry() const { return solver_.geometry(); }
  SpectralPlan& plan() { return solver_.plan(); }

  /// Gaussian field with the covariance of sqrt(N)(mu_N - rho) for i.i.d. samples:
  /// eta(h) has variance int h^2 rho - (int h rho)^2.
  std::vector<double> initial_field(const DensityGrid& rho, const RngStream& rng) const {
    const GridGeometry& g = rho.geometry;
    require_geometry(g);
    const double cell = g.cell_area();
    double mass = 0.0;
    for (double v : rho.values) mass += v;
    mass *= cell;
    std::vector<double> eta(g.size());
    double total = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double w = std::sqrt(std::max(rho.values[k], 0.0) / mass);
      eta[k] = w * rng.normal2(0, k).first / std::sqrt(cell);
      total += eta[k] * cell;
    }
    for (std::size_t k = 0; k < g.size(); ++k) eta[k] -= rho.values[k] / mass * total;
    return eta;
  }

  void step(std::vector<double>& eta, const DensityGrid& rho, const VelocityGrid& u, double dt, const RngStream& rng,
            std::uint64_t step_index) {
    const GridGeometry& g = rho.geometry;
    require_geometry(g);
    if (eta.size() != g.size()) throw std::invalid_argument("eta does not match the grid");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    const double speed = u.max_speed();
    if (speed > 0.0) {
      const double limit = solver_.config().cfl * g.spacing() / speed;
      if (dt > limit) throw CflViolation(dt, limit);
    }
    const double half = 0.5 * rho.sigma * dt;
    eta = solver_.plan().heat(eta, half);
    if (cfg_.transport) {
      transport_rate(eta, rho, u, k1_);
      stage_.resize(eta.size());
      for (std::size_t k = 0; k < eta.size(); ++k) stage_[k] = eta[k] + dt * k1_[k];
      transport_rate(stage_, rho, u, k2_);
      for (std::size_t k = 0; k < eta.size(); ++k) eta[k] += 0.5 * dt * (k1_[k] + k2_[k]);
    }
    if (cfg_.noise) {
      noise_flux(rho, dt, rng, step_index, f1_, f2_);
      divergence(f1_, f2_, false, div_);
      for (std::size_t k = 0; k < eta.size(); ++k) eta[k] -= div_[k];
    }
    eta = solver_.plan().heat(eta, half);
  }

  /// sqrt(2 sigma rho) times white-noise increments of variance dt / cell_area, per component.
  static void noise_flux(const DensityGrid& rho, double dt, const RngStream& rng, std::uint64_t step_index,
                         std::vector<double>& f1, std::vector<double>& f2) {
    const double amp = std::sqrt(2.0 * rho.sigma * dt / rho.geometry.cell_area());
    f1.resize(rho.values.size());
    f2.resize(rho.values.size());
    for (std::size_t k = 0; k < rho.values.size(); ++k) {
      const auto [z1, z2] = rng.normal2(step_index, k);
      const double w = amp * std::sqrt(std::max(rho.values[k], 0.0));
      f1[k] = w * z1;
      f2[k] = w * z2;
    }
  }

 private:
  void require_geometry(const GridGeometry& g) const {
    if (!(g == solver_.geometry())) throw std::invalid_argument("grid does not match the SPDE geometry");
  }

  // out = -div(rho K*eta + u eta)
  void transport_rate(const std::vector<double>& eta, const DensityGrid& rho, const VelocityGrid& u,
                      std::vector<double>& out) {
    DensityGrid field(rho.geometry, rho.time, rho.sigma);
    field.values = eta;
    const VelocityGrid v = solver_.velocity(field);
    f1_.resize(eta.size());
    f2_.resize(eta.size());
    for (std::size_t k = 0; k < eta.size(); ++k) {
      f1_[k] = rho.values[k] * v.u1[k] + u.u1[k] * eta[k];
      f2_[k] = rho.values[k] * v.u2[k] + u.u2[k] * eta[k];
    }
    divergence(f1_, f2_, solver_.config().dealias, out);
    for (double& x : out) x = -x;
  }

  void divergence(const std::vector<double>& a, const std::vector<double>& b, bool dealias, std::vector<double>& out) {
    SpectralPlan& p = solver_.plan();
    p.forward(a, hat1_);
    p.forward(b, hat2_);
    const std::size_t n = p.n(), nc = p.half_columns();
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < nc; ++i) {
        const std::size_t idx = j * nc + i;
        if (p.nyquist(i, j) || (dealias && !p.retained(i, j))) {
          hat1_[idx] = 0.0;
          continue;
        }
        hat1_[idx] = std::complex<double>(0.0, p.k1(i)) * hat1_[idx] + std::complex<double>(0.0, p.k2(j)) * hat2_[idx];
      }
    p.inverse(hat1_, out);
  }

  MeanFieldSolver solver_;
  SpdeConfig cfg_;
  std::vector<double> k1_, k2_, stage_, f1_, f2_, div_;
  std::vector<std::complex<double>> hat1_, hat2_;
};

/// Grid pairing sum_k h(x_k) eta_k cell.
inline double pair_field(std::span<const double> eta, const GridGeometry& g, const std::vector<double>& h) {
  double acc = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) acc += h[k] * eta[k];
  return acc * g.cell_area();
}

struct SpdeRunConfig {
  double dt = 1e-2;
  double t_end = 0.5;
  std::size_t record_every = 1;  ///< steps between recorded pairings; t_end is always recorded
  std::size_t replicas = 100;
  std::uint64_t base_seed = 0;
  bool random_initial = true;    ///< false starts from eta = 0
  SpdeConfig spde{};
  PdeConfig pde{};
};

/// Replicas r = 0..replicas-1 with seed base_seed + r. rho-bar is advanced by
/// the mean-field solver on the same grid and dt, once, before the replicas.
inline FluctuationSet spde_fluctuations(const DensityGrid& rho0, const SpdeRunConfig& cfg,
                                        std::span<const TestFunction> tests) {
  if (!(cfg.dt > 0.0) || !(cfg.t_end >= 0.0)) throw std::invalid_argument("dt must be positive and t_end nonnegative");
  if (cfg.replicas == 0 || cfg.record_every == 0) throw std::invalid_argument("replicas and record_every must be positive");
  const GridGeometry& g = rho0.geometry;
  const auto steps = static_cast<std::uint64_t>(std::llround(cfg.t_end / cfg.dt));
  if (std::abs(static_cast<double>(steps) * cfg.dt - cfg.t_end) > 1e-9 * std::max(1.0, cfg.t_end))
    throw std::invalid_argument("t_end must be a multiple of dt");

  std::vector<DensityGrid> rho{rho0};
  std::vector<VelocityGrid> vel;
  {
    MeanFieldSolver solver(g, cfg.pde);
    vel.push_back(solver.velocity(rho0));
    for (std::uint64_t s = 1; s <= steps; ++s) {
      rho.push_back(solver.step(rho.back(), cfg.dt));
      rho.back().time = static_cast<double>(s) * cfg.dt;
      vel.push_back(solver.velocity(rho.back()));
    }
  }
  std::vector<std::vector<double>> tab;
  for (const auto& t : tests) {
    std::vector<double> v(g.size());
    for (std::size_t j = 0; j < g.n; ++j)
      for (std::size_t i = 0; i < g.n; ++i) v[g.index(i, j)] = t.eval(g.node(i, j));
    tab.push_back(std::move(v));
  }
  std::vector<std::uint64_t> recorded;
  for (std::uint64_t s = 0; s <= steps; ++s)
    if (s % cfg.record_every == 0 || s == steps) recorded.push_back(s);

  FluctuationSet out;
  out.ids = test_ids(tests);
  for (auto s : recorded) out.times.push_back(static_cast<double>(s) * cfg.dt);
  std::vector<std::vector<FluctuationSample>> per_run(cfg.replicas);
#pragma omp parallel
  {
    FluctuationSpde spde(g, cfg.pde, cfg.spde);
#pragma omp for schedule(dynamic, 1)
    for (std::size_t r = 0; r < cfg.replicas; ++r) {
      const RngStream noise(cfg.base_seed + r, StreamTag::spde_noise);
      std::vector<double> eta = cfg.random_initial
                                    ? spde.initial_field(rho0, RngStream(cfg.base_seed + r, StreamTag::spde_initial))
                                    : std::vector<double>(g.size(), 0.0);
      auto record = [&](std::uint64_t s) {
        FluctuationSample sample{r, static_cast<double>(s) * cfg.dt, {}};
        for (const auto& h : tab) sample.values.push_back(pair_field(eta, g, h));
        per_run[r].push_back(std::move(sample));
      };
      std::size_t next = 0;
      if (recorded[next] == 0) record(recorded[next++]);
      for (std::uint64_t s = 1; s <= steps; ++s) {
        spde.step(eta, rho[s - 1], vel[s - 1], cfg.dt, noise, s - 1);
        if (next < recorded.size() && recorded[next] == s) record(recorded[next++]);
      }
    }
  }
  for (auto& run : per_run)
    for (auto& s : run) out.samples.push_back(std::move(s));
  return out;
}

// ---------------------------------------------------------------------------
// Comparison

struct MomentSummary {
  double mean = 0.0, variance = 0.0, variance_se = 0.0, skewness = 0.0, excess_kurtosis = 0.0;
  std::size_t count = 0;
};

/// Unbiased variance with the standard error sqrt((m4 - (R-3)/(R-1) s^4) / R).
inline MomentSummary moments(std::span<const double> x) {
  if (x.size() < 4) throw std::invalid_argument("need at least 4 samples");
  MomentSummary m;
  m.count = x.size();
  const double r = static_cast<double>(x.size());
  for (double v : x) m.mean += v;
  m.mean /= r;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= r;
  m3 /= r;
  m4 /= r;
  m.variance = m2 * r / (r - 1.0);
  m.variance_se = std::sqrt(std::max(0.0, (m4 - (r - 3.0) / (r - 1.0) * m.variance * m.variance) / r));
  if (m2 > 0.0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

struct CovarianceRow {
  std::string id;
  double time = 0.0;
  MomentSummary particle, spde;
  double discrepancy = 0.0;  ///< |var_particle - var_spde| / var_spde
  double z = 0.0;            ///< (var_particle - var_spde) / combined standard error
};

struct CovarianceReport {
  std::vector<CovarianceRow> rows;
  std::vector<double> cross_discrepancy;  ///< per time: ||C_particle - C_spde||_F / ||C_spde||_F
  double max_discrepancy = 0.0;
};

inline std::vector<double> covariance_matrix(const FluctuationSet& s, std::size_t time_index) {
  const std::size_t m = s.ids.size();
  std::vector<std::vector<double>> cols;
  for (std::size_t t = 0; t < m; ++t) cols.push_back(s.column(time_index, t));
  const std::size_t r = cols.empty() ? 0 : cols.front().size();
  if (r < 2) throw std::invalid_argument("need at least 2 samples per time");
  std::vector<double> mean(m, 0.0), c(m * m, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (double v : cols[a]) mean[a] += v;
    mean[a] /= static_cast<double>(r);
  }
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += (cols[a][k] - mean[a]) * (cols[b][k] - mean[b]);
      c[a * m + b] = acc / static_cast<double>(r - 1);
    }
  return c;
}

inline CovarianceReport covariance_compare(const FluctuationSet& particle, const FluctuationSet& spde) {
  if (particle.ids != spde.ids) throw std::invalid_argument("sample sets use different test functions");
  if (particle.times.size() != spde.times.size()) throw std::invalid_argument("sample sets use different times");
  for (std::size_t i = 0; i < particle.times.size(); ++i) detail::require_same_time(particle.times[i], spde.times[i]);
  CovarianceReport rep;
  for (std::size_t ti = 0; ti < particle.times.size(); ++ti) {
    for (std::size_t t = 0; t < particle.ids.size(); ++t) {
      CovarianceRow row;
      row.id = particle.ids[t];
      row.time = particle.times[ti];
      const auto pc = particle.column(ti, t), sc = spde.column(ti, t);
      row.particle = moments(pc);
      row.spde = moments(sc);
      const double diff = row.particle.variance - row.spde.variance;
      row.discrepancy = row.spde.variance > 0.0 ? std::abs(diff) / row.spde.variance
                                                : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
      const double se = std::hypot(row.particle.variance_se, row.spde.variance_se);
      row.z = se > 0.0 ? diff / se : 0.0;
      rep.max_discrepancy = std::max(rep.max_discrepancy, row.discrepancy);
      rep.rows.push_back(std::move(row));
    }
    const auto cp = covariance_matrix(particle, ti), cs = covariance_matrix(spde, ti);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < cp.size(); ++k) {
      num += (cp[k] - cs[k]) * (cp[k] - cs[k]);
      den += cs[k] * cs[k];
    }
    rep.cross_discrepancy.push_back(den > 0.0 ? std::sqrt(num / den) : std::sqrt(num));
  }
  return rep;
}

/// int h^2 rho - (int h rho)^2 by grid quadrature, rho normalized to its grid mass.
inline double reference_variance(const DensityGrid& rho, const TestFunction& h) {
  const GridGeometry& g = rho.geometry;
  double mass = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) {
      const double w = rho.values[g.index(i, j)], v = h.eval(g.node(i, j));
      mass += w;
      m1 += v * w;
      m2 += v * v * w;
    }
  m1 /= mass;
  m2 /= mass;
  return m2 - m1 * m1;
}

}  // namespace vortex
