#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vortex/grid.hpp"
#include "vortex/kernel.hpp"
#include "vortex/particle.hpp"
#include "vortex/spectral.hpp"

namespace vortex {

/// Thrown when a time step exceeds the advective stability limit.
class CflViolation : public std::runtime_error {
 public:
  CflViolation(double dt, double admissible)
      : std::runtime_error("dt=" + std::to_string(dt) + " violates the CFL bound; admissible dt <= " +
                           std::to_string(admissible)),
        dt_(dt),
        admissible_(admissible) {}
  double dt() const { return dt_; }
  double admissible_dt() const { return admissible_; }

 private:
  double dt_, admissible_;
};

struct PdeConfig {
  double cfl = 0.5;               ///< dt <= cfl * h / max|u|
  std::size_t image_terms = 4;    ///< lattice-sum terms in the periodic-image correction (0 disables)
  bool dealias = true;            ///< 2/3-rule truncation of the advective flux
  bool planar = true;             ///< false keeps the raw periodic velocity (no background or image terms)
};

// ---------------------------------------------------------------------------
// Closed-form Lamb-Oseen vortex

inline double lamb_oseen_density(const Vec2& x, double sigma, double t_prime) {
  const double a = 4.0 * sigma * t_prime;
  return std::exp(-norm2(x) / a) / (std::numbers::pi * a);
}

inline Vec2 lamb_oseen_velocity(const Vec2& x, double sigma, double t_prime) {
  const double r2 = norm2(x);
  if (r2 == 0.0) return {0.0, 0.0};
  const double f = -std::expm1(-r2 / (4.0 * sigma * t_prime)) / (kTwoPi * r2);
  return {-x.x2 * f, x.x1 * f};
}

inline DensityGrid lamb_oseen(double sigma, double t0, double t, const GridGeometry& g) {
  if (!(t0 > 0.0)) throw std::invalid_argument("Lamb-Oseen needs t0 > 0");
  g.validate();
  DensityGrid rho(g, t, sigma);
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) rho.at(i, j) = lamb_oseen_density(g.node(i, j), sigma, t + t0);
  return rho;
}

/// Samples a closed-form initial density on the grid.
inline DensityGrid sample_density(const InitialDensity& init, const GridGeometry& g, double sigma) {
  g.validate();
  DensityGrid rho(g, 0.0, sigma);
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) rho.at(i, j) = init.value(g.node(i, j), sigma);
  return rho;
}

// ---------------------------------------------------------------------------
// Spectral solver

/// Pseudo-spectral solver for d/dt rho + u . grad rho = sigma Delta rho with
/// u = K * rho, on the periodic box of a GridGeometry.
///
/// The periodic Biot-Savart law differs from the planar one by a uniform
/// background rotation and by the field of the periodic images. Both are
/// added back: the first exactly, the second through its Laurent expansion
/// sum_k G_{4k} (z - w)^{4k-1} about the box, with complex moments of rho.
class MeanFieldSolver {
 public:
  explicit MeanFieldSolver(const GridGeometry& g, PdeConfig cfg = {}) : plan_(g), cfg_(cfg) {
    const double period = 2.0 * g.half_width;
    lattice_.resize(cfg_.image_terms);
    for (std::size_t k = 0; k < cfg_.image_terms; ++k) {
      const int order = 4 * static_cast<int>(k + 1);
      lattice_[k] = square_lattice_eisenstein(order) / std::pow(period, order);
    }
  }

  const GridGeometry& geometry() const { return plan_.geometry(); }
  const PdeConfig& config() const { return cfg_; }
  SpectralPlan& plan() { return plan_; }

  /// u = K * rho (planar), sampled on the grid nodes.
  VelocityGrid velocity(const DensityGrid& rho) {
    require_geometry(rho.geometry);
    VelocityGrid u(rho.geometry, rho.time);
    velocity_into(rho.values, u.u1, u.u2);
    return u;
  }

  /// Exact heat flow exp(t sigma Delta) of a grid density.
  DensityGrid heat(const DensityGrid& rho, double t) {
    require_geometry(rho.geometry);
    DensityGrid out = rho;
    out.values = plan_.heat(rho.values, rho.sigma * t);
    out.time = rho.time + t;
    return out;
  }

  /// Largest dt the CFL rule admits for this density.
  double admissible_dt(const DensityGrid& rho) {
    velocity_into(rho.values, vel1_, vel2_);
    double speed = 0.0;
    for (std::size_t k = 0; k < vel1_.size(); ++k) speed = std::max(speed, std::hypot(vel1_[k], vel2_[k]));
    return speed > 0.0 ? cfg_.cfl * rho.geometry.spacing() / speed : std::numeric_limits<double>::infinity();
  }

  /// One Strang step: heat dt/2, RK4 advection over dt, heat dt/2.
  DensityGrid step(const DensityGrid& rho, double dt) {
    require_geometry(rho.geometry);
    if (!(dt >= 0.0)) throw std::invalid_argument("dt must be nonnegative");
    if (dt == 0.0) return rho;
    const double limit = admissible_dt(rho);
    if (dt > limit) throw CflViolation(dt, limit);
    const std::size_t size = rho.values.size();
    std::vector<double> a = plan_.heat(rho.values, rho.sigma * 0.5 * dt);

    std::vector<double> k1(size), k2(size), k3(size), k4(size), stage(size);
    advect_rate(a, k1);
    for (std::size_t k = 0; k < size; ++k) stage[k] = a[k] + 0.5 * dt * k1[k];
    advect_rate(stage, k2);
    for (std::size_t k = 0; k < size; ++k) stage[k] = a[k] + 0.5 * dt * k2[k];
    advect_rate(stage, k3);
    for (std::size_t k = 0; k < size; ++k) stage[k] = a[k] + dt * k3[k];
    advect_rate(stage, k4);
    for (std::size_t k = 0; k < size; ++k) a[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);

    DensityGrid out = rho;
    out.values = plan_.heat(a, rho.sigma * 0.5 * dt);
    out.time = rho.time + dt;
    return out;
  }

 private:
  void require_geometry(const GridGeometry& g) const {
    if (!(g == plan_.geometry())) throw std::invalid_argument("density grid does not match the solver geometry");
  }

  void velocity_into(const std::vector<double>& rho, std::vector<double>& u1, std::vector<double>& u2) {
    const GridGeometry& g = plan_.geometry();
    const std::size_t n = g.n, nc = plan_.half_columns();
    plan_.forward(rho, hat_);
    mode1_.resize(hat_.size());
    mode2_.resize(hat_.size());
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < nc; ++i) {
        const std::size_t idx = j * nc + i;
        const double kk = plan_.k1(i) * plan_.k1(i) + plan_.k2(j) * plan_.k2(j);
        if (kk == 0.0 || plan_.nyquist(i, j)) {
          mode1_[idx] = mode2_[idx] = 0.0;
          continue;
        }
        // psi = -rho / |k|^2, u1 = -i k2 psi, u2 = i k1 psi
        const double pr = -hat_[idx].real() / kk, pi = -hat_[idx].imag() / kk;
        mode1_[idx] = {plan_.k2(j) * pi, -plan_.k2(j) * pr};
        mode2_[idx] = {-plan_.k1(i) * pi, plan_.k1(i) * pr};
      }
    plan_.inverse(mode1_, u1);
    plan_.inverse(mode2_, u2);
    if (cfg_.planar) add_image_correction(rho, u1, u2);
  }

  // conj(du)(z) = (-i / 2 pi) [ pi/A (m conj(z) - conj(M_1)) + sum_k G_{4k} sum_j C(4k-1, j) (-1)^j M_j z^(4k-1-j) ]
  void add_image_correction(const std::vector<double>& rho, std::vector<double>& u1, std::vector<double>& u2) {
    const GridGeometry& g = plan_.geometry();
    const std::size_t n = g.n;
    const std::size_t degree = lattice_.empty() ? 1 : 4 * lattice_.size() - 1;
    // Eight interleaved accumulators per power keep the loop vectorizable
    // while fixing the summation order.
    constexpr std::size_t lanes = 8;
    const std::size_t total = n * n;
    std::vector<double> ar((degree + 1) * lanes, 0.0), ai((degree + 1) * lanes, 0.0);
    const double area = g.cell_area();
    for (std::size_t base = 0; base < total; base += lanes) {
      double p1[lanes], p2[lanes], w1[lanes], w2[lanes];
      for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t k = base + l;
        const bool live = k < total;
        p1[l] = live ? rho[k] * area : 0.0;
        p2[l] = 0.0;
        w1[l] = live ? g.coord(k % n) : 0.0;
        w2[l] = live ? g.coord(k / n) : 0.0;
      }
      for (std::size_t d = 0; d <= degree; ++d) {
        double* rr = &ar[d * lanes];
        double* ri = &ai[d * lanes];
        for (std::size_t l = 0; l < lanes; ++l) {
          rr[l] += p1[l];
          ri[l] += p2[l];
          const double t = p1[l] * w1[l] - p2[l] * w2[l];
          p2[l] = p1[l] * w2[l] + p2[l] * w1[l];
          p1[l] = t;
        }
      }
    }
    std::vector<double> mr(degree + 1, 0.0), mi(degree + 1, 0.0);
    for (std::size_t d = 0; d <= degree; ++d)
      for (std::size_t l = 0; l < lanes; ++l) {
        mr[d] += ar[d * lanes + l];
        mi[d] += ai[d * lanes + l];
      }
    std::vector<std::complex<double>> moments(degree + 1);
    for (std::size_t d = 0; d <= degree; ++d) moments[d] = {mr[d], mi[d]};
    std::vector<std::complex<double>> coeff(degree + 1, {0.0, 0.0});
    for (std::size_t k = 0; k < lattice_.size(); ++k) {
      const std::size_t nk = 4 * k + 3;
      double binom = 1.0;
      for (std::size_t j = 0; j <= nk; ++j) {
        coeff[nk - j] += lattice_[k] * binom * ((j % 2) ? -1.0 : 1.0) * moments[j];
        binom = binom * static_cast<double>(nk - j) / static_cast<double>(j + 1);
      }
    }
    const double box_area = 4.0 * g.half_width * g.half_width;
    const double bg = std::numbers::pi / box_area;
    const std::complex<double> mass = moments[0];
    const std::complex<double> m1 = moments[1];
    std::vector<double> cr(degree + 1), ci(degree + 1);
    for (std::size_t d = 0; d <= degree; ++d) {
      cr[d] = coeff[d].real();
      ci[d] = coeff[d].imag();
    }
    const double b0 = bg * mass.real();
#pragma omp parallel
    {
      std::vector<double> s1(n), s2(n), z1(n);
      for (std::size_t i = 0; i < n; ++i) z1[i] = g.coord(i);
#pragma omp for schedule(static)
      for (std::size_t j = 0; j < n; ++j) {
        const double z2 = g.coord(j);
        std::fill(s1.begin(), s1.end(), 0.0);
        std::fill(s2.begin(), s2.end(), 0.0);
        for (std::size_t d = degree + 1; d-- > 0;)
          for (std::size_t i = 0; i < n; ++i) {
            const double t = s1[i] * z1[i] - s2[i] * z2 + cr[d];
            s2[i] = s1[i] * z2 + s2[i] * z1[i] + ci[d];
            s1[i] = t;
          }
        for (std::size_t i = 0; i < n; ++i) {
          const double a = s1[i] + b0 * z1[i] - bg * m1.real();
          const double b = s2[i] - b0 * z2 + bg * m1.imag();
          // c = (-i / 2 pi) (a + i b); u1 = Re c, u2 = -Im c
          u1[g.index(i, j)] += kInvTwoPi * b;
          u2[g.index(i, j)] += kInvTwoPi * a;
        }
      }
    }
  }

  // rate = -div(rho u)
  void advect_rate(const std::vector<double>& rho, std::vector<double>& rate) {
    velocity_into(rho, vel1_, vel2_);
    const std::size_t size = rho.size();
    flux1_.resize(size);
    flux2_.resize(size);
    for (std::size_t k = 0; k < size; ++k) {
      flux1_[k] = rho[k] * vel1_[k];
      flux2_[k] = rho[k] * vel2_[k];
    }
    const std::size_t n = plan_.n(), nc = plan_.half_columns();
    plan_.forward(flux1_, hat_);
    plan_.forward(flux2_, hat2_);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < nc; ++i) {
        const std::size_t idx = j * nc + i;
        if (plan_.nyquist(i, j) || (cfg_.dealias && !plan_.retained(i, j))) {
          hat_[idx] = 0.0;
          continue;
        }
        // -i k1 F1 - i k2 F2
        const double k1 = plan_.k1(i), k2 = plan_.k2(j);
        hat_[idx] = {k1 * hat_[idx].imag() + k2 * hat2_[idx].imag(), -k1 * hat_[idx].real() - k2 * hat2_[idx].real()};
      }
    plan_.inverse(hat_, rate);
  }

  SpectralPlan plan_;
  PdeConfig cfg_;
  std::vector<double> lattice_;
  std::vector<std::complex<double>> hat_, hat2_, mode1_, mode2_;
  std::vector<double> vel1_, vel2_, flux1_, flux2_;
};

inline VelocityGrid velocity_from_vorticity(const DensityGrid& rho, const PdeConfig& cfg = {}) {
  MeanFieldSolver solver(rho.geometry, cfg);
  return solver.velocity(rho);
}

inline DensityGrid pde_step(const DensityGrid& rho, double dt, const PdeConfig& cfg = {}) {
  MeanFieldSolver solver(rho.geometry, cfg);
  return solver.step(rho, dt);
}

struct SolveConfig {
  double t_end = 1.0;
  double dt = 1e-3;
  std::size_t snapshot_every = 1;
  DensityInvariants invariants{};
  bool check_invariants = true;
  PdeConfig pde{};
};

/// Runs the solver from rho0 (time taken from rho0) for t_end. Snapshots every
/// snapshot_every steps, always including the first and last state.
/// `observer`, when given, receives the snapshots instead of them being stored.
inline std::vector<DensityGrid> solve(const DensityGrid& rho0, const SolveConfig& cfg,
                                      const std::function<void(const DensityGrid&)>& observer = {}) {
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(cfg.t_end >= 0.0)) throw std::invalid_argument("t_end must be nonnegative");
  if (cfg.snapshot_every < 1) throw std::invalid_argument("snapshot_every must be >= 1");
  std::uint64_t steps = 0;
  if (cfg.t_end > 0.0) {
    const double ratio = cfg.t_end / cfg.dt;
    steps = static_cast<std::uint64_t>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(steps)) > 1e-9 * std::max(1.0, ratio))
      throw std::invalid_argument("t_end must be an integer multiple of dt");
  }
  if (cfg.check_invariants) check_density_invariants(rho0, cfg.invariants);
  MeanFieldSolver solver(rho0.geometry, cfg.pde);
  std::vector<DensityGrid> out;
  auto emit = [&](const DensityGrid& r) {
    if (cfg.check_invariants) check_density_invariants(r, cfg.invariants);
    if (observer)
      observer(r);
    else
      out.push_back(r);
  };
  emit(rho0);
  DensityGrid rho = rho0;
  for (std::uint64_t s = 1; s <= steps; ++s) {
    rho = solver.step(rho, cfg.dt);
    rho.time = rho0.time + static_cast<double>(s) * cfg.dt;
    if (s % cfg.snapshot_every == 0 || s == steps) emit(rho);
  }
  return out;
}

inline std::vector<DensityGrid> solve(const DensityGrid& rho0, double t_end, double dt) {
  SolveConfig cfg;
  cfg.t_end = t_end;
  cfg.dt = dt;
  return solve(rho0, cfg);
}

}  // namespace vortex
