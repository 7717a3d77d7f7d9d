#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "vortex/grid.hpp"
#include "vortex/kernel.hpp"
#include "vortex/pair_sum.hpp"
#include "vortex/rng.hpp"
#include "vortex/treecode.hpp"

namespace vortex {

/// N point vortices of strength 1/N at a common time.
struct ParticleEnsemble {
  std::vector<Vec2> positions;
  double time = 0.0;
  double sigma = 1.0;
  std::uint64_t step = 0;  ///< completed Euler-Maruyama steps; keys the Brownian stream

  std::size_t size() const { return positions.size(); }

  void validate() const {
    if (positions.empty()) throw std::invalid_argument("ensemble must hold at least one particle");
    if (!(sigma > 0.0)) throw std::invalid_argument("ensemble sigma must be positive");
    for (const auto& p : positions)
      if (!is_finite(p)) throw std::domain_error("ensemble holds a non-finite position");
  }

  Vec2 centroid() const {
    Vec2 c{};
    for (const auto& p : positions) c += p;
    return (1.0 / static_cast<double>(positions.size())) * c;
  }
};

enum class DriftMethod { direct, treecode };

struct SimConfig {
  std::size_t n_particles = 256;
  double sigma = 1.0;
  double dt = 1e-3;
  double t_end = 1.0;
  std::uint64_t seed = 0;
  KernelConfig kernel{};
  DriftMethod drift_method = DriftMethod::direct;
  TreecodeConfig treecode{};
  std::size_t snapshot_every = 1;
  bool noise = true;  ///< false turns off the Brownian term (deterministic test hook)

  void validate() const {
    if (n_particles < 1) throw std::invalid_argument("n_particles must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(t_end >= 0.0)) throw std::invalid_argument("t_end must be nonnegative");
    if (t_end > 0.0 && dt > t_end) throw std::invalid_argument("dt must not exceed t_end");
    if (!(kernel.epsilon >= 0.0) || !std::isfinite(kernel.epsilon))
      throw std::invalid_argument("kernel epsilon must be finite and >= 0");
    if (drift_method == DriftMethod::treecode && !(treecode.theta > 0.0 && treecode.theta < 1.0))
      throw std::invalid_argument("treecode_theta must lie in (0, 1)");
    if (snapshot_every < 1) throw std::invalid_argument("snapshot_every must be >= 1");
  }

  std::uint64_t step_count() const {
    if (t_end == 0.0) return 0;
    const double ratio = t_end / dt;
    const double rounded = std::round(ratio);
    if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
      throw std::invalid_argument("t_end must be an integer multiple of dt");
    return static_cast<std::uint64_t>(rounded);
  }
};

// ---------------------------------------------------------------------------
// Initial densities

struct LambOseenInit {
  double t0 = 0.25;  ///< virtual age: the density is N(0, 2 sigma t0 I)
};

struct GaussianComponent {
  double weight = 1.0;
  Vec2 mean{};
  double c11 = 1.0, c12 = 0.0, c22 = 1.0;  ///< covariance
};

struct GaussianMixtureInit {
  std::vector<GaussianComponent> components;
};

struct GridInit {
  DensityGrid grid;
};

/// Law of the i.i.d. initial particles.
struct InitialDensity {
  std::variant<LambOseenInit, GaussianMixtureInit, GridInit> kind;

  /// Throws if the density is not a normalized nonnegative density.
  void validate(double sigma) const {
    if (const auto* lo = std::get_if<LambOseenInit>(&kind)) {
      if (!(lo->t0 > 0.0) || !(sigma > 0.0)) throw std::invalid_argument("Lamb-Oseen init needs t0 > 0");
    } else if (const auto* mix = std::get_if<GaussianMixtureInit>(&kind)) {
      if (mix->components.empty()) throw std::invalid_argument("mixture init has no components");
      double w = 0.0;
      for (const auto& c : mix->components) {
        if (!(c.weight >= 0.0)) throw std::invalid_argument("mixture weights must be nonnegative");
        if (!(c.c11 > 0.0 && c.c22 > 0.0 && c.c11 * c.c22 - c.c12 * c.c12 > 0.0))
          throw std::invalid_argument("mixture covariance must be positive definite");
        w += c.weight;
      }
      if (std::abs(w - 1.0) > 1e-8) throw std::invalid_argument("mixture weights must sum to 1 (non-normalizable)");
    } else {
      const auto& g = std::get<GridInit>(kind).grid;
      if (g.min_value() < 0.0) throw std::invalid_argument("grid init has negative values");
      if (std::abs(g.mass() - 1.0) > 1e-8) throw std::invalid_argument("grid init does not integrate to 1");
    }
  }

  /// Density value at x (grid densities are bilinearly interpolated, 0 outside).
  double value(const Vec2& x, double sigma) const {
    if (const auto* lo = std::get_if<LambOseenInit>(&kind)) {
      const double v = 2.0 * sigma * lo->t0;
      return std::exp(-norm2(x) / (2.0 * v)) / (kTwoPi * v);
    }
    if (const auto* mix = std::get_if<GaussianMixtureInit>(&kind)) {
      double s = 0.0;
      for (const auto& c : mix->components) {
        const double det = c.c11 * c.c22 - c.c12 * c.c12;
        const double d1 = x.x1 - c.mean.x1, d2 = x.x2 - c.mean.x2;
        const double q = (c.c22 * d1 * d1 - 2.0 * c.c12 * d1 * d2 + c.c11 * d2 * d2) / det;
        s += c.weight * std::exp(-0.5 * q) / (kTwoPi * std::sqrt(det));
      }
      return s;
    }
    const auto& g = std::get<GridInit>(kind).grid;
    try {
      return g.interpolate(x);
    } catch (const DomainBreach&) {
      return 0.0;
    }
  }

  /// n i.i.d. draws; draw i depends only on (seed, i).
  std::vector<Vec2> sample(std::size_t n, std::uint64_t seed, double sigma) const {
    validate(sigma);
    const RngStream rng(seed, StreamTag::initial_sample);
    std::vector<Vec2> out(n);
    if (const auto* lo = std::get_if<LambOseenInit>(&kind)) {
      const double s = std::sqrt(2.0 * sigma * lo->t0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto [z1, z2] = rng.normal2(0, i);
        out[i] = {s * z1, s * z2};
      }
    } else if (const auto* mix = std::get_if<GaussianMixtureInit>(&kind)) {
      std::vector<double> cum;
      double acc = 0.0;
      for (const auto& c : mix->components) cum.push_back(acc += c.weight);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform2(1, i).first * acc;
        const auto it = std::upper_bound(cum.begin(), cum.end(), u);
        const auto& c = mix->components[std::min<std::size_t>(it - cum.begin(), cum.size() - 1)];
        const auto [z1, z2] = rng.normal2(0, i);
        const double l11 = std::sqrt(c.c11);
        const double l21 = c.c12 / l11;
        const double l22 = std::sqrt(c.c22 - l21 * l21);
        out[i] = {c.mean.x1 + l11 * z1, c.mean.x2 + l21 * z1 + l22 * z2};
      }
    } else {
      const auto& g = std::get<GridInit>(kind).grid;
      std::vector<double> cum(g.values.size());
      double acc = 0.0;
      for (std::size_t k = 0; k < cum.size(); ++k) cum[k] = acc += std::max(0.0, g.values[k]);
      const double h = g.geometry.spacing();
      for (std::size_t i = 0; i < n; ++i) {
        const auto [u, unused] = rng.uniform2(1, i);
        (void)unused;
        const auto k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u * acc) - cum.begin());
        const std::size_t kk = std::min(k, cum.size() - 1);
        const auto [j1, j2] = rng.uniform2(0, i);
        const Vec2 node = g.geometry.node(kk % g.geometry.n, kk / g.geometry.n);
        out[i] = {node.x1 + (j1 - 0.5) * h, node.x2 + (j2 - 0.5) * h};
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Drift

/// Exact pairwise drift b_i = (1/N) sum_{j != i} K(x_i - x_j). Each b_i is a
/// fixed-order sum, so serial and threaded evaluation agree bitwise.
inline std::vector<Vec2> drift_direct(std::span<const Vec2> pos, const KernelConfig& cfg = {}) {
  const std::size_t n = pos.size();
  std::vector<Vec2> out(n);
  if (n == 0) return out;
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = pos[i].x1;
    ys[i] = pos[i].x2;
  }
  const double eps2 = cfg.epsilon * cfg.epsilon;
  const double scale = kInvTwoPi / static_cast<double>(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 s = detail::pair_sum(xs[i], ys[i], xs.data(), ys.data(), n, eps2);
    out[i] = {s.x1 * scale, s.x2 * scale};
  }
  return out;
}

inline std::vector<Vec2> drift_direct(const ParticleEnsemble& ens, const KernelConfig& cfg = {}) {
  return drift_direct(std::span<const Vec2>(ens.positions), cfg);
}

inline std::vector<Vec2> compute_drift(const ParticleEnsemble& ens, const SimConfig& cfg) {
  if (cfg.drift_method == DriftMethod::treecode) return drift_treecode(ens.positions, cfg.treecode, cfg.kernel);
  return drift_direct(ens, cfg.kernel);
}

// ---------------------------------------------------------------------------
// Time stepping

/// One Euler-Maruyama step X' = X + dt b(X) + sqrt(2 sigma dt) xi. The normal
/// pair for particle i is keyed by (seed, ens.step, i).
inline ParticleEnsemble em_step(const ParticleEnsemble& ens, double dt, const RngStream& rng, const SimConfig& cfg) {
  if (!(dt >= 0.0)) throw std::invalid_argument("dt must be nonnegative");
  ParticleEnsemble next = ens;
  if (dt == 0.0) return next;
  const auto drift = compute_drift(ens, cfg);
  const double amp = std::sqrt(2.0 * ens.sigma * dt);
  const std::size_t n = ens.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 x = ens.positions[i] + dt * drift[i];
    if (cfg.noise) {
      const auto [z1, z2] = rng.normal2(ens.step, i);
      x += Vec2{amp * z1, amp * z2};
    }
    next.positions[i] = x;
  }
  next.time = ens.time + dt;
  next.step = ens.step + 1;
  return next;
}

inline ParticleEnsemble initial_ensemble(const SimConfig& cfg, const InitialDensity& init) {
  cfg.validate();
  ParticleEnsemble ens;
  ens.positions = init.sample(cfg.n_particles, cfg.seed, cfg.sigma);
  ens.sigma = cfg.sigma;
  return ens;
}

/// Runs the particle system from an i.i.d. sample of `init`; snapshots every
/// snapshot_every steps (the initial state and final state always included).
/// `observer`, when given, sees every snapshot instead of it being stored.
inline std::vector<ParticleEnsemble> simulate(const SimConfig& cfg, const InitialDensity& init,
                                              const std::function<void(const ParticleEnsemble&)>& observer = {}) {
  cfg.validate();
  const std::uint64_t steps = cfg.step_count();
  ParticleEnsemble ens = initial_ensemble(cfg, init);
  const RngStream rng(cfg.seed, StreamTag::brownian);
  std::vector<ParticleEnsemble> out;
  auto emit = [&](const ParticleEnsemble& e) {
    if (observer)
      observer(e);
    else
      out.push_back(e);
  };
  emit(ens);
  for (std::uint64_t s = 1; s <= steps; ++s) {
    ens = em_step(ens, cfg.dt, rng, cfg);
    ens.time = static_cast<double>(s) * cfg.dt;
    if (s % cfg.snapshot_every == 0 || s == steps) emit(ens);
  }
  return out;
}

/// Runs to t_end and returns only the final state.
inline ParticleEnsemble simulate_final(const SimConfig& cfg, const InitialDensity& init) {
  ParticleEnsemble last;
  SimConfig c = cfg;
  c.snapshot_every = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.step_count()));
  simulate(c, init, [&](const ParticleEnsemble& e) { last = e; });
  return last;
}

// ---------------------------------------------------------------------------
// McKean-Vlasov particle driven by a precomputed mean-field velocity

/// Euler-Maruyama step with drift bilinearly interpolated from `velocity`.
/// Throws DomainBreach if x is not strictly inside the grid.
inline Vec2 mckean_step(const Vec2& x, const VelocityGrid& velocity, double dt, const RngStream& rng, double sigma,
                        std::uint64_t step, std::uint64_t index, bool noise = true) {
  Vec2 next = x + dt * velocity.interpolate(x);
  if (noise) {
    const auto [z1, z2] = rng.normal2(step, index);
    const double amp = std::sqrt(2.0 * sigma * dt);
    next += Vec2{amp * z1, amp * z2};
  }
  return next;
}

}  // namespace vortex
