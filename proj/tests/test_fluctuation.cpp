#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "vortex/fluctuation.hpp"

using namespace vortex;

namespace {

std::vector<ParticleEnsemble> iid_runs(std::size_t n, std::size_t runs, double t0 = 0.25) {
  std::vector<ParticleEnsemble> out;
  for (std::size_t r = 0; r < runs; ++r) {
    SimConfig cfg;
    cfg.n_particles = n;
    cfg.seed = 900 + r;
    out.push_back(initial_ensemble(cfg, InitialDensity{LambOseenInit{t0}}));
  }
  return out;
}

std::vector<double> tabulate(const TestFunction& h, const GridGeometry& g) {
  std::vector<double> v(g.size());
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) v[g.index(i, j)] = h.eval(g.node(i, j));
  return v;
}

}  // namespace

TEST(Hermite, FamilyIsOrthonormal) {
  const auto fam = hermite_family(4);
  ASSERT_EQ(fam.size(), 15u);
  EXPECT_EQ(fam.front().id, "H00");
  EXPECT_EQ(fam.back().id, "H04");
  EXPECT_NEAR(fam.front().eval({0.0, 0.0}), 1.0 / std::sqrt(std::numbers::pi), 1e-15);
  const GridGeometry g{10.0, 128};
  std::vector<std::vector<double>> tab;
  for (const auto& h : fam) tab.push_back(tabulate(h, g));
  for (std::size_t a = 0; a < fam.size(); ++a)
    for (std::size_t b = 0; b < fam.size(); ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) s += tab[a][k] * tab[b][k];
      EXPECT_NEAR(s * g.cell_area(), a == b ? 1.0 : 0.0, 1e-12) << fam[a].id << " " << fam[b].id;
    }
  EXPECT_THROW(hermite_test_function(-1, 0), std::invalid_argument);
}

TEST(Pairing, ConstantsGiveExactlyZero) {
  const GridGeometry g{8.0, 64};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  for (const auto& run : iid_runs(1000, 3))
    for (double c : {1.0, 0.25, 8.0}) EXPECT_EQ(pair_fluctuation(run, rho, constant_test_function(c)), 0.0);
}

TEST(Pairing, SingleParticleMatchesDefinition) {
  const GridGeometry g{8.0, 128};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  ParticleEnsemble e;
  e.positions = {{0.4, -0.3}};
  const auto h = hermite_test_function(1, 1);
  // int H11 rho = 0 by symmetry.
  EXPECT_NEAR(pair_fluctuation(e, rho, h), h.eval({0.4, -0.3}), 1e-14);
  const auto h0 = hermite_test_function(0, 0);
  // Gaussian integral of H00 against N(0, I/2): 2 / (3 sqrt(pi)).
  EXPECT_NEAR(pair_fluctuation(e, rho, h0), h0.eval({0.4, -0.3}) - 2.0 / (3.0 * std::sqrt(std::numbers::pi)), 1e-12);
}

TEST(Pairing, LinearInTestFunction) {
  const GridGeometry g{8.0, 64};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  const auto fam = hermite_family(2);
  const auto run = iid_runs(500, 1).front();
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> c(fam.size());
    for (auto& v : c) v = u(gen);
    const TestFunction combo{"combo", [&](const Vec2& x) {
                               double s = 0.0;
                               for (std::size_t k = 0; k < fam.size(); ++k) s += c[k] * fam[k].eval(x);
                               return s;
                             }};
    double expect = 0.0;
    for (std::size_t k = 0; k < fam.size(); ++k) expect += c[k] * pair_fluctuation(run, rho, fam[k]);
    EXPECT_NEAR(pair_fluctuation(run, rho, combo), expect, 1e-12);
  }
}

TEST(Pairing, IidMeanAndVarianceMatchReference) {
  const GridGeometry g{8.0, 128};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  const auto h = hermite_test_function(0, 0);
  std::vector<double> v;
  for (const auto& run : iid_runs(256, 500)) v.push_back(pair_fluctuation(run, rho, h));
  const auto m = moments(v);
  EXPECT_LE(std::abs(m.mean), 3.0 * std::sqrt(m.variance / 500.0));
  EXPECT_LE(std::abs(m.variance - reference_variance(rho, h)), 3.0 * m.variance_se);
}

TEST(Pairing, TimeMismatchThrows) {
  const GridGeometry g{8.0, 64};
  const auto rho = lamb_oseen(1.0, 0.25, 0.5, g);
  const auto run = iid_runs(10, 1).front();
  EXPECT_THROW(pair_fluctuation(run, rho, hermite_test_function(0, 0)), std::invalid_argument);
}

TEST(Moments, SmallSample) {
  const std::vector<double> x{1.0, 2.0, 4.0, 7.0};
  const auto m = moments(x);
  EXPECT_DOUBLE_EQ(m.mean, 3.5);
  EXPECT_DOUBLE_EQ(m.variance, 7.0);
  EXPECT_GT(m.variance_se, 0.0);
  EXPECT_THROW(moments(std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST(Spde, NoiseFluxVanishesWithoutDensity) {
  const GridGeometry g{6.0, 32};
  DensityGrid rho = lamb_oseen(1.0, 0.25, 0.0, g);
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n / 2; ++i) rho.values[g.index(i, j)] = 0.0;
  std::vector<double> f1, f2;
  FluctuationSpde::noise_flux(rho, 0.01, RngStream(3, StreamTag::spde_noise), 0, f1, f2);
  for (std::size_t j = 0; j < g.n; ++j)
    for (std::size_t i = 0; i < g.n; ++i) {
      const std::size_t k = g.index(i, j);
      if (i < g.n / 2) {
        EXPECT_EQ(f1[k], 0.0);
        EXPECT_EQ(f2[k], 0.0);
      }
    }
  EXPECT_NE(f1[g.index(g.n / 2, g.n / 2)], 0.0);
}

TEST(Spde, ZeroNoiseZeroInitialStaysZero) {
  const GridGeometry g{6.0, 32};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  MeanFieldSolver solver(g);
  const auto u = solver.velocity(rho);
  FluctuationSpde spde(g, {}, SpdeConfig{true, false});
  std::vector<double> eta(g.size(), 0.0);
  for (int s = 0; s < 10; ++s) spde.step(eta, rho, u, 0.05, RngStream(1, StreamTag::spde_noise), s);
  for (double v : eta) EXPECT_EQ(v, 0.0);
}

TEST(Spde, MassStaysZero) {
  const GridGeometry g{6.0, 32};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  MeanFieldSolver solver(g);
  const auto u = solver.velocity(rho);
  FluctuationSpde spde(g);
  auto eta = spde.initial_field(rho, RngStream(2, StreamTag::spde_initial));
  double scale = 0.0;
  for (double v : eta) scale = std::max(scale, std::abs(v));
  for (int s = 0; s < 20; ++s) {
    spde.step(eta, rho, u, 0.05, RngStream(2, StreamTag::spde_noise), s);
    double total = 0.0;
    for (double v : eta) total += v;
    EXPECT_LE(std::abs(total * g.cell_area()), 1e-12 * scale);
  }
}

TEST(Spde, CflViolationThrows) {
  const GridGeometry g{6.0, 32};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  MeanFieldSolver solver(g);
  const auto u = solver.velocity(rho);
  FluctuationSpde spde(g);
  std::vector<double> eta(g.size(), 0.0);
  EXPECT_THROW(spde.step(eta, rho, u, 1e3, RngStream(1), 0), CflViolation);
}

TEST(Spde, InitialFieldHasIidCovariance) {
  const GridGeometry g{6.0, 32};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  FluctuationSpde spde(g);
  for (const auto& h : {hermite_test_function(0, 0), hermite_test_function(2, 0), hermite_test_function(1, 1)}) {
    const auto tab = tabulate(h, g);
    std::vector<double> v;
    for (std::uint64_t r = 0; r < 4000; ++r)
      v.push_back(pair_field(spde.initial_field(rho, RngStream(r, StreamTag::spde_initial)), g, tab));
    const auto m = moments(v);
    EXPECT_LE(std::abs(m.variance - reference_variance(rho, h)), 3.0 * m.variance_se) << h.id;
    EXPECT_LE(std::abs(m.mean), 3.0 * std::sqrt(m.variance / 4000.0)) << h.id;
  }
}

// Frozen rho, no transport, eta_0 = 0: eta_M = sum_m H^m H_{1/2} (-div F_m), so
// Var eta_M(h) = 2 sigma dt sum_{m<M} sum_k rho_k |grad H^m H_{1/2} h|_k^2 cell, mode by mode.
TEST(Spde, FrozenHeatVarianceMatchesModeSum) {
  const GridGeometry g{6.0, 32};
  const auto rho = lamb_oseen(1.0, 0.25, 0.0, g);
  const double dt = 0.05;
  const int steps = 20;
  const auto h = hermite_test_function(0, 0);
  const auto tab = tabulate(h, g);

  SpectralPlan plan(g);
  auto w = plan.heat(tab, 0.5 * dt);
  double oracle = 0.0;
  for (int m = 0; m < steps; ++m) {
    const auto d1 = plan.derivative(w, 1, 0), d2 = plan.derivative(w, 0, 1);
    double s = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) s += rho.values[k] * (d1[k] * d1[k] + d2[k] * d2[k]);
    oracle += 2.0 * dt * s * g.cell_area();
    w = plan.heat(w, dt);
  }

  MeanFieldSolver solver(g);
  const auto u = solver.velocity(rho);
  FluctuationSpde spde(g, {}, SpdeConfig{false, true});
  std::vector<double> v;
  for (std::uint64_t r = 0; r < 2000; ++r) {
    std::vector<double> eta(g.size(), 0.0);
    const RngStream rng(r, StreamTag::spde_noise);
    for (int s = 0; s < steps; ++s) spde.step(eta, rho, u, dt, rng, s);
    v.push_back(pair_field(eta, g, tab));
  }
  const auto m = moments(v);
  EXPECT_GT(oracle, 0.0);
  EXPECT_LE(std::abs(m.variance - oracle), 3.0 * m.variance_se);
}

TEST(Ensembles, DeterministicAndComparable) {
  const auto tests = hermite_family(1);
  SpdeRunConfig c;
  c.dt = 0.05;
  c.t_end = 0.2;
  c.record_every = 2;
  c.replicas = 40;
  c.base_seed = 11;
  const GridGeometry g{6.0, 32};
  const auto rho0 = lamb_oseen(1.0, 0.25, 0.0, g);
  const auto a = spde_fluctuations(rho0, c, tests);
  const auto b = spde_fluctuations(rho0, c, tests);
  ASSERT_EQ(a.times.size(), 3u);
  ASSERT_EQ(a.samples.size(), 120u);
  for (std::size_t k = 0; k < a.samples.size(); ++k) EXPECT_EQ(a.samples[k].values, b.samples[k].values);

  const auto same = covariance_compare(a, a);
  EXPECT_EQ(same.max_discrepancy, 0.0);
  for (double d : same.cross_discrepancy) EXPECT_EQ(d, 0.0);

  SimConfig sim;
  sim.n_particles = 128;
  sim.dt = 0.05;
  sim.t_end = 0.2;
  sim.snapshot_every = 2;
  sim.seed = 11;
  std::vector<DensityGrid> refs{lamb_oseen(1.0, 0.25, 0.0, g), lamb_oseen(1.0, 0.25, 0.1, g),
                                lamb_oseen(1.0, 0.25, 0.2, g)};
  const auto p = particle_fluctuations(sim, InitialDensity{LambOseenInit{0.25}}, 40, refs, tests);
  const auto rep = covariance_compare(p, a);
  EXPECT_EQ(rep.rows.size(), 9u);
  EXPECT_EQ(rep.cross_discrepancy.size(), 3u);

  const auto other = hermite_family(2);
  EXPECT_THROW(covariance_compare(spde_fluctuations(rho0, c, other), a), std::invalid_argument);
  const std::vector<DensityGrid> off{lamb_oseen(1.0, 0.25, 0.03, g)};
  EXPECT_THROW(particle_fluctuations(sim, InitialDensity{LambOseenInit{0.25}}, 2, off, tests), std::invalid_argument);
}
