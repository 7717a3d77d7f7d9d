#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vortex/deviation.hpp"

using namespace vortex;

namespace {

const GaussianMixtureInit kTwo{{{0.6, {-0.8, 0.2}, 0.5, 0.1, 0.4}, {0.4, {1.0, -0.4}, 0.3, 0.0, 0.6}}};

PhiField lamb_oseen_field(std::size_t n) {
  const GridGeometry g{12.0, n};
  MeanFieldSolver solver(g);
  return phi_field(lamb_oseen(1.0, 0.25, 0.5, g), solver);
}

PhiField mixture_field(const GaussianMixtureInit& mix, std::size_t n, double half_width = 8.0) {
  const GridGeometry g{half_width, n};
  MeanFieldSolver solver(g);
  return phi_field(sample_density(InitialDensity{mix}, g, 1.0), solver);
}

std::vector<ParticleEnsemble> runs_of(const InitialDensity& init, std::size_t n, std::size_t runs) {
  std::vector<ParticleEnsemble> out;
  for (std::size_t r = 0; r < runs; ++r) {
    SimConfig cfg;
    cfg.n_particles = n;
    cfg.seed = 500 + r;
    out.push_back(initial_ensemble(cfg, init));
  }
  return out;
}

Vec2 node_of(const PhiField& f, std::size_t k) { return f.geometry.node(k % f.geometry.n, k / f.geometry.n); }

}  // namespace

TEST(Phi, JabinWangConstant) { EXPECT_NEAR(kJabinWangConstant, 2561965.53, 0.01); }

TEST(Phi, VanishesOnLambOseen) {
  const auto f = lamb_oseen_field(128);
  double mx = 0.0;
  for (std::size_t a = 0; a < f.masked.size(); a += 3)
    for (std::size_t b = 0; b < f.masked.size(); b += 5)
      mx = std::max(mx, std::abs(phi_eval(node_of(f, f.masked[a]), node_of(f, f.masked[b]), f)));
  EXPECT_LE(mx, 1e-10);
  const auto gm = gamma_estimate(f, 1.0);
  EXPECT_LE(gm.gamma, 1e-10);
  EXPECT_LE(gm.s_max, 1e-10);
}

TEST(Phi, SymmetricAndDiagonal) {
  const auto f = mixture_field(kTwo, 128);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec2 x{u(gen), u(gen)}, y{u(gen), u(gen)};
    const double a = phi_eval(x, y, f), b = phi_eval(y, x, f);
    EXPECT_NEAR(a, b, 1e-13 * (1.0 + std::abs(a)));
  }
  const std::size_t k = f.masked[f.masked.size() / 2];
  EXPECT_NEAR(phi_eval(node_of(f, k), node_of(f, k), f), f.drift_term(k), 1e-14);
}

TEST(Phi, OffMaskOrGridThrows) {
  const auto f = lamb_oseen_field(64);
  EXPECT_THROW(phi_eval({11.5, 11.5}, {0.0, 0.0}, f), std::domain_error);
  EXPECT_THROW(phi_eval({0.0, 0.0}, {30.0, 0.0}, f), std::domain_error);
  EXPECT_NO_THROW(phi_eval({0.3, -0.2}, {1.0, 0.5}, f));
}

TEST(Cancellation, MixtureAt256AndBrokenControl) {
  const auto f = mixture_field(kTwo, 256);
  const auto rep = phi_cancellation_check(f, 16);
  EXPECT_GT(rep.sampled, 50u);
  EXPECT_LE(rep.max_abs_x_integral, 1e-5);
  EXPECT_LE(rep.max_abs_y_integral, 1e-5);
  const auto broken = phi_cancellation_check(f, 16, false);
  EXPECT_GT(broken.max_abs_y_integral, 1e-2);
}

TEST(Cancellation, LambOseen) {
  const auto rep = phi_cancellation_check(lamb_oseen_field(128), 8);
  EXPECT_LE(rep.max_abs_x_integral, 1e-8);
  EXPECT_LE(rep.max_abs_y_integral, 1e-8);
}

TEST(Gamma, MonotoneAlongHomotopyToLambOseen) {
  // s = 0 is a centred isotropic Gaussian; s moves the second lobe off centre.
  double previous = -1.0;
  for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const GaussianMixtureInit mix{{{0.6, {0.0, 0.0}, 0.5, 0.0, 0.5}, {0.4, {s * 1.2, -s * 0.6}, 0.5, 0.0, 0.5 - 0.2 * s}}};
    const auto gm = gamma_estimate(mixture_field(mix, 128, 12.0), 1.0);
    EXPECT_GE(gm.gamma, previous) << "s = " << s;
    if (s == 0.0) {
      EXPECT_LE(gm.gamma, 1e-10);
    }
    previous = gm.gamma;
  }
  EXPECT_GT(previous, 1.0);
}

TEST(Gamma, MixtureReport) {
  const auto gm = gamma_estimate(mixture_field(kTwo, 128), 1.72);
  EXPECT_TRUE(std::isfinite(gm.c1_prime.fitted_constant));
  EXPECT_GT(gm.c1_prime.fitted_constant, 0.0);
  EXPECT_GE(gm.argmax_p, 1);
  EXPECT_LE(gm.argmax_p, 64);
  EXPECT_NEAR(gm.gamma, kJabinWangConstant * gm.sup_ratio * gm.sup_ratio, 1e-9 * gm.gamma);
  EXPECT_GE(gm.lambda_route, gm.sup_ratio);
  EXPECT_NEAR(gm.eta_max * gm.eta_max * gm.gamma, 1.0, 1e-12);
  EXPECT_THROW(gamma_estimate(mixture_field(kTwo, 64), 1.0, 4), std::invalid_argument);
  EXPECT_THROW(gamma_estimate(mixture_field(kTwo, 64), 0.0), std::invalid_argument);
}

TEST(EtaSchedule, Examples) {
  EXPECT_DOUBLE_EQ(eta_schedule(0.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(eta_schedule(1.0, 2.0), 0.25);
  double last = eta_schedule(0.0, 3.0);
  for (double t = 0.1; t < 5.0; t += 0.1) {
    EXPECT_LT(eta_schedule(t, 3.0), last);
    last = eta_schedule(t, 3.0);
  }
  EXPECT_THROW(eta_schedule(1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(eta_schedule(-1.0, 1.0), std::invalid_argument);
}

TEST(EntropyBudget, SingleParticleOnLambOseen) {
  const auto f = lamb_oseen_field(128);
  const auto runs = runs_of(InitialDensity{LambOseenInit{0.75}}, 1, 20);
  const auto b = entropy_budget(runs, f, 0.5, 0.0);
  EXPECT_EQ(b.excluded, 0u);
  EXPECT_LE(std::abs(b.kernel_term), 1e-10);
}

TEST(EntropyBudget, IidLambOseenHasZeroKernelTerm) {
  const auto f = lamb_oseen_field(128);
  const auto runs = runs_of(InitialDensity{LambOseenInit{0.75}}, 64, 200);
  const auto b = entropy_budget(runs, f, 0.5, 0.0);
  // Pairs cancel exactly since K(x - y) . (x - y) = 0, so every run is zero up to rounding.
  EXPECT_LE(std::abs(b.kernel_term), 1e-10);
  EXPECT_LE(std::abs(b.log_moment), 1e-10);
}

TEST(EntropyBudget, IidMixtureMeanWithinThreeStandardErrors) {
  const auto f = mixture_field(kTwo, 128);
  const auto runs = runs_of(InitialDensity{kTwo}, 64, 200);
  const auto b = entropy_budget(runs, f, 0.5, 0.01);
  EXPECT_GT(b.kernel_term_se, 0.0);
  EXPECT_LE(std::abs(b.kernel_term), 3.0 * b.kernel_term_se);
  EXPECT_LT(b.excluded, 10u);
  EXPECT_GT(b.log_moment, 0.0);
  EXPECT_NEAR(b.dv_bound, (0.01 + b.log_moment / 64.0) / 0.5, 1e-14);
}

TEST(EntropyBudget, KernelTermIsMinusPhiN) {
  const auto f = mixture_field(kTwo, 128);
  const auto runs = runs_of(InitialDensity{kTwo}, 40, 1);
  const auto& x = runs.front().positions;
  double phi_n = 0.0;
  for (const auto& a : x)
    for (const auto& b : x) phi_n += phi_eval(a, b, f);
  phi_n /= static_cast<double>(x.size() * x.size());
  const auto b = entropy_budget(runs, f, 1.0, 0.0);
  ASSERT_EQ(b.excluded, 0u);
  EXPECT_NEAR(b.kernel_term, -phi_n, 1e-12);
}

TEST(EntropyBudget, Errors) {
  const auto f = lamb_oseen_field(64);
  const auto runs = runs_of(InitialDensity{LambOseenInit{0.75}}, 8, 2);
  EXPECT_THROW(entropy_budget(std::span<const ParticleEnsemble>{}, f, 0.5, 0.0), std::invalid_argument);
  EXPECT_THROW(entropy_budget(runs, f, 0.0, 0.0), std::invalid_argument);
  auto mixed = runs;
  mixed.push_back(runs_of(InitialDensity{LambOseenInit{0.75}}, 9, 1).front());
  EXPECT_THROW(entropy_budget(mixed, f, 0.5, 0.0), std::invalid_argument);
}
