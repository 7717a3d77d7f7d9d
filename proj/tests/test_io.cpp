#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vortex/io.hpp"
#include "vortex/meanfield.hpp"

using namespace vortex;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vortex_io_" + name)).string();
}

}  // namespace

TEST(Snapshot, ParticlesRoundTrip) {
  ParticleEnsemble ens;
  ens.positions = {{0.1, -2.5}, {1e-300, 3.0}, {-0.0, 7.25}};
  ens.time = 0.37;
  ens.sigma = 0.8;
  ens.step = 37;
  const auto path = temp_path("particles.bin");
  write_particles(path, ens);
  const auto back = read_particles(path);
  EXPECT_EQ(back.time, ens.time);
  EXPECT_EQ(back.sigma, ens.sigma);
  EXPECT_EQ(back.step, ens.step);
  ASSERT_EQ(back.size(), ens.size());
  for (std::size_t k = 0; k < ens.size(); ++k) {
    EXPECT_EQ(back.positions[k].x1, ens.positions[k].x1);
    EXPECT_EQ(back.positions[k].x2, ens.positions[k].x2);
  }
  std::filesystem::remove(path);
}

TEST(Snapshot, DensityRoundTrip) {
  const auto rho = lamb_oseen(1.0, 0.25, 0.3, GridGeometry{6.0, 32});
  const auto path = temp_path("density.bin");
  write_density(path, rho);
  const auto back = read_density(path);
  EXPECT_TRUE(back.geometry == rho.geometry);
  EXPECT_EQ(back.time, rho.time);
  EXPECT_EQ(back.values, rho.values);
  std::filesystem::remove(path);
}

TEST(Snapshot, RejectsForeignAndTruncatedFiles) {
  const auto path = temp_path("bad.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "VXG1";
  }
  EXPECT_THROW(read_particles(path), std::runtime_error);
  EXPECT_THROW(read_density(path), std::runtime_error);
  EXPECT_THROW(read_density(temp_path("missing.bin")), std::runtime_error);
  std::filesystem::remove(path);
}
