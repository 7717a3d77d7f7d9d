#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vortex/grid.hpp"
#include "vortex/particle.hpp"

namespace vortex {

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error(path + ": truncated snapshot");
  return v;
}

inline void expect_magic(std::istream& in, const char* magic, const std::string& path) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw std::runtime_error(path + ": not a " + std::string(magic, 4) + " snapshot");
}

}  // namespace detail

inline constexpr std::uint32_t kSnapshotVersion = 1;

/// Particle snapshot: "VXC1", u32 version, u64 N, u64 step, f64 time, f64 sigma, N x 2 f64.
inline void write_particles(const std::string& path, const ParticleEnsemble& ens) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.write("VXC1", 4);
  detail::put<std::uint32_t>(out, kSnapshotVersion);
  detail::put<std::uint64_t>(out, ens.positions.size());
  detail::put<std::uint64_t>(out, ens.step);
  detail::put<double>(out, ens.time);
  detail::put<double>(out, ens.sigma);
  for (const auto& p : ens.positions) {
    detail::put<double>(out, p.x1);
    detail::put<double>(out, p.x2);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline ParticleEnsemble read_particles(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  detail::expect_magic(in, "VXC1", path);
  if (detail::get<std::uint32_t>(in, path) != kSnapshotVersion) throw std::runtime_error(path + ": unsupported version");
  ParticleEnsemble ens;
  const auto n = detail::get<std::uint64_t>(in, path);
  ens.step = detail::get<std::uint64_t>(in, path);
  ens.time = detail::get<double>(in, path);
  ens.sigma = detail::get<double>(in, path);
  ens.positions.resize(n);
  for (auto& p : ens.positions) {
    p.x1 = detail::get<double>(in, path);
    p.x2 = detail::get<double>(in, path);
  }
  return ens;
}

/// Density snapshot: "VXG1", u32 version, u32 n, f64 L, f64 time, f64 sigma, n^2 f64 row-major.
inline void write_density(const std::string& path, const DensityGrid& rho) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.write("VXG1", 4);
  detail::put<std::uint32_t>(out, kSnapshotVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(rho.geometry.n));
  detail::put<double>(out, rho.geometry.half_width);
  detail::put<double>(out, rho.time);
  detail::put<double>(out, rho.sigma);
  out.write(reinterpret_cast<const char*>(rho.values.data()),
            static_cast<std::streamsize>(rho.values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline DensityGrid read_density(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  detail::expect_magic(in, "VXG1", path);
  if (detail::get<std::uint32_t>(in, path) != kSnapshotVersion) throw std::runtime_error(path + ": unsupported version");
  GridGeometry g;
  g.n = detail::get<std::uint32_t>(in, path);
  g.half_width = detail::get<double>(in, path);
  g.validate();
  const double time = detail::get<double>(in, path);
  const double sigma = detail::get<double>(in, path);
  DensityGrid rho(g, time, sigma);
  if (!in.read(reinterpret_cast<char*>(rho.values.data()), static_cast<std::streamsize>(rho.values.size() * sizeof(double))))
    throw std::runtime_error(path + ": truncated snapshot");
  return rho;
}

}  // namespace vortex
