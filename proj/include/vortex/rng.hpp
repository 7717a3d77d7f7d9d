#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace vortex {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every draw is
// a pure function of (key, counter), so results never depend on evaluation
// order or thread schedule.
namespace philox_detail {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace philox_detail

using Philox4x32Block = std::array<std::uint32_t, 4>;

constexpr Philox4x32Block philox4x32_10(Philox4x32Block ctr, std::array<std::uint32_t, 2> key) {
  using namespace philox_detail;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

/// Stream tags keep independent uses of one seed apart.
enum class StreamTag : std::uint32_t {
  brownian = 0,
  initial_sample = 1,
  spde_noise = 2,
  spde_initial = 3,
  test = 15,
};

/// Counter-keyed source of standard normals: draw(step, index) returns the same
/// pair of N(0,1) variates for the same (seed, tag, step, index), always.
class RngStream {
 public:
  constexpr explicit RngStream(std::uint64_t seed, StreamTag tag = StreamTag::brownian)
      : seed_(seed), tag_(tag) {}

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr StreamTag tag() const { return tag_; }
  constexpr RngStream with_tag(StreamTag tag) const { return RngStream(seed_, tag); }

  constexpr Philox4x32Block raw(std::uint64_t step, std::uint64_t index) const {
    // index keeps 36 bits, tag 4 bits: room for 6.8e10 particles or cells.
    const std::uint64_t hi = (index & 0xFFFFFFFFFull) | (static_cast<std::uint64_t>(tag_) << 36);
    const Philox4x32Block ctr{static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                              static_cast<std::uint32_t>(hi), static_cast<std::uint32_t>(hi >> 32)};
    return philox4x32_10(ctr, {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
  }

  /// Two uniforms in the open interval (0, 1) with 53-bit resolution.
  std::pair<double, double> uniform2(std::uint64_t step, std::uint64_t index) const {
    const auto r = raw(step, index);
    return {to_open_unit(r[0], r[1]), to_open_unit(r[2], r[3])};
  }

  /// Two independent standard normals via Box-Muller; axis 0 and axis 1.
  std::pair<double, double> normal2(std::uint64_t step, std::uint64_t index) const {
    const auto [u1, u2] = uniform2(step, index);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

 private:
  static double to_open_unit(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(a) << 32) | b) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t seed_;
  StreamTag tag_;
};

}  // namespace vortex
