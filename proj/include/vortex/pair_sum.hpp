#pragma once

#include <cstddef>

#include "vortex/kernel.hpp"

namespace vortex::detail {

/// Unscaled Biot-Savart sum  sum_j perp(t - s_j) / (|t - s_j|^2 + eps^2)  over a
/// contiguous source block. Accumulation is split over a fixed number of lanes
/// indexed by position in the block, so the result depends only on the source
/// order and vectorizes without reassociation. Sources closer than the
/// collision radius contribute nothing.
inline Vec2 pair_sum(double tx, double ty, const double* sx, const double* sy, std::size_t m, double eps2) {
  constexpr std::size_t kLanes = 8;
  double ax[kLanes] = {};
  double ay[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= m; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const double dx = tx - sx[j + l];
      const double dy = ty - sy[j + l];
      const double r2 = dx * dx + dy * dy + eps2;
      const bool hit = r2 < kCollisionRadiusSq;
      const double inv = (hit ? 0.0 : 1.0) / (hit ? 1.0 : r2);
      ax[l] -= dy * inv;
      ay[l] += dx * inv;
    }
  }
  for (std::size_t l = 0; j < m; ++j, ++l) {
    const double dx = tx - sx[j];
    const double dy = ty - sy[j];
    const double r2 = dx * dx + dy * dy + eps2;
    const bool hit = r2 < kCollisionRadiusSq;
    const double inv = (hit ? 0.0 : 1.0) / (hit ? 1.0 : r2);
    ax[l] -= dy * inv;
    ay[l] += dx * inv;
  }
  const double sx_total = ((ax[0] + ax[1]) + (ax[2] + ax[3])) + ((ax[4] + ax[5]) + (ax[6] + ax[7]));
  const double sy_total = ((ay[0] + ay[1]) + (ay[2] + ay[3])) + ((ay[4] + ay[5]) + (ay[6] + ay[7]));
  return {sx_total, sy_total};
}

}  // namespace vortex::detail
