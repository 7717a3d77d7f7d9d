#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "vortex/kernel.hpp"
#include "vortex/pair_sum.hpp"

namespace vortex {

struct TreecodeConfig {
  double theta = 0.5;           ///< opening angle: accept a cell when size < theta * distance
  std::size_t order = 2;        ///< highest multipole term kept; 1 is the monopole about the centroid
  std::size_t leaf_size = 32;   ///< maximum particles per leaf
};

/// Quadtree over equal-strength point vortices with complex multipole
/// moments about each cell's centroid. Build once per configuration.
class Quadtree {
 public:
  struct Cell {
    double cx = 0.0, cy = 0.0;   // box center
    double half = 0.0;           // box half side
    std::complex<double> centroid;
    std::size_t first = 0;       // range in order()
    std::size_t count = 0;
    std::array<int, 4> child{-1, -1, -1, -1};
    std::size_t moment_offset = 0;
    bool leaf() const { return child[0] < 0 && child[1] < 0 && child[2] < 0 && child[3] < 0; }
  };

  Quadtree(std::span<const Vec2> pos, std::size_t order, std::size_t leaf_size)
      : pos_(pos), order_(order), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    if (pos.empty()) return;
    order_idx_.resize(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) order_idx_[i] = i;
    double lo1 = pos[0].x1, hi1 = pos[0].x1, lo2 = pos[0].x2, hi2 = pos[0].x2;
    for (const auto& p : pos) {
      lo1 = std::min(lo1, p.x1);
      hi1 = std::max(hi1, p.x1);
      lo2 = std::min(lo2, p.x2);
      hi2 = std::max(hi2, p.x2);
    }
    const double half = 0.5 * std::max({hi1 - lo1, hi2 - lo2, 1e-12}) * (1.0 + 1e-12);
    cells_.reserve(2 * pos.size() / leaf_size_ + 16);
    build(0.5 * (lo1 + hi1), 0.5 * (lo2 + hi2), half, 0, pos.size(), 0);
    leaves_.reserve(cells_.size());
    for (std::size_t c = 0; c < cells_.size(); ++c)
      if (cells_[c].leaf()) leaves_.push_back(c);
  }

  const std::vector<Cell>& cells() const { return cells_; }
  const std::vector<std::size_t>& leaves() const { return leaves_; }
  const std::vector<std::size_t>& order() const { return order_idx_; }
  std::size_t multipole_order() const { return order_; }
  std::span<const std::complex<double>> moments(const Cell& c) const {
    return {moments_.data() + c.moment_offset, order_ + 1};
  }

 private:
  void build(double cx, double cy, double half, std::size_t first, std::size_t count, int depth) {
    const std::size_t id = cells_.size();
    cells_.push_back({});
    {
      Cell& c = cells_[id];
      c.cx = cx;
      c.cy = cy;
      c.half = half;
      c.first = first;
      c.count = count;
    }
    std::complex<double> centroid{0.0, 0.0};
    for (std::size_t k = first; k < first + count; ++k) {
      const auto& p = pos_[order_idx_[k]];
      centroid += std::complex<double>(p.x1, p.x2);
    }
    centroid /= static_cast<double>(count);
    cells_[id].centroid = centroid;
    cells_[id].moment_offset = moments_.size();
    moments_.resize(moments_.size() + order_ + 1, {0.0, 0.0});
    for (std::size_t k = first; k < first + count; ++k) {
      const auto& p = pos_[order_idx_[k]];
      const std::complex<double> d = std::complex<double>(p.x1, p.x2) - centroid;
      std::complex<double> power{1.0, 0.0};
      for (std::size_t m = 0; m <= order_; ++m) {
        moments_[cells_[id].moment_offset + m] += power;
        power *= d;
      }
    }
    if (count <= leaf_size_ || depth >= 60) return;

    // Stable partition into quadrants keeps the build deterministic.
    auto quadrant = [&](std::size_t idx) {
      const auto& p = pos_[idx];
      return (p.x1 >= cx ? 1 : 0) + (p.x2 >= cy ? 2 : 0);
    };
    std::array<std::size_t, 4> counts{};
    for (std::size_t k = first; k < first + count; ++k) ++counts[quadrant(order_idx_[k])];
    std::vector<std::size_t> scratch(order_idx_.begin() + first, order_idx_.begin() + first + count);
    std::array<std::size_t, 4> start{first, first + counts[0], first + counts[0] + counts[1],
                                     first + counts[0] + counts[1] + counts[2]};
    auto cursor = start;
    for (std::size_t idx : scratch) order_idx_[cursor[quadrant(idx)]++] = idx;

    const double q = 0.5 * half;
    for (int quad = 0; quad < 4; ++quad) {
      if (counts[quad] == 0) continue;
      const double ccx = cx + ((quad & 1) ? q : -q);
      const double ccy = cy + ((quad & 2) ? q : -q);
      const int child = static_cast<int>(cells_.size());
      build(ccx, ccy, q, start[quad], counts[quad], depth + 1);
      cells_[id].child[quad] = child;
    }
  }

  std::span<const Vec2> pos_;
  std::size_t order_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_idx_;
  std::vector<Cell> cells_;
  std::vector<std::size_t> leaves_;
  std::vector<std::complex<double>> moments_;
};

/// Treecode approximation of b_i = (1/N) sum_j K(x_i - x_j).
///
/// Targets are processed one leaf at a time. For each source cell the leaf
/// either accepts the cell's multipole expansion (cell size < theta times the
/// distance from the cell centroid to the nearest point of the leaf box) or
/// opens it; opened leaves are summed directly, with source indices sorted
/// ascending so that with nothing accepted the result is bitwise identical to
/// the direct sum. Far-field terms use the exact kernel; with epsilon > 0 their
/// relative error gains a term of order (epsilon / distance)^2.
inline std::vector<Vec2> drift_treecode(std::span<const Vec2> pos, const TreecodeConfig& tc,
                                        const KernelConfig& kc = {}) {
  if (!(tc.theta > 0.0 && tc.theta < 1.0)) throw std::invalid_argument("treecode theta must lie in (0, 1)");
  const std::size_t n = pos.size();
  std::vector<Vec2> out(n);
  if (n == 0) return out;
  const Quadtree tree(pos, tc.order, tc.leaf_size);
  const auto& cells = tree.cells();
  const auto& leaves = tree.leaves();
  const double eps2 = kc.epsilon * kc.epsilon;
  const double scale = kInvTwoPi / static_cast<double>(n);
  const std::size_t p = tree.multipole_order();

#pragma omp parallel
  {
    std::vector<std::size_t> near;
    std::vector<std::size_t> accepted;
    std::vector<std::size_t> stack;
    std::vector<double> sx, sy, tx, ty, fr, fi;
#pragma omp for schedule(static)
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      const auto& target = cells[leaves[li]];
      const double target_reach = target.half * std::sqrt(2.0);
      near.clear();
      accepted.clear();
      stack.assign(1, 0);
      while (!stack.empty()) {
        const std::size_t c = stack.back();
        stack.pop_back();
        const auto& cell = cells[c];
        const double dx = cell.centroid.real() - target.cx;
        const double dy = cell.centroid.imag() - target.cy;
        const double dist = std::sqrt(dx * dx + dy * dy) - target_reach;
        if (c != leaves[li] && dist > 0.0 && 2.0 * cell.half < tc.theta * dist) {
          accepted.push_back(c);
        } else if (cell.leaf()) {
          for (std::size_t k = cell.first; k < cell.first + cell.count; ++k) near.push_back(tree.order()[k]);
        } else {
          for (int q = 3; q >= 0; --q)
            if (cell.child[q] >= 0) stack.push_back(static_cast<std::size_t>(cell.child[q]));
        }
      }
      std::sort(near.begin(), near.end());
      sx.resize(near.size());
      sy.resize(near.size());
      for (std::size_t k = 0; k < near.size(); ++k) {
        sx[k] = pos[near[k]].x1;
        sy[k] = pos[near[k]].x2;
      }
      // Far field: sum_k a_k / (z - c)^(k+1) = conj(u) * 2 pi i, evaluated by
      // Horner in cell order with plain real arithmetic.
      const std::size_t m = target.count;
      tx.resize(m);
      ty.resize(m);
      fr.assign(m, 0.0);
      fi.assign(m, 0.0);
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = tree.order()[target.first + k];
        tx[k] = pos[i].x1;
        ty[k] = pos[i].x2;
      }
      for (std::size_t c : accepted) {
        const auto& cell = cells[c];
        const auto a = tree.moments(cell);
        const double c1 = cell.centroid.real(), c2 = cell.centroid.imag();
        for (std::size_t k = 0; k < m; ++k) {
          const double d1 = tx[k] - c1, d2 = ty[k] - c2;
          const double inv = 1.0 / (d1 * d1 + d2 * d2);
          const double w1 = d1 * inv, w2 = -d2 * inv;
          double s1 = a[p].real(), s2 = a[p].imag();
          for (std::size_t q = p; q-- > 0;) {
            const double t1 = s1 * w1 - s2 * w2;
            const double t2 = s1 * w2 + s2 * w1;
            s1 = a[q].real() + t1;
            s2 = a[q].imag() + t2;
          }
          fr[k] += s1 * w1 - s2 * w2;
          fi[k] += s1 * w2 + s2 * w1;
        }
      }
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = tree.order()[target.first + k];
        const Vec2 direct = detail::pair_sum(tx[k], ty[k], sx.data(), sy.data(), near.size(), eps2);
        // conj velocity = (-i / 2 pi) far  =>  u1 = Im(far), u2 = Re(far) before scaling.
        out[i] = {(direct.x1 + fi[k]) * scale, (direct.x2 + fr[k]) * scale};
      }
    }
  }
  return out;
}

}  // namespace vortex
