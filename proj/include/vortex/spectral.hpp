#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "vortex/grid.hpp"

namespace vortex {

namespace detail {

// FFTW planning is not thread safe; execution on distinct arrays is.
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(fftw_plan_mutex());
    fftw_destroy_plan(p);
  }
};

template <class T>
struct FftwFree {
  void operator()(T* p) const { fftw_free(p); }
};

}  // namespace detail

/// Real-to-complex 2D transforms on an n x n GridGeometry plus the wavenumber
/// tables needed for spectral derivatives. Not shareable across threads; give
/// each thread its own instance.
class SpectralPlan {
 public:
  explicit SpectralPlan(const GridGeometry& g) : geometry_(g), n_(g.n), nc_(g.n / 2 + 1) {
    g.validate();
    real_.reset(fftw_alloc_real(n_ * n_));
    spec_.reset(reinterpret_cast<std::complex<double>*>(fftw_alloc_complex(n_ * nc_)));
    auto* cplx = reinterpret_cast<fftw_complex*>(spec_.get());
    {
      std::lock_guard lock(detail::fftw_plan_mutex());
      forward_.reset(fftw_plan_dft_r2c_2d(static_cast<int>(n_), static_cast<int>(n_), real_.get(), cplx,
                                          FFTW_ESTIMATE));
      inverse_.reset(fftw_plan_dft_c2r_2d(static_cast<int>(n_), static_cast<int>(n_), cplx, real_.get(),
                                          FFTW_ESTIMATE));
    }
    if (!forward_ || !inverse_) throw std::runtime_error("FFTW plan creation failed");
    const double dk = std::numbers::pi / g.half_width;
    k1_.resize(nc_);
    k2_.resize(n_);
    for (std::size_t i = 0; i < nc_; ++i) k1_[i] = dk * static_cast<double>(i);
    for (std::size_t j = 0; j < n_; ++j)
      k2_[j] = dk * (j <= n_ / 2 ? static_cast<double>(j) : static_cast<double>(j) - static_cast<double>(n_));
  }

  const GridGeometry& geometry() const { return geometry_; }
  std::size_t n() const { return n_; }
  std::size_t half_columns() const { return nc_; }
  std::size_t spectral_size() const { return n_ * nc_; }
  double k1(std::size_t i) const { return k1_[i]; }
  double k2(std::size_t j) const { return k2_[j]; }
  bool nyquist(std::size_t i, std::size_t j) const { return i == n_ / 2 || j == n_ / 2; }
  /// Square 2/3-rule truncation.
  bool retained(std::size_t i, std::size_t j) const {
    const std::size_t jj = j <= n_ / 2 ? j : n_ - j;
    return 3 * i <= n_ && 3 * jj <= n_;
  }

  /// Forward transform (unnormalized).
  void forward(std::span<const double> in, std::vector<std::complex<double>>& out) {
    std::copy(in.begin(), in.end(), real_.get());
    fftw_execute(forward_.get());
    out.assign(spec_.get(), spec_.get() + spectral_size());
  }

  /// Inverse transform including the 1/n^2 normalization.
  void inverse(std::span<const std::complex<double>> in, std::vector<double>& out) {
    std::copy(in.begin(), in.end(), spec_.get());
    fftw_execute(inverse_.get());
    const double norm = 1.0 / static_cast<double>(n_ * n_);
    out.resize(n_ * n_);
    for (std::size_t k = 0; k < n_ * n_; ++k) out[k] = real_.get()[k] * norm;
  }

  /// d^a1/dx1^a1 d^a2/dx2^a2 of a periodic field. Odd total order drops the
  /// Nyquist modes.
  std::vector<double> derivative(std::span<const double> values, int a1, int a2) {
    std::vector<std::complex<double>> hat;
    forward(values, hat);
    const bool odd = (a1 + a2) % 2 == 1;
    for (std::size_t j = 0; j < n_; ++j)
      for (std::size_t i = 0; i < nc_; ++i) {
        auto& c = hat[j * nc_ + i];
        if (odd && nyquist(i, j)) {
          c = 0.0;
          continue;
        }
        c *= ipow(std::complex<double>(0.0, k1_[i]), a1) * ipow(std::complex<double>(0.0, k2_[j]), a2);
      }
    std::vector<double> out;
    inverse(hat, out);
    return out;
  }

  /// Exact periodic heat semigroup exp(t sigma Delta).
  std::vector<double> heat(std::span<const double> values, double sigma_t) {
    std::vector<std::complex<double>> hat;
    forward(values, hat);
    for (std::size_t j = 0; j < n_; ++j)
      for (std::size_t i = 0; i < nc_; ++i) hat[j * nc_ + i] *= std::exp(-sigma_t * (k1_[i] * k1_[i] + k2_[j] * k2_[j]));
    std::vector<double> out;
    inverse(hat, out);
    return out;
  }

 private:
  static std::complex<double> ipow(std::complex<double> z, int p) {
    std::complex<double> r{1.0, 0.0};
    for (int k = 0; k < p; ++k) r *= z;
    return r;
  }

  GridGeometry geometry_;
  std::size_t n_, nc_;
  std::unique_ptr<double, detail::FftwFree<double>> real_;
  std::unique_ptr<std::complex<double>, detail::FftwFree<std::complex<double>>> spec_;
  std::unique_ptr<fftw_plan_s, detail::FftwDeleter> forward_, inverse_;
  std::vector<double> k1_, k2_;
};

/// Eisenstein sum G_n = sum over nonzero Gaussian integers w of w^-n, for n a
/// positive multiple of 4, via the q-expansion at tau = i.
inline double square_lattice_eisenstein(int n) {
  if (n < 4 || n % 4 != 0) throw std::invalid_argument("square lattice sums vanish unless n is a multiple of 4");
  const double q = std::exp(-2.0 * std::numbers::pi);
  // 2 (2 pi)^n / (n-1)! computed in logs.
  const double pref = 2.0 * std::exp(n * std::log(2.0 * std::numbers::pi) - std::lgamma(static_cast<double>(n)));
  double series = 0.0;
  for (int m = 1; m <= 60; ++m) {
    double sigma = 0.0;
    for (int d = 1; d <= m; ++d)
      if (m % d == 0) sigma += std::pow(static_cast<double>(d), n - 1);
    series += sigma * std::pow(q, m);
  }
  return 2.0 * std::riemann_zeta(static_cast<double>(n)) + pref * series;
}

}  // namespace vortex
