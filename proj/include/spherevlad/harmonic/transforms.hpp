#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "spherevlad/harmonic/signals.hpp"
#include "spherevlad/harmonic/wigner.hpp"

namespace spherevlad::harmonic {

namespace detail {

/// cos/sin of m * 2 pi j / n for m in [0, degrees), j in [0, n).
template <typename T>
struct Twiddles {
  std::vector<T> cos, sin;
  int n = 0;

  Twiddles(int degrees, int samples) : cos(degrees * samples), sin(degrees * samples), n(samples) {
    for (int m = 0; m < degrees; ++m) {
      for (int j = 0; j < samples; ++j) {
        // Reduce the product exactly before the trig call so that the tables
        // are periodic to the last bit.
        const long long reduced = (static_cast<long long>(m) * j) % samples;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(reduced) / samples;
        cos[m * samples + j] = static_cast<T>(std::cos(angle));
        sin[m * samples + j] = static_cast<T>(std::sin(angle));
      }
    }
  }
};

}  // namespace detail

/// Spherical harmonic transform between the (2B x 2B) grid and degrees l < L.
///
///   forward:  f^l_m = sum_{j,k} w_k dA  f(a_j, b_k) conj(Y^m_l(b_k, a_j))
///   inverse:  f(a_j, b_k) = Re sum_{l,m} f^l_m Y^m_l(b_k, a_j)
///
/// with orthonormal, Condon-Shortley phased Y and L <= B; forward(inverse(c))
/// is the identity on spectra of real signals.
template <typename T>
class S2Plan {
 public:
  S2Plan(int grid_bandwidth, int degrees)
      : nb_(2 * grid_bandwidth), degrees_(degrees), twiddles_(degrees, 2 * grid_bandwidth) {
    if (degrees < 1 || degrees > grid_bandwidth)
      throw Error(ErrorCode::BandwidthMismatch, "S2 transform needs 1 <= degrees <= grid bandwidth");
    const PolarQuadrature quad(grid_bandwidth);
    const double dalpha = azimuth_step(grid_bandwidth);
    zonal_.assign(s2_coefficient_count(degrees) * nb_, T(0));
    zonal_weighted_.assign(zonal_.size(), T(0));
    std::vector<double> column(degrees);
    for (int k = 0; k < nb_; ++k) {
      for (int m = -(degrees - 1); m < degrees; ++m) {
        wigner_d_column(m, 0, degrees, quad.nodes[k], column);
        for (int l = std::abs(m); l < degrees; ++l) {
          const double y = std::sqrt((2 * l + 1) / (4 * std::numbers::pi)) * column[l - std::abs(m)];
          const std::size_t idx = s2_index(l, m) * nb_ + k;
          zonal_[idx] = static_cast<T>(y);
          zonal_weighted_[idx] = static_cast<T>(y * quad.weights[k] * dalpha);
        }
      }
    }
  }

  int grid_bandwidth() const { return nb_ / 2; }
  int degrees() const { return degrees_; }

  void forward(std::span<const T> grid, std::span<Complex<T>> coeffs) const {
    require_grid(grid.size(), static_cast<std::size_t>(nb_) * nb_, "sht_forward");
    const int deg = degrees_;
    // F[m][k] = sum_j f(j, k) exp(-i m a_j), m >= 0; negative m by conjugate symmetry.
    std::vector<Complex<T>> f_m(static_cast<std::size_t>(deg) * nb_);
    for (int m = 0; m < deg; ++m) {
      const T* c = &twiddles_.cos[m * nb_];
      const T* s = &twiddles_.sin[m * nb_];
      for (int k = 0; k < nb_; ++k) {
        T re = 0, im = 0;
        for (int j = 0; j < nb_; ++j) {
          const T v = grid[j * nb_ + k];
          re += v * c[j];
          im -= v * s[j];
        }
        f_m[m * nb_ + k] = {re, im};
      }
    }
    for (int l = 0; l < deg; ++l) {
      for (int m = -l; m <= l; ++m) {
        const T* z = &zonal_weighted_[s2_index(l, m) * nb_];
        const Complex<T>* row = &f_m[std::abs(m) * nb_];
        T re = 0, im = 0;
        for (int k = 0; k < nb_; ++k) {
          re += z[k] * row[k].real();
          im += z[k] * row[k].imag();
        }
        coeffs[s2_index(l, m)] = m >= 0 ? Complex<T>(re, im) : Complex<T>(re, -im);
      }
    }
  }

  void inverse(std::span<const Complex<T>> coeffs, std::span<T> grid) const {
    require_grid(grid.size(), static_cast<std::size_t>(nb_) * nb_, "sht_inverse");
    const int deg = degrees_;
    const int span_m = 2 * deg - 1;
    // H[m][k] = sum_l f^l_m Y^m_l(b_k, 0)
    std::vector<Complex<T>> h(static_cast<std::size_t>(span_m) * nb_);
    for (int l = 0; l < deg; ++l) {
      for (int m = -l; m <= l; ++m) {
        const Complex<T> c = coeffs[s2_index(l, m)];
        const T* z = &zonal_[s2_index(l, m) * nb_];
        Complex<T>* row = &h[(m + deg - 1) * nb_];
        for (int k = 0; k < nb_; ++k) row[k] += c * z[k];
      }
    }
    // f(j, k) = Re sum_m H[m][k] exp(i m a_j)
    for (int j = 0; j < nb_; ++j) {
      T* out = &grid[j * nb_];
      for (int k = 0; k < nb_; ++k) out[k] = 0;
      for (int m = -(deg - 1); m < deg; ++m) {
        const int am = std::abs(m);
        const T c = twiddles_.cos[am * nb_ + j];
        const T s = m >= 0 ? twiddles_.sin[am * nb_ + j] : -twiddles_.sin[am * nb_ + j];
        const Complex<T>* row = &h[(m + deg - 1) * nb_];
        for (int k = 0; k < nb_; ++k) out[k] += row[k].real() * c - row[k].imag() * s;
      }
    }
  }

 private:
  int nb_;
  int degrees_;
  detail::Twiddles<T> twiddles_;
  std::vector<T> zonal_;           // [s2_index(l,m)][k]: Y^m_l(b_k, 0)
  std::vector<T> zonal_weighted_;  // same, times w_k dA
};

/// SO(3) Fourier transform between the (2B)^3 Euler grid and degrees l < L.
///
///   g(R) = Re sum_{l,m,n} G^l_{mn} D^l_{mn}(R)
///   G^l_{mn} = (2l+1)/(8 pi^2) sum_{j,k,p} w_k dA dG g(a_j, b_k, c_p) conj(D^l_{mn}(a_j, b_k, c_p))
///
/// The two adjoints are the exact transposes used for back-propagation.
template <typename T>
class SO3Plan {
 public:
  SO3Plan(int grid_bandwidth, int degrees)
      : nb_(2 * grid_bandwidth), degrees_(degrees), span_(2 * degrees - 1), twiddles_(degrees, 2 * grid_bandwidth) {
    if (degrees < 1 || degrees > grid_bandwidth)
      throw Error(ErrorCode::BandwidthMismatch, "SO(3) transform needs 1 <= degrees <= grid bandwidth");
    const PolarQuadrature quad(grid_bandwidth);
    const double dalpha = azimuth_step(grid_bandwidth);
    const std::size_t count = so3_coefficient_count(degrees);
    d_.assign(count * nb_, T(0));
    dw_.assign(count * nb_, T(0));
    for (int k = 0; k < nb_; ++k) {
      const std::vector<double> blocks = wigner_d_blocks(degrees, quad.nodes[k]);
      for (std::size_t i = 0; i < count; ++i) {
        d_[i * nb_ + k] = static_cast<T>(blocks[i]);
        dw_[i * nb_ + k] = static_cast<T>(blocks[i] * quad.weights[k]);
      }
    }
    weights_.resize(nb_);
    for (int k = 0; k < nb_; ++k) weights_[k] = static_cast<T>(quad.weights[k]);
    norm_.resize(degrees);
    for (int l = 0; l < degrees; ++l)
      norm_[l] = static_cast<T>((2 * l + 1) / (8 * std::numbers::pi * std::numbers::pi) * dalpha * dalpha);
  }

  int grid_bandwidth() const { return nb_ / 2; }
  int degrees() const { return degrees_; }
  std::size_t grid_size() const { return static_cast<std::size_t>(nb_) * nb_ * nb_; }
  std::size_t coefficient_count() const { return so3_coefficient_count(degrees_); }

  void forward(std::span<const T> grid, std::span<Complex<T>> coeffs) const { analyze(grid, coeffs, true); }

  void inverse(std::span<const Complex<T>> coeffs, std::span<T> grid) const { synthesize(coeffs, grid, false); }

  /// Transpose of inverse(): maps a gradient on the grid to a gradient on
  /// the spectrum (gradient convention dL/dRe + i dL/dIm).
  void inverse_adjoint(std::span<const T> grid_grad, std::span<Complex<T>> coeff_grad) const {
    analyze(grid_grad, coeff_grad, false);
  }

  /// Transpose of forward(): maps a spectrum gradient back to the grid.
  void forward_adjoint(std::span<const Complex<T>> coeff_grad, std::span<T> grid_grad) const {
    synthesize(coeff_grad, grid_grad, true);
  }

 private:
  std::size_t g_index(int m, int n, int k) const {
    return (static_cast<std::size_t>(m + degrees_ - 1) * span_ + (n + degrees_ - 1)) * nb_ + k;
  }

  void analyze(std::span<const T> grid, std::span<Complex<T>> coeffs, bool quadrature) const {
    require_grid(grid.size(), grid_size(), "so3_ft_forward");
    const int deg = degrees_;
    const std::size_t plane = static_cast<std::size_t>(span_) * nb_;
    // X[j][n][k] = sum_p g(j,k,p) exp(i n c_p)
    std::vector<Complex<T>> x(static_cast<std::size_t>(nb_) * plane);
    for (int j = 0; j < nb_; ++j) {
      for (int k = 0; k < nb_; ++k) {
        const T* row = &grid[(static_cast<std::size_t>(j) * nb_ + k) * nb_];
        for (int n = 0; n < deg; ++n) {
          const T* c = &twiddles_.cos[n * nb_];
          const T* s = &twiddles_.sin[n * nb_];
          T re = 0, im = 0;
          for (int p = 0; p < nb_; ++p) {
            re += row[p] * c[p];
            im += row[p] * s[p];
          }
          x[j * plane + (n + deg - 1) * nb_ + k] = {re, im};
          x[j * plane + (-n + deg - 1) * nb_ + k] = {re, -im};
        }
      }
    }
    // G[m][n][k] = sum_j X[j][n][k] exp(i m a_j), m >= 0; real input gives
    // G[-m][-n] = conj(G[m][n]).
    std::vector<Complex<T>> g(static_cast<std::size_t>(span_) * plane);
    for (int m = 0; m < deg; ++m) {
      Complex<T>* dst = &g[g_index(m, -(deg - 1), 0)];
      for (int j = 0; j < nb_; ++j) {
        const T c = twiddles_.cos[m * nb_ + j];
        const T s = twiddles_.sin[m * nb_ + j];
        const Complex<T>* src = &x[j * plane];
        for (std::size_t i = 0; i < plane; ++i) {
          const T xr = src[i].real(), xi = src[i].imag();
          dst[i] += Complex<T>(xr * c - xi * s, xr * s + xi * c);
        }
      }
    }
    for (int m = 1; m < deg; ++m)
      for (int n = -(deg - 1); n < deg; ++n)
        for (int k = 0; k < nb_; ++k) g[g_index(-m, -n, k)] = std::conj(g[g_index(m, n, k)]);

    const std::vector<T>& table = quadrature ? dw_ : d_;
    for (int l = 0; l < deg; ++l) {
      const T scale = quadrature ? norm_[l] : T(1);
      const int dim = 2 * l + 1;
      for (int m = -l; m <= l; ++m) {
        for (int n = -l; n <= l; ++n) {
          const std::size_t idx = so3_block_offset(l) + (m + l) * dim + (n + l);
          const T* dk = &table[idx * nb_];
          const Complex<T>* gk = &g[g_index(m, n, 0)];
          T re = 0, im = 0;
          for (int k = 0; k < nb_; ++k) {
            re += dk[k] * gk[k].real();
            im += dk[k] * gk[k].imag();
          }
          coeffs[idx] = {scale * re, scale * im};
        }
      }
    }
  }

  void synthesize(std::span<const Complex<T>> coeffs, std::span<T> grid, bool quadrature) const {
    require_grid(grid.size(), grid_size(), "so3_ft_inverse");
    const int deg = degrees_;
    const std::size_t plane = static_cast<std::size_t>(span_) * nb_;
    // H[m][n][k] = sum_l s_l G^l_{mn} d^l_{mn}(b_k)
    std::vector<Complex<T>> h(static_cast<std::size_t>(span_) * plane);
    for (int l = 0; l < deg; ++l) {
      const T scale = quadrature ? norm_[l] : T(1);
      const int dim = 2 * l + 1;
      for (int m = -l; m <= l; ++m) {
        for (int n = -l; n <= l; ++n) {
          const std::size_t idx = so3_block_offset(l) + (m + l) * dim + (n + l);
          const Complex<T> c = coeffs[idx] * scale;
          const T* dk = &d_[idx * nb_];
          Complex<T>* hk = &h[g_index(m, n, 0)];
          for (int k = 0; k < nb_; ++k) hk[k] += c * dk[k];
        }
      }
    }
    // Y[j][n][k] = sum_m H[m][n][k] exp(-i m a_j)
    std::vector<Complex<T>> y(static_cast<std::size_t>(nb_) * plane);
    for (int j = 0; j < nb_; ++j) {
      Complex<T>* dst = &y[j * plane];
      for (int m = -(deg - 1); m < deg; ++m) {
        const int am = std::abs(m);
        const T c = twiddles_.cos[am * nb_ + j];
        const T s = m >= 0 ? -twiddles_.sin[am * nb_ + j] : twiddles_.sin[am * nb_ + j];
        const Complex<T>* src = &h[g_index(m, -(deg - 1), 0)];
        for (std::size_t i = 0; i < plane; ++i) {
          const T hr = src[i].real(), hi = src[i].imag();
          dst[i] += Complex<T>(hr * c - hi * s, hr * s + hi * c);
        }
      }
    }
    // g(j,k,p) = Re sum_n Y[j][n][k] exp(-i n c_p)
    std::vector<T> yr(span_), yi(span_);
    for (int j = 0; j < nb_; ++j) {
      for (int k = 0; k < nb_; ++k) {
        for (int n = 0; n < span_; ++n) {
          const Complex<T> v = y[j * plane + n * nb_ + k];
          yr[n] = v.real();
          yi[n] = v.imag();
        }
        T* out = &grid[(static_cast<std::size_t>(j) * nb_ + k) * nb_];
        const T wk = quadrature ? weights_[k] : T(1);
        for (int p = 0; p < nb_; ++p) {
          T acc = yr[deg - 1];
          for (int n = 1; n < deg; ++n) {
            const T c = twiddles_.cos[n * nb_ + p];
            const T s = twiddles_.sin[n * nb_ + p];
            // exp(-i n c_p) for +n and exp(+i n c_p) for -n
            acc += (yr[deg - 1 + n] + yr[deg - 1 - n]) * c + (yi[deg - 1 + n] - yi[deg - 1 - n]) * s;
          }
          out[p] = wk * acc;
        }
      }
    }
  }

  int nb_;
  int degrees_;
  int span_;
  detail::Twiddles<T> twiddles_;
  std::vector<T> d_;   // [block index][k]
  std::vector<T> dw_;  // d times w_k
  std::vector<T> weights_;
  std::vector<T> norm_;  // (2l+1)/(8 pi^2) dA dG
};

/// Plans are immutable once built and shared process-wide.
template <typename Plan>
const Plan& cached_plan(int grid_bandwidth, int degrees) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::unique_ptr<Plan>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{grid_bandwidth, degrees}];
  if (!slot) slot = std::make_unique<Plan>(grid_bandwidth, degrees);
  return *slot;
}

template <typename T>
const S2Plan<T>& s2_plan(int grid_bandwidth, int degrees) {
  return cached_plan<S2Plan<T>>(grid_bandwidth, degrees);
}

template <typename T>
const SO3Plan<T>& so3_plan(int grid_bandwidth, int degrees) {
  return cached_plan<SO3Plan<T>>(grid_bandwidth, degrees);
}

// ---------------------------------------------------------------------------
// Signal-level transforms

/// Forward SHT of every channel; degrees defaults to the grid bandwidth.
template <typename T>
S2Coefficients<T> sht_forward(const S2Signal<T>& signal, int degrees = -1) {
  if (degrees < 0) degrees = signal.bandwidth;
  require_grid(signal.values.size(), signal.channels * s2_grid_size(signal.bandwidth), "sht_forward");
  const auto& plan = s2_plan<T>(signal.bandwidth, degrees);
  S2Coefficients<T> out(signal.channels, degrees);
  for (int c = 0; c < signal.channels; ++c) plan.forward(signal.channel(c), out.channel(c));
  return out;
}

template <typename T>
S2Signal<T> sht_inverse(const S2Coefficients<T>& coeffs, int grid_bandwidth = -1) {
  if (grid_bandwidth < 0) grid_bandwidth = coeffs.bandwidth;
  const auto& plan = s2_plan<T>(grid_bandwidth, coeffs.bandwidth);
  S2Signal<T> out(coeffs.channels, grid_bandwidth);
  for (int c = 0; c < coeffs.channels; ++c) plan.inverse(coeffs.channel(c), out.channel(c));
  return out;
}

template <typename T>
SO3Coefficients<T> so3_ft_forward(const SO3FeatureMap<T>& signal, int degrees = -1) {
  if (degrees < 0) degrees = signal.bandwidth;
  require_grid(signal.values.size(), signal.channels * so3_grid_size(signal.bandwidth), "so3_ft_forward");
  const auto& plan = so3_plan<T>(signal.bandwidth, degrees);
  SO3Coefficients<T> out(signal.channels, degrees);
  for (int c = 0; c < signal.channels; ++c) plan.forward(signal.channel(c), out.channel(c));
  return out;
}

template <typename T>
SO3FeatureMap<T> so3_ft_inverse(const SO3Coefficients<T>& coeffs, int grid_bandwidth = -1) {
  if (grid_bandwidth < 0) grid_bandwidth = coeffs.bandwidth;
  const auto& plan = so3_plan<T>(grid_bandwidth, coeffs.bandwidth);
  SO3FeatureMap<T> out(coeffs.channels, grid_bandwidth);
  for (int c = 0; c < coeffs.channels; ++c) plan.inverse(coeffs.channel(c), out.channel(c));
  return out;
}

/// Largest violation of the real-signal symmetry f^l_{-m} = (-1)^m conj(f^l_m).
template <typename T>
double s2_symmetry_defect(const S2Coefficients<T>& coeffs) {
  double worst = 0.0;
  for (int c = 0; c < coeffs.channels; ++c)
    for (int l = 0; l < coeffs.bandwidth; ++l)
      for (int m = 0; m <= l; ++m) {
        const auto expected = (m % 2 ? T(-1) : T(1)) * std::conj(coeffs.at(c, l, m));
        worst = std::max(worst, static_cast<double>(std::abs(coeffs.at(c, l, -m) - expected)));
      }
  return worst;
}

/// Largest violation of G^l_{-m,-n} = (-1)^{m-n} conj(G^l_{mn}).
template <typename T>
double so3_symmetry_defect(const SO3Coefficients<T>& coeffs) {
  double worst = 0.0;
  for (int c = 0; c < coeffs.channels; ++c)
    for (int l = 0; l < coeffs.bandwidth; ++l)
      for (int m = -l; m <= l; ++m)
        for (int n = -l; n <= l; ++n) {
          const auto expected = ((m - n) % 2 ? T(-1) : T(1)) * std::conj(coeffs.at(c, l, m, n));
          worst = std::max(worst, static_cast<double>(std::abs(coeffs.at(c, l, -m, -n) - expected)));
        }
  return worst;
}

}  // namespace spherevlad::harmonic
