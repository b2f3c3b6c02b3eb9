#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "spherevlad/common/geometry.hpp"

namespace spherevlad::harmonic {

/// Number of entries in degrees [0, l) of a block-diagonal SO(3) spectrum,
/// i.e. sum of (2l'+1)^2 for l' < l.
constexpr std::size_t so3_block_offset(int l) {
  return static_cast<std::size_t>(l) * (4 * static_cast<std::size_t>(l) * l - 1) / 3;
}

constexpr std::size_t so3_coefficient_count(int bandwidth) { return so3_block_offset(bandwidth); }

/// Index of (l, m) in a flat spherical-harmonic spectrum.
constexpr std::size_t s2_index(int l, int m) { return static_cast<std::size_t>(l * l + m + l); }

constexpr std::size_t s2_coefficient_count(int bandwidth) {
  return static_cast<std::size_t>(bandwidth) * bandwidth;
}

/// Wigner small-d d^l_{mn}(beta) from the closed-form sum, evaluated in long
/// double. Accurate for small l only (alternating sum); used to seed the
/// recurrence and as an independent reference in tests.
inline double wigner_d_closed_form(int l, int m, int n, double beta) {
  if (std::abs(m) > l || std::abs(n) > l) return 0.0;
  using ld = long double;
  const ld half = static_cast<ld>(beta) / 2;
  const ld c = std::cos(half), s = std::sin(half);
  auto lfact = [](int k) { return std::lgamma(static_cast<ld>(k) + 1); };
  const ld prefactor = (lfact(l + m) + lfact(l - m) + lfact(l + n) + lfact(l - n)) / 2;
  const int s_min = std::max(0, n - m);
  const int s_max = std::min(l + n, l - m);
  ld sum = 0;
  for (int k = s_min; k <= s_max; ++k) {
    const ld log_mag = prefactor - lfact(l + n - k) - lfact(k) - lfact(m - n + k) - lfact(l - m - k);
    const int cos_pow = 2 * l + n - m - 2 * k;
    const int sin_pow = m - n + 2 * k;
    ld term = std::exp(log_mag) * std::pow(c, static_cast<ld>(cos_pow)) * std::pow(s, static_cast<ld>(sin_pow));
    if ((m - n + k) % 2 != 0) term = -term;
    sum += term;
  }
  return static_cast<double>(sum);
}

/// d^l_{mn}(beta) for all l in [l0, lmax) with fixed (m, n), l0 = max(|m|,|n|),
/// by the three-term recurrence in l. out[l - l0] receives d^l_{mn}.
inline void wigner_d_column(int m, int n, int lmax, double beta, std::span<double> out) {
  const int l0 = std::max(std::abs(m), std::abs(n));
  if (l0 >= lmax) return;
  const double cb = std::cos(beta);
  out[0] = wigner_d_closed_form(l0, m, n, beta);
  if (l0 + 1 >= lmax) return;
  if (l0 == 0) {
    out[1] = cb;
  } else {
    const double l = l0;
    const double denom = l * std::sqrt(((l + 1) * (l + 1) - m * m) * ((l + 1) * (l + 1) - n * n));
    out[1] = (2 * l + 1) * (l * (l + 1) * cb - m * n) * out[0] / denom;
  }
  for (int li = l0 + 1; li + 1 < lmax; ++li) {
    const double l = li;
    const double a = (2 * l + 1) * (l * (l + 1) * cb - m * n);
    const double b = (l + 1) * std::sqrt((l * l - m * m) * (l * l - n * n));
    const double denom = l * std::sqrt(((l + 1) * (l + 1) - m * m) * ((l + 1) * (l + 1) - n * n));
    out[li + 1 - l0] = (a * out[li - l0] - b * out[li - 1 - l0]) / denom;
  }
}

/// Wigner small-d matrices d^l(beta) for l < lmax, flattened block by block
/// (row m, column n, both offset by l).
inline std::vector<double> wigner_d_blocks(int lmax, double beta) {
  std::vector<double> blocks(so3_block_offset(lmax), 0.0);
  std::vector<double> column(static_cast<std::size_t>(lmax));
  for (int m = -(lmax - 1); m < lmax; ++m) {
    for (int n = -(lmax - 1); n < lmax; ++n) {
      const int l0 = std::max(std::abs(m), std::abs(n));
      wigner_d_column(m, n, lmax, beta, column);
      for (int l = l0; l < lmax; ++l) {
        const int dim = 2 * l + 1;
        blocks[so3_block_offset(l) + (m + l) * dim + (n + l)] = column[l - l0];
      }
    }
  }
  return blocks;
}

/// Wigner D^l_{mn}(alpha, beta, gamma) = exp(-i m alpha) d^l_{mn}(beta) exp(-i n gamma)
/// for every l < lmax.
inline std::vector<Eigen::MatrixXcd> wigner_D_matrices(int lmax, const EulerZYZ& e) {
  const std::vector<double> d = wigner_d_blocks(lmax, e.beta);
  std::vector<Eigen::MatrixXcd> out;
  out.reserve(lmax);
  for (int l = 0; l < lmax; ++l) {
    const int dim = 2 * l + 1;
    Eigen::MatrixXcd block(dim, dim);
    for (int m = -l; m <= l; ++m) {
      for (int n = -l; n <= l; ++n) {
        const double phase = -(m * e.alpha + n * e.gamma);
        block(m + l, n + l) = std::polar(d[so3_block_offset(l) + (m + l) * dim + (n + l)], phase);
      }
    }
    out.push_back(std::move(block));
  }
  return out;
}

/// Equiangular sampling of the polar angle and the matching quadrature
/// weights. Nodes sit at cell centres beta_k = pi (2k+1) / 4B, k < 2B; the
/// weights integrate f(beta) sin(beta) over [0, pi] exactly for the
/// products of band-limited harmonics this package forms.
struct PolarQuadrature {
  int bandwidth = 0;
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit PolarQuadrature(int b) : bandwidth(b), nodes(2 * b), weights(2 * b) {
    const double pi = std::numbers::pi;
    for (int k = 0; k < 2 * b; ++k) {
      const double arg = pi * (2 * k + 1) / (4.0 * b);
      nodes[k] = arg;
      double sum = 0.0;
      for (int j = 0; j < b; ++j) sum += std::sin((2 * j + 1) * arg) / (2 * j + 1);
      weights[k] = 2.0 / b * std::sin(arg) * sum;
    }
  }
};

inline double azimuth_step(int bandwidth) { return 2.0 * std::numbers::pi / (2 * bandwidth); }

}  // namespace spherevlad::harmonic
