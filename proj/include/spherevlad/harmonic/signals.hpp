#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/harmonic/wigner.hpp"

namespace spherevlad::harmonic {

template <typename T>
using Complex = std::complex<T>;

inline std::size_t s2_grid_size(int bandwidth) {
  return static_cast<std::size_t>(2 * bandwidth) * (2 * bandwidth);
}

inline std::size_t so3_grid_size(int bandwidth) {
  const auto n = static_cast<std::size_t>(2 * bandwidth);
  return n * n * n;
}

/// Real multichannel signal sampled on the (2B x 2B) equiangular sphere grid.
/// Layout: [channel][alpha][beta].
template <typename T>
struct S2Signal {
  int channels = 0;
  int bandwidth = 0;
  std::vector<T> values;

  S2Signal() = default;
  S2Signal(int c, int b) : channels(c), bandwidth(b), values(c * s2_grid_size(b), T(0)) {}

  std::span<T> channel(int c) { return {values.data() + c * s2_grid_size(bandwidth), s2_grid_size(bandwidth)}; }
  std::span<const T> channel(int c) const {
    return {values.data() + c * s2_grid_size(bandwidth), s2_grid_size(bandwidth)};
  }
  T& at(int c, int a, int b) { return values[c * s2_grid_size(bandwidth) + a * 2 * bandwidth + b]; }
  T at(int c, int a, int b) const { return values[c * s2_grid_size(bandwidth) + a * 2 * bandwidth + b]; }
};

/// Spherical-harmonic spectrum, degrees l < bandwidth. Layout [channel][l*l + m + l].
template <typename T>
struct S2Coefficients {
  int channels = 0;
  int bandwidth = 0;
  std::vector<Complex<T>> values;

  S2Coefficients() = default;
  S2Coefficients(int c, int b) : channels(c), bandwidth(b), values(c * s2_coefficient_count(b)) {}

  std::span<Complex<T>> channel(int c) {
    return {values.data() + c * s2_coefficient_count(bandwidth), s2_coefficient_count(bandwidth)};
  }
  std::span<const Complex<T>> channel(int c) const {
    return {values.data() + c * s2_coefficient_count(bandwidth), s2_coefficient_count(bandwidth)};
  }
  Complex<T>& at(int c, int l, int m) { return values[c * s2_coefficient_count(bandwidth) + s2_index(l, m)]; }
  const Complex<T>& at(int c, int l, int m) const {
    return values[c * s2_coefficient_count(bandwidth) + s2_index(l, m)];
  }
};

/// Real multichannel signal on the (2B)^3 ZYZ Euler grid of SO(3).
/// Layout [channel][alpha][beta][gamma].
template <typename T>
struct SO3FeatureMap {
  int channels = 0;
  int bandwidth = 0;
  std::vector<T> values;

  SO3FeatureMap() = default;
  SO3FeatureMap(int c, int b) : channels(c), bandwidth(b), values(c * so3_grid_size(b), T(0)) {}

  std::size_t grid_size() const { return so3_grid_size(bandwidth); }
  std::span<T> channel(int c) { return {values.data() + c * grid_size(), grid_size()}; }
  std::span<const T> channel(int c) const { return {values.data() + c * grid_size(), grid_size()}; }
  T& at(int c, int a, int b, int g) {
    const std::size_t n = 2 * bandwidth;
    return values[c * grid_size() + (a * n + b) * n + g];
  }
  T at(int c, int a, int b, int g) const {
    const std::size_t n = 2 * bandwidth;
    return values[c * grid_size() + (a * n + b) * n + g];
  }
};

/// SO(3) Fourier spectrum: per channel, block matrices of size (2l+1)^2 for
/// l < bandwidth, stored row-major (row m, column n) back to back.
template <typename T>
struct SO3Coefficients {
  int channels = 0;
  int bandwidth = 0;
  std::vector<Complex<T>> values;

  SO3Coefficients() = default;
  SO3Coefficients(int c, int b) : channels(c), bandwidth(b), values(c * so3_coefficient_count(b)) {}

  std::span<Complex<T>> channel(int c) {
    return {values.data() + c * so3_coefficient_count(bandwidth), so3_coefficient_count(bandwidth)};
  }
  std::span<const Complex<T>> channel(int c) const {
    return {values.data() + c * so3_coefficient_count(bandwidth), so3_coefficient_count(bandwidth)};
  }
  Complex<T>& at(int c, int l, int m, int n) {
    return values[c * so3_coefficient_count(bandwidth) + so3_block_offset(l) + (m + l) * (2 * l + 1) + (n + l)];
  }
  const Complex<T>& at(int c, int l, int m, int n) const {
    return values[c * so3_coefficient_count(bandwidth) + so3_block_offset(l) + (m + l) * (2 * l + 1) + (n + l)];
  }
};

/// Harmonic S^2 filter bank, one spectrum per (out, in) channel pair.
template <typename T>
struct S2FilterBank {
  int out_channels = 0;
  int in_channels = 0;
  int bandwidth = 0;
  std::vector<Complex<T>> values;  // [out][in][l*l+m+l]

  S2FilterBank() = default;
  S2FilterBank(int co, int ci, int b)
      : out_channels(co), in_channels(ci), bandwidth(b), values(co * ci * s2_coefficient_count(b)) {}

  std::span<Complex<T>> filter(int o, int i) {
    return {values.data() + (o * in_channels + i) * s2_coefficient_count(bandwidth), s2_coefficient_count(bandwidth)};
  }
  std::span<const Complex<T>> filter(int o, int i) const {
    return {values.data() + (o * in_channels + i) * s2_coefficient_count(bandwidth), s2_coefficient_count(bandwidth)};
  }
};

/// Harmonic SO(3) filter bank, one block spectrum per (out, in) channel pair.
template <typename T>
struct SO3FilterBank {
  int out_channels = 0;
  int in_channels = 0;
  int bandwidth = 0;
  std::vector<Complex<T>> values;  // [out][in][blocks]

  SO3FilterBank() = default;
  SO3FilterBank(int co, int ci, int b)
      : out_channels(co), in_channels(ci), bandwidth(b), values(co * ci * so3_coefficient_count(b)) {}

  std::span<Complex<T>> filter(int o, int i) {
    return {values.data() + (o * in_channels + i) * so3_coefficient_count(bandwidth),
            so3_coefficient_count(bandwidth)};
  }
  std::span<const Complex<T>> filter(int o, int i) const {
    return {values.data() + (o * in_channels + i) * so3_coefficient_count(bandwidth),
            so3_coefficient_count(bandwidth)};
  }
};

inline void require_grid(std::size_t actual, std::size_t expected, const char* what) {
  if (actual != expected)
    throw Error(ErrorCode::BadGridShape, std::string(what) + ": expected " + std::to_string(expected) +
                                             " samples, got " + std::to_string(actual));
}

}  // namespace spherevlad::harmonic
