#pragma once

#include "spherevlad/common/geometry.hpp"
#include "spherevlad/harmonic/signals.hpp"
#include "spherevlad/harmonic/transforms.hpp"
#include "spherevlad/harmonic/wigner.hpp"

namespace spherevlad::harmonic {

/// (L_R f)(x) = f(R^-1 x) acts on spectra as f^l <- D^l(R) f^l.
template <typename T>
S2Coefficients<T> rotate_coefficients(const S2Coefficients<T>& coeffs, const RotationSpec& rotation) {
  const auto d = wigner_D_matrices(coeffs.bandwidth, rotation.euler());
  S2Coefficients<T> out(coeffs.channels, coeffs.bandwidth);
  for (int c = 0; c < coeffs.channels; ++c) {
    for (int l = 0; l < coeffs.bandwidth; ++l) {
      for (int m = -l; m <= l; ++m) {
        std::complex<double> acc{};
        for (int n = -l; n <= l; ++n) {
          const auto v = coeffs.at(c, l, n);
          acc += d[l](m + l, n + l) * std::complex<double>(v.real(), v.imag());
        }
        out.at(c, l, m) = Complex<T>(static_cast<T>(acc.real()), static_cast<T>(acc.imag()));
      }
    }
  }
  return out;
}

/// (L_Q g)(R) = g(Q^-1 R) acts on block spectra as G^l <- conj(D^l(Q)) G^l.
template <typename T>
SO3Coefficients<T> rotate_coefficients(const SO3Coefficients<T>& coeffs, const RotationSpec& rotation) {
  const auto d = wigner_D_matrices(coeffs.bandwidth, rotation.euler());
  SO3Coefficients<T> out(coeffs.channels, coeffs.bandwidth);
  for (int c = 0; c < coeffs.channels; ++c) {
    for (int l = 0; l < coeffs.bandwidth; ++l) {
      for (int k = -l; k <= l; ++k) {
        for (int n = -l; n <= l; ++n) {
          std::complex<double> acc{};
          for (int m = -l; m <= l; ++m) {
            const auto v = coeffs.at(c, l, m, n);
            acc += std::conj(d[l](k + l, m + l)) * std::complex<double>(v.real(), v.imag());
          }
          out.at(c, l, k, n) = Complex<T>(static_cast<T>(acc.real()), static_cast<T>(acc.imag()));
        }
      }
    }
  }
  return out;
}

/// Rotates a grid signal through its spectrum; exact for band-limited input.
template <typename T>
S2Signal<T> rotate_signal(const S2Signal<T>& signal, const RotationSpec& rotation) {
  return sht_inverse(rotate_coefficients(sht_forward(signal), rotation), signal.bandwidth);
}

template <typename T>
SO3FeatureMap<T> rotate_signal(const SO3FeatureMap<T>& signal, const RotationSpec& rotation) {
  return so3_ft_inverse(rotate_coefficients(so3_ft_forward(signal), rotation), signal.bandwidth);
}

}  // namespace spherevlad::harmonic
