#pragma once

#include <numbers>
#include <string>

#include "spherevlad/harmonic/signals.hpp"
#include "spherevlad/harmonic/transforms.hpp"

namespace spherevlad::harmonic {

// Spectral forms of
//
//   [psi * f](R)     = sum_c  integral_{S^2}   psi_c(R^-1 x) f_c(x) dx
//   [psi * g](R)     = sum_c  integral_{SO(3)} psi_c(R^-1 Q) g_c(Q) dQ
//
// For real f and g these reduce to per-degree products
//
//   S^2:   H^l_{mn} = sum_c conj(f^l_m) psi^l_n
//   SO(3): H^l      = 8 pi^2 / (2l+1) sum_c G^l (Psi^l)^H
//
// and both outputs rotate with their inputs: correlating L_R f gives L_R of
// the correlation.

template <typename T>
SO3Coefficients<T> s2_correlate_spectrum(const S2Coefficients<T>& f, const S2FilterBank<T>& psi, int degrees) {
  if (f.channels != psi.in_channels)
    throw Error(ErrorCode::ChannelMismatch, "s2_correlate: signal has " + std::to_string(f.channels) +
                                                " channels, filters expect " + std::to_string(psi.in_channels));
  if (degrees > f.bandwidth || degrees > psi.bandwidth)
    throw Error(ErrorCode::BandwidthMismatch, "s2_correlate: output degrees exceed input bandwidth");
  SO3Coefficients<T> out(psi.out_channels, degrees);
  for (int o = 0; o < psi.out_channels; ++o) {
    auto dst = out.channel(o);
    for (int i = 0; i < psi.in_channels; ++i) {
      const auto fi = f.channel(i);
      const auto filt = psi.filter(o, i);
      for (int l = 0; l < degrees; ++l) {
        const int dim = 2 * l + 1;
        Complex<T>* block = &dst[so3_block_offset(l)];
        for (int m = -l; m <= l; ++m) {
          const Complex<T> fm = std::conj(fi[s2_index(l, m)]);
          for (int n = -l; n <= l; ++n) block[(m + l) * dim + (n + l)] += fm * filt[s2_index(l, n)];
        }
      }
    }
  }
  return out;
}

template <typename T>
SO3Coefficients<T> so3_correlate_spectrum(const SO3Coefficients<T>& g, const SO3FilterBank<T>& psi, int degrees) {
  if (g.channels != psi.in_channels)
    throw Error(ErrorCode::ChannelMismatch, "so3_correlate: signal has " + std::to_string(g.channels) +
                                                " channels, filters expect " + std::to_string(psi.in_channels));
  if (degrees > g.bandwidth || degrees > psi.bandwidth)
    throw Error(ErrorCode::BandwidthMismatch, "so3_correlate: output degrees exceed input bandwidth");
  SO3Coefficients<T> out(psi.out_channels, degrees);
  for (int o = 0; o < psi.out_channels; ++o) {
    auto dst = out.channel(o);
    for (int i = 0; i < psi.in_channels; ++i) {
      const auto gi = g.channel(i);
      const auto filt = psi.filter(o, i);
      for (int l = 0; l < degrees; ++l) {
        const int dim = 2 * l + 1;
        const T scale = static_cast<T>(8 * std::numbers::pi * std::numbers::pi / dim);
        const std::size_t off = so3_block_offset(l);
        for (int a = 0; a < dim; ++a) {
          for (int b = 0; b < dim; ++b) {
            Complex<T> acc{};
            for (int n = 0; n < dim; ++n) acc += gi[off + a * dim + n] * std::conj(filt[off + b * dim + n]);
            dst[off + a * dim + b] += scale * acc;
          }
        }
      }
    }
  }
  return out;
}

/// S^2 -> SO(3) correlation of grid signals. Signal and filters must share a
/// bandwidth; the output is sampled at out_bandwidth (default: the same),
/// keeping degrees below it.
template <typename T>
SO3FeatureMap<T> s2_correlate(const S2Signal<T>& f, const S2FilterBank<T>& psi, int out_bandwidth = -1) {
  if (f.bandwidth != psi.bandwidth)
    throw Error(ErrorCode::BandwidthMismatch, "s2_correlate: signal bandwidth " + std::to_string(f.bandwidth) +
                                                  " != filter bandwidth " + std::to_string(psi.bandwidth));
  if (out_bandwidth < 0) out_bandwidth = f.bandwidth;
  const auto spectrum = s2_correlate_spectrum(sht_forward(f, out_bandwidth), psi, out_bandwidth);
  return so3_ft_inverse(spectrum, out_bandwidth);
}

/// SO(3) -> SO(3) correlation; degrees >= out_bandwidth are dropped.
template <typename T>
SO3FeatureMap<T> so3_correlate(const SO3FeatureMap<T>& g, const SO3FilterBank<T>& psi, int out_bandwidth = -1) {
  if (g.bandwidth != psi.bandwidth)
    throw Error(ErrorCode::BandwidthMismatch, "so3_correlate: signal bandwidth " + std::to_string(g.bandwidth) +
                                                  " != filter bandwidth " + std::to_string(psi.bandwidth));
  if (out_bandwidth < 0) out_bandwidth = g.bandwidth;
  if (out_bandwidth > g.bandwidth)
    throw Error(ErrorCode::BandwidthMismatch, "so3_correlate: output bandwidth exceeds input");
  const auto spectrum = so3_correlate_spectrum(so3_ft_forward(g, out_bandwidth), psi, out_bandwidth);
  return so3_ft_inverse(spectrum, out_bandwidth);
}

}  // namespace spherevlad::harmonic
