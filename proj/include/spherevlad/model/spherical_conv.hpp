#pragma once

// Spherical convolution layers with trainable harmonic filters.
//
// Filters are stored as real parameters laid out like their spectra:
//   S^2 filter, B^2 reals:     slot (l, 0) = Re psi_l0,
//                              slot (l, m>0) = Re psi_lm, slot (l, -m) = Im psi_lm.
//   SO(3) block, (2l+1)^2:     slot (p, n) canonical (p > 0, or p = 0 and n > 0)
//                              holds Re Psi_pn, slot (-p, -n) holds Im Psi_pn,
//                              slot (0, 0) is real.
// The mirrored entries follow from reality, psi_{l,-m} = (-1)^m conj(psi_lm)
// and Psi_{-p,-n} = (-1)^(p-n) conj(Psi_pn), so every output is a real signal.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "spherevlad/common/random.hpp"
#include "spherevlad/harmonic/correlate.hpp"
#include "spherevlad/harmonic/transforms.hpp"

namespace spherevlad::model {

using harmonic::Complex;

namespace detail {

inline double parity(int k) { return (k % 2) ? -1.0 : 1.0; }

}  // namespace detail

template <typename T>
void s2_filter_from_params(std::span<const T> p, std::span<Complex<T>> psi, int bandwidth) {
  for (int l = 0; l < bandwidth; ++l) {
    psi[harmonic::s2_index(l, 0)] = {p[harmonic::s2_index(l, 0)], T(0)};
    for (int m = 1; m <= l; ++m) {
      const Complex<T> v{p[harmonic::s2_index(l, m)], p[harmonic::s2_index(l, -m)]};
      psi[harmonic::s2_index(l, m)] = v;
      psi[harmonic::s2_index(l, -m)] = static_cast<T>(detail::parity(m)) * std::conj(v);
    }
  }
}

/// Chain rule from spectrum gradients (dL/dRe + i dL/dIm) to the real slots.
template <typename T>
void s2_filter_grad_to_params(std::span<const Complex<T>> g, std::span<T> gp, int bandwidth) {
  for (int l = 0; l < bandwidth; ++l) {
    gp[harmonic::s2_index(l, 0)] += g[harmonic::s2_index(l, 0)].real();
    for (int m = 1; m <= l; ++m) {
      const T s = static_cast<T>(detail::parity(m));
      const Complex<T> gm = g[harmonic::s2_index(l, m)], gn = g[harmonic::s2_index(l, -m)];
      gp[harmonic::s2_index(l, m)] += gm.real() + s * gn.real();
      gp[harmonic::s2_index(l, -m)] += gm.imag() - s * gn.imag();
    }
  }
}

template <typename T>
void so3_filter_from_params(std::span<const T> p, std::span<Complex<T>> psi, int bandwidth) {
  for (int l = 0; l < bandwidth; ++l) {
    const int dim = 2 * l + 1;
    const std::size_t off = harmonic::so3_block_offset(l);
    auto idx = [&](int a, int b) { return off + (a + l) * dim + (b + l); };
    for (int a = -l; a <= l; ++a) {
      for (int b = -l; b <= l; ++b) {
        if (a == 0 && b == 0) {
          psi[idx(0, 0)] = {p[idx(0, 0)], T(0)};
        } else if (a > 0 || (a == 0 && b > 0)) {
          const Complex<T> v{p[idx(a, b)], p[idx(-a, -b)]};
          psi[idx(a, b)] = v;
          psi[idx(-a, -b)] = static_cast<T>(detail::parity(a - b)) * std::conj(v);
        }
      }
    }
  }
}

template <typename T>
void so3_filter_grad_to_params(std::span<const Complex<T>> g, std::span<T> gp, int bandwidth) {
  for (int l = 0; l < bandwidth; ++l) {
    const int dim = 2 * l + 1;
    const std::size_t off = harmonic::so3_block_offset(l);
    auto idx = [&](int a, int b) { return off + (a + l) * dim + (b + l); };
    for (int a = -l; a <= l; ++a) {
      for (int b = -l; b <= l; ++b) {
        if (a == 0 && b == 0) {
          gp[idx(0, 0)] += g[idx(0, 0)].real();
        } else if (a > 0 || (a == 0 && b > 0)) {
          const T s = static_cast<T>(detail::parity(a - b));
          const Complex<T> gv = g[idx(a, b)], gm = g[idx(-a, -b)];
          gp[idx(a, b)] += gv.real() + s * gm.real();
          gp[idx(-a, -b)] += gv.imag() - s * gm.imag();
        }
      }
    }
  }
}

/// Gaussian init scaled so a unit-variance input gives roughly unit-variance
/// pre-activations; the factor 2 compensates the following ReLU.
template <typename T>
void init_s2_filters(std::span<T> p, int in_channels, Rng& rng) {
  const double sd = std::sqrt(2.0 / (4 * std::numbers::pi * in_channels));
  for (auto& v : p) v = static_cast<T>(rng.normal(0.0, sd));
}

template <typename T>
void init_so3_filters(std::span<T> p, int in_channels, int bandwidth, std::size_t filters, Rng& rng) {
  const double vol = 8 * std::numbers::pi * std::numbers::pi;
  const std::size_t per_filter = harmonic::so3_coefficient_count(bandwidth);
  for (std::size_t f = 0; f < filters; ++f) {
    for (int l = 0; l < bandwidth; ++l) {
      const double sd = std::sqrt(2.0 * (2 * l + 1) / (vol * vol * in_channels));
      const std::size_t off = f * per_filter + harmonic::so3_block_offset(l);
      for (int i = 0; i < (2 * l + 1) * (2 * l + 1); ++i) p[off + i] = static_cast<T>(rng.normal(0.0, sd));
    }
  }
}

/// S^2 -> SO(3) layer. Keeps the input spectrum for the filter gradient. The
/// output carries degrees below out_bandwidth and is sampled on the grid of
/// grid_bandwidth (defaults to out_bandwidth; larger values oversample).
template <typename T>
struct S2ConvCache {
  harmonic::S2Coefficients<T> input_spectrum;
};

template <typename T>
harmonic::SO3FeatureMap<T> s2_conv_forward(const harmonic::S2Signal<T>& input, std::span<const T> params,
                                           int out_channels, int out_bandwidth, S2ConvCache<T>* cache,
                                           int grid_bandwidth = -1) {
  harmonic::S2FilterBank<T> bank(out_channels, input.channels, out_bandwidth);
  const std::size_t per = harmonic::s2_coefficient_count(out_bandwidth);
  if (params.size() != per * out_channels * input.channels)
    throw Error(ErrorCode::ShapeMismatch, "S2 conv parameter count does not match its configuration");
  for (int o = 0; o < out_channels; ++o)
    for (int i = 0; i < input.channels; ++i)
      s2_filter_from_params(params.subspan((o * input.channels + i) * per, per), bank.filter(o, i), out_bandwidth);
  auto spectrum = harmonic::sht_forward(input, out_bandwidth);
  const auto h = harmonic::s2_correlate_spectrum(spectrum, bank, out_bandwidth);
  if (cache) cache->input_spectrum = std::move(spectrum);
  return harmonic::so3_ft_inverse(h, grid_bandwidth < 0 ? out_bandwidth : grid_bandwidth);
}

/// Accumulates the filter-parameter gradient of an S^2 layer.
template <typename T>
void s2_conv_backward(const harmonic::SO3FeatureMap<T>& grad_out, const S2ConvCache<T>& cache, std::span<T> grad_params) {
  const int b = cache.input_spectrum.bandwidth;
  const auto& plan = harmonic::so3_plan<T>(grad_out.bandwidth, b);
  const int c_in = cache.input_spectrum.channels;
  const std::size_t per = harmonic::s2_coefficient_count(b);
  std::vector<Complex<T>> gh(plan.coefficient_count()), gpsi(per);
  for (int o = 0; o < grad_out.channels; ++o) {
    plan.inverse_adjoint(grad_out.channel(o), gh);
    for (int i = 0; i < c_in; ++i) {
      const auto f = cache.input_spectrum.channel(i);
      std::fill(gpsi.begin(), gpsi.end(), Complex<T>{});
      // H_mn = conj(f_m) psi_n  =>  dpsi_n = sum_m f_m dH_mn
      for (int l = 0; l < b; ++l) {
        const int dim = 2 * l + 1;
        const Complex<T>* block = &gh[harmonic::so3_block_offset(l)];
        for (int m = -l; m <= l; ++m) {
          const Complex<T> fm = f[harmonic::s2_index(l, m)];
          for (int n = -l; n <= l; ++n) gpsi[harmonic::s2_index(l, n)] += fm * block[(m + l) * dim + (n + l)];
        }
      }
      s2_filter_grad_to_params<T>(gpsi, grad_params.subspan((o * c_in + i) * per, per), b);
    }
  }
}

template <typename T>
struct SO3ConvCache {
  harmonic::SO3Coefficients<T> input_spectrum;
  harmonic::SO3FilterBank<T> bank;
  int input_bandwidth = 0;
};

template <typename T>
harmonic::SO3FeatureMap<T> so3_conv_forward(const harmonic::SO3FeatureMap<T>& input, std::span<const T> params,
                                            int out_channels, int out_bandwidth, SO3ConvCache<T>* cache,
                                            int grid_bandwidth = -1) {
  harmonic::SO3FilterBank<T> bank(out_channels, input.channels, out_bandwidth);
  const std::size_t per = harmonic::so3_coefficient_count(out_bandwidth);
  if (params.size() != per * out_channels * input.channels)
    throw Error(ErrorCode::ShapeMismatch, "SO(3) conv parameter count does not match its configuration");
  for (int o = 0; o < out_channels; ++o)
    for (int i = 0; i < input.channels; ++i)
      so3_filter_from_params(params.subspan((o * input.channels + i) * per, per), bank.filter(o, i), out_bandwidth);
  auto spectrum = harmonic::so3_ft_forward(input, out_bandwidth);
  const auto h = harmonic::so3_correlate_spectrum(spectrum, bank, out_bandwidth);
  if (cache) {
    cache->input_spectrum = std::move(spectrum);
    cache->bank = std::move(bank);
    cache->input_bandwidth = input.bandwidth;
  }
  return harmonic::so3_ft_inverse(h, grid_bandwidth < 0 ? out_bandwidth : grid_bandwidth);
}

/// Accumulates the filter gradient and returns the gradient w.r.t. the input grid.
template <typename T>
harmonic::SO3FeatureMap<T> so3_conv_backward(const harmonic::SO3FeatureMap<T>& grad_out, const SO3ConvCache<T>& cache,
                                             std::span<T> grad_params) {
  const int b = cache.bank.bandwidth;
  const auto& out_plan = harmonic::so3_plan<T>(grad_out.bandwidth, b);
  const auto& in_plan = harmonic::so3_plan<T>(cache.input_bandwidth, b);
  const int c_in = cache.input_spectrum.channels;
  const std::size_t per = harmonic::so3_coefficient_count(b);
  std::vector<Complex<T>> gh(per), gpsi(per);
  harmonic::SO3Coefficients<T> g_in(c_in, b);
  for (int o = 0; o < grad_out.channels; ++o) {
    out_plan.inverse_adjoint(grad_out.channel(o), gh);
    for (int i = 0; i < c_in; ++i) {
      const auto g = cache.input_spectrum.channel(i);
      const auto psi = cache.bank.filter(o, i);
      auto gg = g_in.channel(i);
      std::fill(gpsi.begin(), gpsi.end(), Complex<T>{});
      // H = s G Psi^H  =>  dG = s dH Psi,  dPsi = s dH^H G
      for (int l = 0; l < b; ++l) {
        const int dim = 2 * l + 1;
        const T s = static_cast<T>(8 * std::numbers::pi * std::numbers::pi / dim);
        const std::size_t off = harmonic::so3_block_offset(l);
        for (int a = 0; a < dim; ++a) {
          for (int c = 0; c < dim; ++c) {
            Complex<T> acc_g{}, acc_p{};
            for (int k = 0; k < dim; ++k) {
              acc_g += gh[off + a * dim + k] * psi[off + k * dim + c];
              acc_p += std::conj(gh[off + k * dim + a]) * g[off + k * dim + c];
            }
            gg[off + a * dim + c] += s * acc_g;
            gpsi[off + a * dim + c] = s * acc_p;
          }
        }
      }
      so3_filter_grad_to_params<T>(gpsi, grad_params.subspan((o * c_in + i) * per, per), b);
    }
  }
  harmonic::SO3FeatureMap<T> grad_in(c_in, cache.input_bandwidth);
  for (int i = 0; i < c_in; ++i) in_plan.forward_adjoint(g_in.channel(i), grad_in.channel(i));
  return grad_in;
}

}  // namespace spherevlad::model
