#pragma once

// Batch normalization over SO(3) grids, ReLU, contextual self-attention and
// NetVLAD aggregation, each with a hand-written backward pass.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/harmonic/signals.hpp"
#include "spherevlad/harmonic/wigner.hpp"

namespace spherevlad::model {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

// ---------------------------------------------------------------------------
// Batch normalization

/// Haar measure of each SO(3) grid cell, normalized to sum to one. Grid rows
/// near the poles cover less of the group, so plain averages over the grid
/// would not be rotation invariant.
template <typename T>
std::vector<T> haar_cell_weights(int bandwidth) {
  const int n = 2 * bandwidth;
  const harmonic::PolarQuadrature quad(bandwidth);
  std::vector<T> w(static_cast<std::size_t>(n) * n * n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      for (int p = 0; p < n; ++p)
        w[(static_cast<std::size_t>(j) * n + k) * n + p] = static_cast<T>(quad.weights[k] / (2.0 * n * n));
  return w;
}

struct BatchNormSettings {
  bool training = true;
  bool update_running = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename T>
struct BatchNormCache {
  bool training = true;
  std::vector<harmonic::SO3FeatureMap<T>> normalized;  // x-hat
  std::vector<T> inv_std;
  std::vector<T> cell_weights;
};

/// Per-channel statistics over the grid (Haar weighted) and the batch.
template <typename T>
void batchnorm_forward(std::vector<harmonic::SO3FeatureMap<T>>& maps, std::span<const T> gamma,
                       std::span<const T> beta, std::span<T> running_mean, std::span<T> running_var,
                       const BatchNormSettings& settings, BatchNormCache<T>* cache) {
  if (maps.empty()) return;
  const int channels = maps.front().channels;
  const std::size_t grid = maps.front().grid_size();
  const auto w = haar_cell_weights<T>(maps.front().bandwidth);
  const T inv_batch = T(1) / static_cast<T>(maps.size());
  std::vector<T> mean(channels), var(channels), inv_std(channels);
  for (int c = 0; c < channels; ++c) {
    if (settings.training) {
      double mu = 0;
      for (const auto& m : maps) {
        const auto x = m.channel(c);
        for (std::size_t i = 0; i < grid; ++i) mu += static_cast<double>(w[i]) * x[i];
      }
      mu *= inv_batch;
      double v = 0;
      for (const auto& m : maps) {
        const auto x = m.channel(c);
        for (std::size_t i = 0; i < grid; ++i) v += static_cast<double>(w[i]) * (x[i] - mu) * (x[i] - mu);
      }
      v *= inv_batch;
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(v);
      if (settings.update_running) {
        const T mom = static_cast<T>(settings.momentum);
        running_mean[c] = (T(1) - mom) * running_mean[c] + mom * mean[c];
        running_var[c] = (T(1) - mom) * running_var[c] + mom * var[c];
      }
    } else {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
    inv_std[c] = T(1) / std::sqrt(var[c] + static_cast<T>(settings.eps));
  }
  if (cache) {
    cache->training = settings.training;
    cache->inv_std = inv_std;
    cache->cell_weights = w;
    cache->normalized.clear();
  }
  for (auto& m : maps) {
    if (cache) cache->normalized.emplace_back(channels, m.bandwidth);
    for (int c = 0; c < channels; ++c) {
      auto x = m.channel(c);
      for (std::size_t i = 0; i < grid; ++i) {
        const T xh = (x[i] - mean[c]) * inv_std[c];
        if (cache) cache->normalized.back().channel(c)[i] = xh;
        x[i] = gamma[c] * xh + beta[c];
      }
    }
  }
}

/// Turns dL/dy into dL/dx in place and accumulates the affine gradients.
///   dx_i = gamma / s * (g_i - w_i sum g - w_i xh_i sum g xh)   (training)
template <typename T>
void batchnorm_backward(std::vector<harmonic::SO3FeatureMap<T>>& grads, const BatchNormCache<T>& cache,
                        std::span<const T> gamma, std::span<T> grad_gamma, std::span<T> grad_beta) {
  if (grads.empty()) return;
  const int channels = grads.front().channels;
  const std::size_t grid = grads.front().grid_size();
  const T inv_batch = T(1) / static_cast<T>(grads.size());
  for (int c = 0; c < channels; ++c) {
    double sum_g = 0, sum_gx = 0, sum_wg = 0, sum_wgx = 0;
    for (std::size_t b = 0; b < grads.size(); ++b) {
      const auto g = grads[b].channel(c);
      const auto xh = cache.normalized[b].channel(c);
      for (std::size_t i = 0; i < grid; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
    }
    grad_gamma[c] += static_cast<T>(sum_gx);
    grad_beta[c] += static_cast<T>(sum_g);
    const T scale = gamma[c] * cache.inv_std[c];
    if (!cache.training) {
      for (auto& gm : grads)
        for (auto& v : gm.channel(c)) v *= scale;
      continue;
    }
    // With weighted statistics the reductions are unweighted sums of dL/dxh.
    sum_wg = sum_g;
    sum_wgx = sum_gx;
    for (std::size_t b = 0; b < grads.size(); ++b) {
      auto g = grads[b].channel(c);
      const auto xh = cache.normalized[b].channel(c);
      for (std::size_t i = 0; i < grid; ++i) {
        const T wi = cache.cell_weights[i] * inv_batch;
        g[i] = scale * (g[i] - wi * static_cast<T>(sum_wg) - wi * xh[i] * static_cast<T>(sum_wgx));
      }
    }
  }
}

template <typename T>
void relu_forward(harmonic::SO3FeatureMap<T>& m) {
  for (auto& v : m.values) v = v > T(0) ? v : T(0);
}

/// Masks by the forward output (positive where the input was positive).
template <typename T>
void relu_backward(harmonic::SO3FeatureMap<T>& grad, const harmonic::SO3FeatureMap<T>& output) {
  for (std::size_t i = 0; i < grad.values.size(); ++i)
    if (!(output.values[i] > T(0))) grad.values[i] = T(0);
}

// ---------------------------------------------------------------------------
// Contextual self-attention on a C x L feature matrix
//
//   Q = Wq F, K = Wk F, V = Wv F, M = softmax_rows(Q^T K), A = V M^T,
//   F' = F + omega A.
// With key weights u_j the softmax becomes u_j exp(s_ij) / sum_k u_k exp(s_ik),
// so each row of M is a quadrature of the continuous attention integral.

template <typename T>
struct AttentionWeights {
  ConstMatrixMap<T> wq, wk, wv;
  T omega;
  std::span<const T> key_weights = {};  // quadrature weight per key; empty means uniform
};

template <typename T>
struct AttentionCache {
  Matrix<T> f, q, k, v, m, a;
};

inline int attention_key_channels(int channels) { return std::max(1, channels / 2); }

template <typename T>
Matrix<T> row_softmax(const Matrix<T>& s) {
  Matrix<T> m(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T mx = s.row(i).maxCoeff();
    m.row(i) = (s.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

template <typename T>
Matrix<T> attention_forward(const Matrix<T>& f, const AttentionWeights<T>& p, AttentionCache<T>* cache) {
  if (p.wq.cols() != f.rows() || p.wk.cols() != f.rows() || p.wv.cols() != f.rows() || p.wv.rows() != f.rows() ||
      p.wq.rows() != p.wk.rows())
    throw Error(ErrorCode::ShapeMismatch, "attention weights do not match the feature channels");
  Matrix<T> q = p.wq * f, k = p.wk * f, v = p.wv * f;
  Matrix<T> s = q.transpose() * k;
  if (!p.key_weights.empty()) {
    if (static_cast<Eigen::Index>(p.key_weights.size()) != f.cols())
      throw Error(ErrorCode::ShapeMismatch, "attention key weights do not match the descriptor count");
    for (Eigen::Index j = 0; j < s.cols(); ++j) s.col(j).array() += std::log(p.key_weights[j]);
  }
  Matrix<T> m = row_softmax<T>(s);
  Matrix<T> a = v * m.transpose();
  Matrix<T> out = p.omega == T(0) ? f : Matrix<T>(f + p.omega * a);
  if (cache) *cache = {f, std::move(q), std::move(k), std::move(v), std::move(m), std::move(a)};
  return out;
}

template <typename T>
struct AttentionGrads {
  Matrix<T> f, wq, wk, wv;
  T omega = 0;
};

template <typename T>
AttentionGrads<T> attention_backward(const Matrix<T>& grad_out, const AttentionCache<T>& c, const AttentionWeights<T>& p) {
  AttentionGrads<T> g;
  g.omega = (grad_out.array() * c.a.array()).sum();
  const Matrix<T> ga = p.omega * grad_out;
  const Matrix<T> gv = ga * c.m;
  const Matrix<T> gm = ga.transpose() * c.v;
  Matrix<T> gs(gm.rows(), gm.cols());
  for (Eigen::Index i = 0; i < gm.rows(); ++i) {
    const T dot = (gm.row(i).array() * c.m.row(i).array()).sum();
    gs.row(i) = c.m.row(i).array() * (gm.row(i).array() - dot);
  }
  const Matrix<T> gq = c.k * gs.transpose();
  const Matrix<T> gk = c.q * gs;
  g.wq = gq * c.f.transpose();
  g.wk = gk * c.f.transpose();
  g.wv = gv * c.f.transpose();
  g.f = grad_out + p.wq.transpose() * gq + p.wk.transpose() * gk + p.wv.transpose() * gv;
  return g;
}

// ---------------------------------------------------------------------------
// NetVLAD
//
//   a_ik = softmax_k(w_k . x_i + b_k),  V_k = sum_i u_i a_ik (x_i - c_k),
//   intra-normalize each V_k, concatenate, L2-normalize. The optional local
//   weights u_i default to one.

template <typename T>
struct VladWeights {
  ConstMatrixMap<T> centroids;  // K x C
  ConstMatrixMap<T> w;          // K x C
  std::span<const T> b;         // K
  std::span<const T> local_weights = {};  // per local descriptor; empty means uniform
};

constexpr double kVladZeroGuard = 1e-12;

/// L x K assignment matrix for the columns of f (C x L).
template <typename T>
Matrix<T> soft_assign(const Matrix<T>& f, const VladWeights<T>& v) {
  if (v.w.cols() != f.rows() || v.centroids.cols() != f.rows() || static_cast<Eigen::Index>(v.b.size()) != v.w.rows())
    throw Error(ErrorCode::ShapeMismatch, "VLAD weights do not match the feature channels");
  Matrix<T> logits = f.transpose() * v.w.transpose();
  for (Eigen::Index k = 0; k < logits.cols(); ++k) logits.col(k).array() += v.b[k];
  return row_softmax<T>(logits);
}

template <typename T>
struct VladCache {
  Matrix<T> f, assign, weighted, residual, normalized;  // residual, normalized: K x C
  Vector<T> residual_norm;
  T global_norm = 0;
};

template <typename T>
Vector<T> netvlad_forward(const Matrix<T>& f, const VladWeights<T>& v, VladCache<T>* cache) {
  const Matrix<T> a = soft_assign<T>(f, v);
  const Eigen::Index kc = v.w.rows(), c = f.rows();
  Matrix<T> aw = a;
  if (!v.local_weights.empty()) {
    if (static_cast<Eigen::Index>(v.local_weights.size()) != f.cols())
      throw Error(ErrorCode::ShapeMismatch, "VLAD local weights do not match the descriptor count");
    for (Eigen::Index i = 0; i < aw.rows(); ++i) aw.row(i) *= v.local_weights[i];
  }
  Matrix<T> residual = aw.transpose() * f.transpose();  // K x C: sum_i w_i a_ik x_i
  const Vector<T> mass = aw.colwise().sum().transpose();
  for (Eigen::Index k = 0; k < kc; ++k) residual.row(k) -= mass[k] * v.centroids.row(k);
  Matrix<T> normalized = Matrix<T>::Zero(kc, c);
  Vector<T> norms(kc);
  for (Eigen::Index k = 0; k < kc; ++k) {
    norms[k] = residual.row(k).norm();
    if (norms[k] >= static_cast<T>(kVladZeroGuard)) normalized.row(k) = residual.row(k) / norms[k];
  }
  Vector<T> out = Eigen::Map<const Vector<T>>(normalized.data(), kc * c);
  const T total = out.norm();
  if (total >= static_cast<T>(kVladZeroGuard)) out /= total;
  if (cache) *cache = {f, a, std::move(aw), std::move(residual), std::move(normalized), std::move(norms), total};
  return out;
}

template <typename T>
struct VladGrads {
  Matrix<T> f, centroids, w;
  Vector<T> b;
};

template <typename T>
VladGrads<T> netvlad_backward(const Vector<T>& grad_out, const VladCache<T>& c, const VladWeights<T>& v) {
  const Eigen::Index kc = v.w.rows(), ch = c.f.rows();
  VladGrads<T> g;
  // global L2
  Vector<T> gv = Vector<T>::Zero(kc * ch);
  if (c.global_norm >= static_cast<T>(kVladZeroGuard)) {
    const Vector<T> out = Eigen::Map<const Vector<T>>(c.normalized.data(), kc * ch) / c.global_norm;
    gv = (grad_out - out * out.dot(grad_out)) / c.global_norm;
  }
  const Matrix<T> g_normalized = Eigen::Map<const Matrix<T>>(gv.data(), kc, ch);
  // intra-normalization
  Matrix<T> g_residual = Matrix<T>::Zero(kc, ch);
  for (Eigen::Index k = 0; k < kc; ++k) {
    if (c.residual_norm[k] < static_cast<T>(kVladZeroGuard)) continue;
    const auto u = c.normalized.row(k);
    g_residual.row(k) = (g_normalized.row(k) - u * u.dot(g_normalized.row(k))) / c.residual_norm[k];
  }
  const Vector<T> mass = c.weighted.colwise().sum().transpose();
  g.centroids = Matrix<T>(kc, ch);
  for (Eigen::Index k = 0; k < kc; ++k) g.centroids.row(k) = -mass[k] * g_residual.row(k);
  // residual_k = sum_i a_ik (x_i - c_k)
  Matrix<T> g_assign = c.f.transpose() * g_residual.transpose();  // L x K: x_i . g_k
  const Vector<T> cg = (v.centroids.array() * g_residual.array()).rowwise().sum();
  for (Eigen::Index k = 0; k < kc; ++k) g_assign.col(k).array() -= cg[k];
  if (!v.local_weights.empty())
    for (Eigen::Index i = 0; i < g_assign.rows(); ++i) g_assign.row(i) *= v.local_weights[i];
  g.f = g_residual.transpose() * c.weighted.transpose();  // C x L
  // softmax over clusters
  Matrix<T> g_logits(g_assign.rows(), kc);
  for (Eigen::Index i = 0; i < g_assign.rows(); ++i) {
    const T dot = (g_assign.row(i).array() * c.assign.row(i).array()).sum();
    g_logits.row(i) = c.assign.row(i).array() * (g_assign.row(i).array() - dot);
  }
  g.w = g_logits.transpose() * c.f.transpose();  // K x C
  g.b = g_logits.colwise().sum().transpose();
  g.f += v.w.transpose() * g_logits.transpose();
  return g;
}

}  // namespace spherevlad::model
