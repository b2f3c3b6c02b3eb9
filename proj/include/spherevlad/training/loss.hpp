#pragma once

// Lazy quadruplet loss
//   L = max_ij [m1 + d(a, p_i) - d(a, n_j)]+  +  max_ik [m2 + d(a, p_i) - d(n_k, n*)]+
// with Euclidean d. Ties in either max go to the first index pair in
// (i, j) row-major order, which also fixes the subgradient.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/model/layers.hpp"

namespace spherevlad::training {

using model::Vector;

struct Margins {
  double m1 = 0.5;
  double m2 = 0.2;
};

struct LossTerm {
  double value = 0;  // after the hinge
  std::size_t positive = 0;
  std::size_t negative = 0;
};

template <typename T>
struct QuadrupletLoss {
  double value = 0;
  LossTerm first, second;
  // gradients, filled only when requested
  Vector<T> grad_anchor;
  std::vector<Vector<T>> grad_positives, grad_negatives;
  Vector<T> grad_extra;
};

namespace detail {

template <typename T>
double distance(const Vector<T>& a, const Vector<T>& b) {
  return std::sqrt(static_cast<double>((a - b).squaredNorm()));
}

/// Adds the gradient of d(x, y) scaled by s. At d = 0 the subgradient is zero.
template <typename T>
void add_distance_grad(const Vector<T>& x, const Vector<T>& y, double s, Vector<T>& gx, Vector<T>& gy) {
  const double d = distance(x, y);
  if (d == 0.0) return;
  const Vector<T> u = (x - y) * static_cast<T>(s / d);
  gx += u;
  gy -= u;
}

}  // namespace detail

template <typename T>
QuadrupletLoss<T> lazy_quadruplet_loss(const Vector<T>& anchor, std::span<const Vector<T>> positives,
                                       std::span<const Vector<T>> negatives, const Vector<T>& extra,
                                       const Margins& margins, bool with_gradient = true) {
  const Eigen::Index dim = anchor.size();
  auto check = [&](const Vector<T>& v) {
    if (v.size() != dim) throw Error(ErrorCode::DimensionMismatch, "descriptors in a tuple must share one dimension");
  };
  for (const auto& v : positives) check(v);
  for (const auto& v : negatives) check(v);
  check(extra);
  if (positives.empty() || negatives.empty())
    throw Error(ErrorCode::DimensionMismatch, "a tuple needs at least one positive and one negative");

  QuadrupletLoss<T> out;
  std::vector<double> dp(positives.size()), dn(negatives.size()), dx(negatives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) dp[i] = detail::distance(anchor, positives[i]);
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    dn[j] = detail::distance(anchor, negatives[j]);
    dx[j] = detail::distance(negatives[j], extra);
  }
  std::optional<double> best1, best2;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    for (std::size_t j = 0; j < negatives.size(); ++j) {
      const double t1 = margins.m1 + dp[i] - dn[j], t2 = margins.m2 + dp[i] - dx[j];
      if (!best1 || t1 > *best1) {
        best1 = t1;
        out.first.positive = i;
        out.first.negative = j;
      }
      if (!best2 || t2 > *best2) {
        best2 = t2;
        out.second.positive = i;
        out.second.negative = j;
      }
    }
  }
  out.first.value = std::max(0.0, *best1);
  out.second.value = std::max(0.0, *best2);
  out.value = out.first.value + out.second.value;
  if (!with_gradient) return out;

  out.grad_anchor = Vector<T>::Zero(dim);
  out.grad_positives.assign(positives.size(), Vector<T>::Zero(dim));
  out.grad_negatives.assign(negatives.size(), Vector<T>::Zero(dim));
  out.grad_extra = Vector<T>::Zero(dim);
  if (out.first.value > 0) {
    detail::add_distance_grad(anchor, positives[out.first.positive], 1.0, out.grad_anchor,
                              out.grad_positives[out.first.positive]);
    detail::add_distance_grad(anchor, negatives[out.first.negative], -1.0, out.grad_anchor,
                              out.grad_negatives[out.first.negative]);
  }
  if (out.second.value > 0) {
    detail::add_distance_grad(anchor, positives[out.second.positive], 1.0, out.grad_anchor,
                              out.grad_positives[out.second.positive]);
    detail::add_distance_grad(negatives[out.second.negative], extra, -1.0, out.grad_negatives[out.second.negative],
                              out.grad_extra);
  }
  return out;
}

}  // namespace spherevlad::training
