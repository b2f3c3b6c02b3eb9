#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace spherevlad::testing {

/// Central differences of f with respect to every entry of x (restored afterwards).
template <typename F>
std::vector<double> numeric_gradient(std::span<double> x, F&& f, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// max |a - n| / max |n| over a group.
inline double group_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / std::max(scale, 1e-12);
}

}  // namespace spherevlad::testing
