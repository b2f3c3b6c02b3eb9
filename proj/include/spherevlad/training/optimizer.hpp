#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spherevlad/model/parameters.hpp"

namespace spherevlad::training {

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters whose name starts with a frozen
/// prefix are left untouched.
template <typename T>
class Adam {
 public:
  Adam(const model::ParameterSet<T>& params, AdamSettings settings, std::vector<std::string> frozen = {})
      : settings_(settings), frozen_(std::move(frozen)), m_(params.zeros_like()), v_(params.zeros_like()) {}

  bool is_frozen(const std::string& name) const {
    for (const auto& prefix : frozen_)
      if (name.starts_with(prefix)) return true;
    return false;
  }

  void step(model::ParameterSet<T>& params, const model::ParameterSet<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(settings_.beta1, t_), c2 = 1.0 - std::pow(settings_.beta2, t_);
    auto m_it = m_.begin();
    auto v_it = v_.begin();
    auto g_it = grads.begin();
    for (auto& [name, p] : params) {
      auto& m = m_it->second.data;
      auto& v = v_it->second.data;
      const auto& g = g_it->second.data;
      ++m_it, ++v_it, ++g_it;
      if (is_frozen(name)) continue;
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<T>(settings_.beta1 * m[i] + (1 - settings_.beta1) * gi);
        v[i] = static_cast<T>(settings_.beta2 * v[i] + (1 - settings_.beta2) * gi * gi);
        const double mh = m[i] / c1, vh = v[i] / c2;
        p.data[i] -= static_cast<T>(settings_.learning_rate * mh / (std::sqrt(vh) + settings_.eps));
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamSettings settings_;
  std::vector<std::string> frozen_;
  model::ParameterSet<T> m_, v_;
  long t_ = 0;
};

}  // namespace spherevlad::training
