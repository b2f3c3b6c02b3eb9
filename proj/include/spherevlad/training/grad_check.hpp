#pragma once

// Central finite differences against the analytic gradient of the lazy
// quadruplet loss, one row per parameter group.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "spherevlad/common/random.hpp"
#include "spherevlad/model/network.hpp"
#include "spherevlad/training/loss.hpp"
#include "spherevlad/training/trainer.hpp"

namespace spherevlad::training {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-6;
  std::uint64_t seed = 0;
  double omega = 0.5;  // nonzero so the attention projections get a gradient
  Margins margins;
  int n_pos = 2;
  int n_neg = 6;
  std::vector<std::string> groups;  // name prefixes to check; empty checks all
};

struct GradCheckRow {
  std::string name;
  std::size_t count = 0;
  double max_abs_gradient = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  double loss = 0;
  double max_rel_err = 0;
  bool passed = false;
  std::vector<GradCheckRow> rows;
};

/// max |analytic - numeric| / max(|analytic|, |numeric|) over one group; zero
/// when both vanish.
inline double group_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale == 0 ? 0.0 : diff / scale;
}

/// Random float64 model and random tuple of panoramas, both from the seed.
inline GradCheckReport grad_check(const model::ModelConfig& cfg, const GradCheckOptions& opt = {}) {
  auto net = model::Model<double>::random(cfg, opt.seed);
  if (net.parameters().contains("att.omega")) net.parameters().at("att.omega").data[0] = opt.omega;
  Rng rng(detail::derive_seed(opt.seed, 7));
  const int b0 = cfg.encoder.input_bandwidth;
  const std::size_t n_pos = static_cast<std::size_t>(opt.n_pos), n_neg = static_cast<std::size_t>(opt.n_neg);
  std::vector<harmonic::S2Signal<double>> batch;
  for (std::size_t i = 0; i < 2 + n_pos + n_neg; ++i) {
    harmonic::S2Signal<double> s(1, b0);
    for (auto& v : s.values) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    batch.push_back(std::move(s));
  }
  auto loss = [&] {
    const auto desc = net.forward(batch, {true, false}, nullptr);
    return detail::batch_losses<double>(desc, n_pos, n_neg, opt.margins, nullptr).front();
  };
  typename model::Model<double>::Cache cache;
  const auto desc = net.forward(batch, {true, false}, &cache);
  std::vector<Vector<double>> grads;
  GradCheckReport report;
  report.loss = detail::batch_losses<double>(desc, n_pos, n_neg, opt.margins, &grads).front();
  const auto analytic = net.backward(cache, grads);

  for (auto& [name, t] : net.parameters()) {
    const bool selected = opt.groups.empty() || std::any_of(opt.groups.begin(), opt.groups.end(), [&](const auto& g) {
                            return name.starts_with(g);
                          });
    if (!selected) continue;
    std::vector<double> numeric(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + opt.step;
      const double up = loss();
      t.data[i] = saved - opt.step;
      const double down = loss();
      t.data[i] = saved;
      numeric[i] = (up - down) / (2 * opt.step);
    }
    const auto& a = analytic.at(name).data;
    GradCheckRow row{name, a.size(), 0.0, group_relative_error(a, numeric)};
    for (double v : a) row.max_abs_gradient = std::max(row.max_abs_gradient, std::abs(v));
    report.max_rel_err = std::max(report.max_rel_err, row.rel_err);
    report.rows.push_back(row);
  }
  report.passed = report.max_rel_err <= opt.tolerance;
  return report;
}

}  // namespace spherevlad::training
