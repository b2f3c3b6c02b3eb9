#pragma once

// Retrieval experiments: baseline evaluation, yaw sweeps, the four-way
// batch-norm / attention ablation and the per-frame runtime benchmark.

#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/common/random.hpp"
#include "spherevlad/eval/index.hpp"
#include "spherevlad/eval/metrics.hpp"
#include "spherevlad/ingest/frame.hpp"
#include "spherevlad/model/network.hpp"
#include "spherevlad/sphere/panorama.hpp"
#include "spherevlad/training/trainer.hpp"

namespace spherevlad::eval {

struct EvalOptions {
  double max_range_m = 50.0;
  double threshold_m = 5.0;
  std::size_t max_n = 25;
  ingest::DistanceMode distance = ingest::DistanceMode::Euclidean3D;
};

struct Evaluation {
  std::vector<RetrievalResult> results;
  RecallReport recall;
};

inline std::vector<ingest::SubmapFrame> select_frames(const std::vector<ingest::SubmapFrame>& frames,
                                                      const std::vector<std::int64_t>& ids) {
  std::map<std::int64_t, const ingest::SubmapFrame*> by_id;
  for (const auto& f : frames) by_id[f.frame_id] = &f;
  std::vector<ingest::SubmapFrame> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::MissingPose, "split references unknown frame " + std::to_string(id));
    out.push_back(*it->second);
  }
  return out;
}

template <typename T>
std::vector<GlobalDescriptor> describe_frames(model::Model<T>& net, const std::vector<ingest::SubmapFrame>& frames,
                                              double max_range_m = 50.0) {
  std::vector<GlobalDescriptor> out;
  out.reserve(frames.size());
  const int b0 = net.config().encoder.input_bandwidth;
  for (const auto& f : frames) out.push_back(net.describe(sphere::project(f, max_range_m, b0)));
  return out;
}

template <typename T>
DescriptorIndex index_frames(model::Model<T>& net, const std::vector<ingest::SubmapFrame>& frames,
                             double max_range_m = 50.0) {
  const auto desc = describe_frames(net, frames, max_range_m);
  std::vector<Pose> poses;
  for (const auto& f : frames) poses.push_back(f.pose);
  return build_index(desc, poses);
}

/// Full rankings for each query descriptor plus the recall curve.
inline Evaluation evaluate_descriptors(const DescriptorIndex& index, const std::vector<GlobalDescriptor>& queries,
                                       const std::vector<Pose>& query_poses, const EvalOptions& opt) {
  Evaluation ev;
  const std::vector<double> thresholds{opt.threshold_m};
  for (std::size_t i = 0; i < queries.size(); ++i)
    ev.results.push_back(
        index.query(queries[i].values, 0, queries[i].frame_id, query_poses[i], thresholds, opt.distance));
  ev.recall = recall_at_n(ev.results, opt.threshold_m, index.size(), opt.max_n);
  return ev;
}

template <typename T>
Evaluation evaluate(model::Model<T>& net, const std::vector<ingest::SubmapFrame>& frames, const ingest::SplitSpec& split,
                    const EvalOptions& opt = {}) {
  const auto index = index_frames(net, select_frames(frames, split.database_ids), opt.max_range_m);
  const auto queries = select_frames(frames, split.query_ids);
  std::vector<Pose> poses;
  for (const auto& f : queries) poses.push_back(f.pose);
  return evaluate_descriptors(index, describe_frames(net, queries, opt.max_range_m), poses, opt);
}

/// Query cloud yawed about the sensor z axis, then offset in the horizontal
/// plane; the ground-truth pose is left unchanged. Whole azimuth cells of
/// the projection grid are applied as an exact panorama shift and only the
/// remainder rotates the points.
inline sphere::SphericalPanorama perturbed_panorama(const ingest::SubmapFrame& frame, double yaw_rad, double dx,
                                                    double dy, double max_range_m, int bandwidth) {
  const double cell = std::numbers::pi / bandwidth;
  const double cells = std::round(yaw_rad / cell);
  const double rest = yaw_rad - cells * cell;
  ingest::SubmapFrame moved = rest == 0.0 ? frame : sphere::rotate_points_yaw(frame, rest);
  if (dx != 0.0 || dy != 0.0) {
    const Eigen::Vector3f offset(static_cast<float>(dx), static_cast<float>(dy), 0.0f);
    const Eigen::Matrix3f r = rotation_z(cells * cell).transpose().cast<float>();
    const Eigen::Vector3f local = r * offset;  // offset expressed before the panorama shift
    for (auto& p : moved.points) p -= local;
  }
  return sphere::rotate_panorama_yaw(sphere::project(moved, max_range_m, bandwidth), static_cast<int>(cells));
}

struct YawRow {
  double yaw_deg = 0;
  RecallReport recall;
  std::vector<RetrievalResult> results;
};

/// Every yaw reuses the same per-query translation noise drawn from seed.
template <typename T>
std::vector<YawRow> yaw_sweep_eval(model::Model<T>& net, const std::vector<ingest::SubmapFrame>& frames,
                                   const ingest::SplitSpec& split, const std::vector<double>& yaws_deg,
                                   double translation_noise_m, std::uint64_t seed, const EvalOptions& opt = {}) {
  if (yaws_deg.empty()) throw Error(ErrorCode::BadConfig, "yaw_sweep_eval: empty yaw list");
  const auto index = index_frames(net, select_frames(frames, split.database_ids), opt.max_range_m);
  const auto queries = select_frames(frames, split.query_ids);
  const int b0 = net.config().encoder.input_bandwidth;
  std::vector<Pose> poses;
  for (const auto& f : queries) poses.push_back(f.pose);
  std::vector<YawRow> rows;
  for (double yaw : yaws_deg) {
    Rng rng(seed);
    std::vector<GlobalDescriptor> desc;
    for (const auto& f : queries) {
      const double dx = (2 * rng.uniform() - 1) * translation_noise_m, dy = (2 * rng.uniform() - 1) * translation_noise_m;
      auto pano = perturbed_panorama(f, yaw * std::numbers::pi / 180.0, dx, dy, opt.max_range_m, b0);
      desc.push_back(net.describe(pano));
    }
    auto ev = evaluate_descriptors(index, desc, poses, opt);
    rows.push_back({yaw, ev.recall, std::move(ev.results)});
  }
  return rows;
}

/// Parses "start:step:stop" (inclusive) or a comma list.
inline std::vector<double> parse_yaw_list(const std::string& spec) {
  std::vector<double> out;
  try {
    if (spec.find(':') != std::string::npos) {
      const auto a = spec.find(':'), b = spec.find(':', a + 1);
      if (b == std::string::npos) throw Error(ErrorCode::BadConfig, "yaw range must be start:step:stop");
      const double start = std::stod(spec.substr(0, a)), step = std::stod(spec.substr(a + 1, b - a - 1)),
                   stop = std::stod(spec.substr(b + 1));
      if (!(step > 0)) throw Error(ErrorCode::BadConfig, "yaw step must be positive");
      for (int i = 0; start + i * step <= stop + 1e-9; ++i) out.push_back(start + i * step);
    } else {
      std::stringstream ss(spec);
      std::string cell;
      while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
    }
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::BadConfig, "bad yaw list '" + spec + "'");
  }
  if (out.empty()) throw Error(ErrorCode::BadConfig, "empty yaw list");
  return out;
}

inline void write_yaw_csv(const std::filesystem::path& path, const std::vector<YawRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
  out << "yaw_deg,ar1,ar1_percent\n";
  for (const auto& r : rows) out << r.yaw_deg << ',' << r.recall.ar1 << ',' << r.recall.ar1_percent << '\n';
}

struct AblationRow {
  bool batchnorm = false;
  bool attention = false;
  RecallReport recall;
};

/// Trains the four batch-norm / attention combinations under one training
/// config and seed and evaluates each on the split.
template <typename T>
std::vector<AblationRow> run_ablation(const std::vector<ingest::SubmapFrame>& train_frames,
                                      const std::vector<ingest::SubmapFrame>& eval_frames,
                                      const ingest::SplitSpec& split, const training::TrainConfig& cfg,
                                      const EvalOptions& opt = {}, const training::TrainHooks& hooks = {}) {
  std::vector<AblationRow> rows;
  for (bool bn : {false, true}) {
    for (bool att : {false, true}) {
      auto c = cfg;
      c.model.encoder.batchnorm = bn;
      c.model.attention = att;
      auto result = training::train<T>(train_frames, c, std::nullopt, hooks);
      rows.push_back({bn, att, evaluate(result.model, eval_frames, split, opt).recall});
    }
  }
  return rows;
}

inline void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
  out << "batchnorm,attention,ar1,ar1_percent\n";
  for (const auto& r : rows)
    out << (r.batchnorm ? "on" : "off") << ',' << (r.attention ? "on" : "off") << ',' << r.recall.ar1 << ','
        << r.recall.ar1_percent << '\n';
}

struct RuntimeReport {
  std::size_t runs = 0;
  double preprocess_ms = 0;  // spherical projection
  double inference_ms = 0;   // forward pass to the global descriptor
  double total_ms = 0;
  double peak_memory_mb = 0;  // process peak resident set; no accelerator is used
};

inline double peak_resident_mb() {
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return static_cast<double>(usage.ru_maxrss) / 1024.0;
}

/// Mean per-frame wall clock over n_runs after `warmup` discarded runs,
/// cycling through the frames.
template <typename T>
RuntimeReport benchmark_runtime(model::Model<T>& net, const std::vector<ingest::SubmapFrame>& frames,
                                std::size_t n_runs = 500, std::size_t warmup = 10, double max_range_m = 50.0) {
  if (frames.empty()) throw Error(ErrorCode::EmptyInput, "benchmark_runtime: no frames");
  using clock = std::chrono::steady_clock;
  const int b0 = net.config().encoder.input_bandwidth;
  RuntimeReport r;
  double pre = 0, inf = 0;
  for (std::size_t i = 0; i < warmup + n_runs; ++i) {
    const auto& f = frames[i % frames.size()];
    const auto t0 = clock::now();
    const auto pano = sphere::project(f, max_range_m, b0);
    const auto t1 = clock::now();
    const auto g = net.describe(pano);
    const auto t2 = clock::now();
    if (g.values.empty()) throw Error(ErrorCode::ShapeMismatch, "empty descriptor");
    if (i < warmup) continue;
    pre += std::chrono::duration<double, std::milli>(t1 - t0).count();
    inf += std::chrono::duration<double, std::milli>(t2 - t1).count();
  }
  r.runs = n_runs;
  if (n_runs > 0) {
    r.preprocess_ms = pre / static_cast<double>(n_runs);
    r.inference_ms = inf / static_cast<double>(n_runs);
  }
  r.total_ms = r.preprocess_ms + r.inference_ms;
  r.peak_memory_mb = peak_resident_mb();
  return r;
}

inline void write_runtime_csv(const std::filesystem::path& path, const RuntimeReport& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
  out << "runs,preprocess_ms,inference_ms,total_ms,peak_memory_mb\n"
      << r.runs << ',' << r.preprocess_ms << ',' << r.inference_ms << ',' << r.total_ms << ',' << r.peak_memory_mb << '\n';
}

}  // namespace spherevlad::eval
