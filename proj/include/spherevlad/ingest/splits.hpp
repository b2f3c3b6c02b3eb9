#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/common/random.hpp"
#include "spherevlad/ingest/frame.hpp"

namespace spherevlad::ingest {

/// Greedy single pass: the first frame is kept, then every frame at least
/// spacing_m from the last kept one.
inline std::vector<SubmapFrame> select_keyposes(const std::vector<SubmapFrame>& frames, double spacing_m,
                                                DistanceMode mode = DistanceMode::Euclidean3D) {
  if (frames.empty()) throw Error(ErrorCode::EmptyInput, "select_keyposes: no frames");
  if (!(spacing_m > 0)) throw Error(ErrorCode::BadConfig, "select_keyposes: spacing must be positive");
  std::vector<SubmapFrame> kept{frames.front()};
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (pose_distance(frames[i].pose, kept.back().pose, mode) >= spacing_m) kept.push_back(frames[i]);
  return kept;
}

enum class SplitStrategy { KeyposeRest, Revisit, CrossRecording };

inline SplitStrategy parse_split_strategy(const std::string& name) {
  if (name == "keypose_rest") return SplitStrategy::KeyposeRest;
  if (name == "revisit") return SplitStrategy::Revisit;
  if (name == "cross_recording") return SplitStrategy::CrossRecording;
  throw Error(ErrorCode::BadConfig, "unknown split strategy '" + name + "'");
}

struct SplitParams {
  double spacing_m = 5.0;           // keypose_rest
  double revisit_radius_m = 3.0;    // revisit
  std::size_t min_frame_gap = 30;   // revisit: earlier frame must be at least this many frames back
  int database_label = 0;           // cross_recording: trajectory_id of the database recording
  std::vector<int> query_labels;    // cross_recording: empty means every other recording
  double success_threshold_m = 5.0;
  DistanceMode distance = DistanceMode::Euclidean3D;
};

inline SplitSpec split_query_database(const std::vector<SubmapFrame>& frames, SplitStrategy strategy,
                                      const SplitParams& params) {
  if (frames.empty()) throw Error(ErrorCode::EmptyInput, "split_query_database: no frames");
  SplitSpec split;
  split.success_threshold_m = params.success_threshold_m;

  switch (strategy) {
    case SplitStrategy::KeyposeRest: {
      std::set<std::int64_t> keys;
      for (const auto& f : select_keyposes(frames, params.spacing_m, params.distance)) keys.insert(f.frame_id);
      for (const auto& f : frames) (keys.count(f.frame_id) ? split.database_ids : split.query_ids).push_back(f.frame_id);
      break;
    }
    case SplitStrategy::Revisit: {
      for (std::size_t i = 0; i < frames.size(); ++i) {
        bool revisit = false;
        for (std::size_t j = 0; j + params.min_frame_gap <= i && !revisit; ++j)
          revisit = pose_distance(frames[i].pose, frames[j].pose, params.distance) <= params.revisit_radius_m;
        (revisit ? split.query_ids : split.database_ids).push_back(frames[i].frame_id);
      }
      if (split.query_ids.empty()) throw Error(ErrorCode::NoRevisitsFound, "revisit split found no revisiting frames");
      break;
    }
    case SplitStrategy::CrossRecording: {
      std::set<int> labels;
      for (const auto& f : frames) labels.insert(f.trajectory_id);
      if (!labels.count(params.database_label))
        throw Error(ErrorCode::UnknownRecordingLabel, "no recording labelled " + std::to_string(params.database_label));
      for (int q : params.query_labels)
        if (!labels.count(q)) throw Error(ErrorCode::UnknownRecordingLabel, "no recording labelled " + std::to_string(q));
      for (const auto& f : frames) {
        if (f.trajectory_id == params.database_label) split.database_ids.push_back(f.frame_id);
        else if (params.query_labels.empty() ||
                 std::find(params.query_labels.begin(), params.query_labels.end(), f.trajectory_id) !=
                     params.query_labels.end())
          split.query_ids.push_back(f.frame_id);
      }
      break;
    }
  }
  if (split.database_ids.empty()) throw Error(ErrorCode::EmptyInput, "split produced an empty database");
  return split;
}

struct TupleShape {
  double d_pos = 8.0;
  double d_neg = 16.0;
  std::size_t n_pos = 2;
  std::size_t n_neg = 6;
  DistanceMode distance = DistanceMode::Euclidean3D;
};

/// Precomputes neighbourhoods once so many tuples can be drawn cheaply.
class TupleMiner {
 public:
  TupleMiner(const std::vector<SubmapFrame>& frames, const TupleShape& shape) : shape_(shape) {
    if (!(shape.d_pos < shape.d_neg)) throw Error(ErrorCode::BadConfig, "mine_tuples: d_pos must be < d_neg");
    std::vector<Pose> poses;
    poses.reserve(frames.size());
    for (const auto& f : frames) poses.push_back(f.pose);
    build(poses);
  }

  TupleMiner(const std::vector<Pose>& poses, const TupleShape& shape) : shape_(shape) {
    if (!(shape.d_pos < shape.d_neg)) throw Error(ErrorCode::BadConfig, "mine_tuples: d_pos must be < d_neg");
    build(poses);
  }

  const std::vector<std::size_t>& eligible_anchors() const { return anchors_; }

  TrainingTuple sample(Rng& rng) const {
    if (anchors_.empty()) throw Error(ErrorCode::InsufficientCandidates, "no anchor admits a full tuple");
    constexpr int kAttempts = 64;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      const std::size_t a = anchors_[rng.index(anchors_.size())];
      if (auto t = sample_for(a, rng)) return *t;
    }
    // Exhaustive fallback keeps the result deterministic when random draws keep failing.
    for (std::size_t a : anchors_)
      if (auto t = sample_for(a, rng)) return *t;
    throw Error(ErrorCode::InsufficientCandidates, "no anchor admits an extra negative far from its negatives");
  }

  /// One draw for a fixed anchor; empty when no extra negative fits.
  std::optional<TrainingTuple> sample_for(std::size_t a, Rng& rng) const {
    TrainingTuple t;
    t.anchor = a;
    t.positives = draw(positives_[a], shape_.n_pos, rng);
    t.negatives = draw(negatives_[a], shape_.n_neg, rng);
    std::vector<std::size_t> extra;
    for (std::size_t c : negatives_[a]) {
      bool far = std::find(t.negatives.begin(), t.negatives.end(), c) == t.negatives.end();
      for (std::size_t k : t.negatives)
        far = far && pose_distance(poses_[c], poses_[k], shape_.distance) > shape_.d_neg;
      if (far) extra.push_back(c);
    }
    if (extra.empty()) return std::nullopt;
    t.extra_negative = extra[rng.index(extra.size())];
    return t;
  }

 private:
  void build(const std::vector<Pose>& poses) {
    const std::size_t n = poses.size();
    poses_ = poses;
    positives_.assign(n, {});
    negatives_.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double d = pose_distance(poses[i], poses[j], shape_.distance);
        if (d <= shape_.d_pos) positives_[i].push_back(j);
        else if (d > shape_.d_neg) negatives_[i].push_back(j);
      }
      if (positives_[i].size() >= shape_.n_pos && negatives_[i].size() >= shape_.n_neg + 1) anchors_.push_back(i);
    }
  }

  static std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, std::size_t k, Rng& rng) {
    std::vector<std::size_t> copy = pool;
    // partial Fisher-Yates
    for (std::size_t i = 0; i < k; ++i) std::swap(copy[i], copy[i + rng.index(copy.size() - i)]);
    copy.resize(k);
    return copy;
  }

  TupleShape shape_;
  std::vector<Pose> poses_;
  std::vector<std::vector<std::size_t>> positives_, negatives_;
  std::vector<std::size_t> anchors_;
};

inline TrainingTuple mine_tuples(const std::vector<SubmapFrame>& frames, const TupleShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return TupleMiner(frames, shape).sample(rng);
}

}  // namespace spherevlad::ingest
