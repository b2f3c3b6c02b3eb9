#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#include "spherevlad/common/geometry.hpp"

namespace spherevlad::ingest {

using Point = Eigen::Vector3f;

/// One accumulated submap: points in the sensor frame plus its world pose.
struct SubmapFrame {
  std::int64_t frame_id = 0;
  int trajectory_id = 0;
  std::vector<Point> points;
  Pose pose;
  std::optional<double> timestamp;
};

/// Indices into the frame list a tuple was mined from.
struct TrainingTuple {
  std::size_t anchor = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  std::size_t extra_negative = 0;
};

struct SplitSpec {
  std::vector<std::int64_t> database_ids;
  std::vector<std::int64_t> query_ids;
  double success_threshold_m = 5.0;
};

enum class DistanceMode { Euclidean3D, Planar };

inline double pose_distance(const Pose& a, const Pose& b, DistanceMode mode = DistanceMode::Euclidean3D) {
  Vec3 d = a.translation - b.translation;
  if (mode == DistanceMode::Planar) d.z() = 0.0;
  return d.norm();
}

}  // namespace spherevlad::ingest
