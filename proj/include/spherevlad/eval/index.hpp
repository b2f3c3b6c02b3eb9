#pragma once

// Exact descriptor index. Database rows are stored as float32 sorted by
// frame id; queries rank every row by Euclidean distance.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/common/geometry.hpp"
#include "spherevlad/ingest/frame.hpp"
#include "spherevlad/model/network.hpp"

namespace spherevlad::eval {

using model::GlobalDescriptor;

struct IndexEntry {
  std::int64_t frame_id = 0;
  Pose pose;
};

struct Match {
  std::int64_t db_id = 0;
  double distance = 0;
  double pose_distance = std::numeric_limits<double>::quiet_NaN();  // to the query's ground-truth pose
};

struct ThresholdFlag {
  double threshold_m = 0;
  bool success = false;  // top-1 within the threshold
};

struct RetrievalResult {
  std::int64_t query_id = 0;
  std::vector<Match> ranking;
  std::vector<ThresholdFlag> flags;

  /// 1-based rank of the first match within threshold_m, if any.
  std::optional<std::size_t> first_true_rank(double threshold_m) const {
    for (std::size_t r = 0; r < ranking.size(); ++r)
      if (ranking[r].pose_distance <= threshold_m) return r + 1;
    return std::nullopt;
  }
};

class DescriptorIndex {
 public:
  static constexpr char kMagic[4] = {'S', 'V', 'I', 'X'};
  static constexpr std::uint32_t kVersion = 1;

  DescriptorIndex() = default;

  std::size_t size() const { return entries_.size(); }
  std::size_t dimension() const { return dim_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

  /// Exact ranking of the whole database, ties by ascending id, truncated to
  /// top_n (0 keeps every entry).
  RetrievalResult query(std::span<const double> g, std::size_t top_n = 0, std::int64_t query_id = 0,
                        const std::optional<Pose>& query_pose = std::nullopt,
                        std::span<const double> thresholds = {},
                        ingest::DistanceMode mode = ingest::DistanceMode::Euclidean3D) const {
    if (g.size() != dim_)
      throw Error(ErrorCode::DimensionMismatch, "query has dimension " + std::to_string(g.size()) + ", index has " +
                                                    std::to_string(dim_));
    std::vector<Match> all(size());
    for (std::size_t i = 0; i < size(); ++i) {
      const auto r = row(i);
      double d2 = 0;
      for (std::size_t k = 0; k < dim_; ++k) {
        const double d = g[k] - static_cast<double>(r[k]);
        d2 += d * d;
      }
      all[i].db_id = entries_[i].frame_id;
      all[i].distance = std::sqrt(d2);
      if (query_pose) all[i].pose_distance = ingest::pose_distance(*query_pose, entries_[i].pose, mode);
    }
    const std::size_t n = top_n == 0 ? all.size() : std::min(top_n, all.size());
    auto by_distance = [](const Match& a, const Match& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.db_id < b.db_id);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), by_distance);
    all.resize(n);
    RetrievalResult out{query_id, std::move(all), {}};
    for (double t : thresholds)
      out.flags.push_back({t, !out.ranking.empty() && out.ranking.front().pose_distance <= t});
    return out;
  }

  RetrievalResult query(const GlobalDescriptor& g, std::size_t top_n = 0,
                        const std::optional<Pose>& query_pose = std::nullopt,
                        std::span<const double> thresholds = {}) const {
    return query(g.values, top_n, g.frame_id, query_pose, thresholds);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write index " + path.string());
    const std::uint64_t m = size(), d = dim_;
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, m);
    put(out, d);
    out.write(reinterpret_cast<const char*>(values_.data()), static_cast<std::streamsize>(values_.size() * sizeof(float)));
    for (const auto& e : entries_) {
      put(out, e.frame_id);
      for (double v : e.pose.to_row_major()) put(out, v);
    }
    if (!out) throw Error(ErrorCode::UnreadableFile, "failed writing index " + path.string());
  }

  static DescriptorIndex load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open index " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
      throw Error(ErrorCode::MalformedRecord, path.string() + ": not a descriptor index");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion)
      throw Error(ErrorCode::MalformedRecord, path.string() + ": unsupported index version " + std::to_string(version));
    const auto m = get<std::uint64_t>(in, path), d = get<std::uint64_t>(in, path);
    if (m == 0) throw Error(ErrorCode::EmptyDatabase, path.string() + ": empty index");
    DescriptorIndex idx;
    idx.dim_ = static_cast<std::size_t>(d);
    idx.values_.resize(static_cast<std::size_t>(m * d));
    in.read(reinterpret_cast<char*>(idx.values_.data()), static_cast<std::streamsize>(idx.values_.size() * sizeof(float)));
    idx.entries_.resize(static_cast<std::size_t>(m));
    for (auto& e : idx.entries_) {
      e.frame_id = get<std::int64_t>(in, path);
      std::array<double, 12> p;
      for (auto& v : p) v = get<double>(in, path);
      e.pose = Pose::from_row_major(p);
    }
    return idx;
  }

  friend DescriptorIndex build_index(std::span<const GlobalDescriptor>, std::span<const Pose>);

 private:
  std::size_t dim_ = 0;
  std::vector<float> values_;
  std::vector<IndexEntry> entries_;

  template <typename V>
  static void put(std::ostream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  template <typename V>
  static V get(std::istream& in, const std::filesystem::path& path) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw Error(ErrorCode::MalformedRecord, path.string() + ": truncated index");
    return v;
  }
};

/// Builds an exact index; rows are ordered by frame id (stable for equal ids).
inline DescriptorIndex build_index(std::span<const GlobalDescriptor> descriptors, std::span<const Pose> poses) {
  if (descriptors.empty()) throw Error(ErrorCode::EmptyDatabase, "build_index: no descriptors");
  if (poses.size() != descriptors.size())
    throw Error(ErrorCode::DimensionMismatch, "build_index: one pose per descriptor required");
  const std::size_t dim = descriptors.front().values.size();
  for (const auto& g : descriptors)
    if (g.values.size() != dim) throw Error(ErrorCode::DimensionMismatch, "build_index: descriptors differ in dimension");
  std::vector<std::size_t> order(descriptors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return descriptors[a].frame_id < descriptors[b].frame_id; });
  DescriptorIndex idx;
  idx.dim_ = dim;
  idx.values_.reserve(descriptors.size() * dim);
  for (std::size_t i : order) {
    for (double v : descriptors[i].values) idx.values_.push_back(static_cast<float>(v));
    idx.entries_.push_back({descriptors[i].frame_id, poses[i]});
  }
  return idx;
}

}  // namespace spherevlad::eval
