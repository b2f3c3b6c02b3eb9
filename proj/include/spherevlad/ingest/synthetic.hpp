#pragma once

// Seeded synthetic worlds for desk-scale experiments: a ground plane with
// boxes, poles and walls, a rectangular route driven once to build a map and
// then revisited (laterally offset, optionally in reverse), and a ray-cast
// scan per pose.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spherevlad/common/error.hpp"
#include "spherevlad/common/random.hpp"
#include "spherevlad/ingest/formats.hpp"
#include "spherevlad/ingest/frame.hpp"

namespace spherevlad::ingest {

struct RevisitPass {
  double lateral_offset_m = 0.0;  // along the forward route's left normal
  bool reversed = false;
  double phase_m = 0.0;           // arc length of the first frame
  double step_m = 4.0;
  double heading_jitter_deg = 0.0;
};

struct TrajectorySpec {
  double loop_width_m = 120.0;
  double loop_height_m = 80.0;
  double step_m = 2.0;
  std::vector<RevisitPass> revisits = {{1.0, false, 1.0, 4.0, 0.0}, {-1.0, true, 3.0, 4.0, 0.0}};
};

struct SyntheticParams {
  double area_m = 200.0;
  int n_landmarks = 300;
  TrajectorySpec traj;
  double max_range_m = 50.0;
  double sensor_height_m = 1.8;
  int rays_azimuth = 192;
  int rays_elevation = 64;
  double elevation_min_deg = -45.0;
  double elevation_max_deg = 30.0;
  double range_noise_m = 0.02;
  double road_clearance_m = 3.0;
};

inline void to_json(nlohmann::json& j, const RevisitPass& p) {
  j = {{"lateral_offset_m", p.lateral_offset_m}, {"reversed", p.reversed}, {"phase_m", p.phase_m},
       {"step_m", p.step_m}, {"heading_jitter_deg", p.heading_jitter_deg}};
}

inline void from_json(const nlohmann::json& j, RevisitPass& p) {
  p.lateral_offset_m = j.value("lateral_offset_m", p.lateral_offset_m);
  p.reversed = j.value("reversed", p.reversed);
  p.phase_m = j.value("phase_m", p.phase_m);
  p.step_m = j.value("step_m", p.step_m);
  p.heading_jitter_deg = j.value("heading_jitter_deg", p.heading_jitter_deg);
}

inline void to_json(nlohmann::json& j, const TrajectorySpec& t) {
  j = {{"loop_width_m", t.loop_width_m}, {"loop_height_m", t.loop_height_m}, {"step_m", t.step_m},
       {"revisits", t.revisits}};
}

inline void from_json(const nlohmann::json& j, TrajectorySpec& t) {
  t.loop_width_m = j.value("loop_width_m", t.loop_width_m);
  t.loop_height_m = j.value("loop_height_m", t.loop_height_m);
  t.step_m = j.value("step_m", t.step_m);
  if (j.contains("revisits")) t.revisits = j.at("revisits").get<std::vector<RevisitPass>>();
}

inline void to_json(nlohmann::json& j, const SyntheticParams& p) {
  j = {{"area_m", p.area_m},
       {"n_landmarks", p.n_landmarks},
       {"traj_spec", p.traj},
       {"max_range_m", p.max_range_m},
       {"sensor_height_m", p.sensor_height_m},
       {"rays_azimuth", p.rays_azimuth},
       {"rays_elevation", p.rays_elevation},
       {"elevation_min_deg", p.elevation_min_deg},
       {"elevation_max_deg", p.elevation_max_deg},
       {"range_noise_m", p.range_noise_m},
       {"road_clearance_m", p.road_clearance_m}};
}

inline void from_json(const nlohmann::json& j, SyntheticParams& p) {
  static const std::vector<std::string> known = {
      "area_m",        "n_landmarks",       "traj_spec",         "max_range_m",   "sensor_height_m", "rays_azimuth",
      "rays_elevation", "elevation_min_deg", "elevation_max_deg", "range_noise_m", "road_clearance_m"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(ErrorCode::BadConfig, "unknown synthetic parameter '" + key + "'");
  p.area_m = j.value("area_m", p.area_m);
  p.n_landmarks = j.value("n_landmarks", p.n_landmarks);
  if (j.contains("traj_spec")) p.traj = j.at("traj_spec").get<TrajectorySpec>();
  p.max_range_m = j.value("max_range_m", p.max_range_m);
  p.sensor_height_m = j.value("sensor_height_m", p.sensor_height_m);
  p.rays_azimuth = j.value("rays_azimuth", p.rays_azimuth);
  p.rays_elevation = j.value("rays_elevation", p.rays_elevation);
  p.elevation_min_deg = j.value("elevation_min_deg", p.elevation_min_deg);
  p.elevation_max_deg = j.value("elevation_max_deg", p.elevation_max_deg);
  p.range_noise_m = j.value("range_noise_m", p.range_noise_m);
  p.road_clearance_m = j.value("road_clearance_m", p.road_clearance_m);
}

enum class ShapeKind { Box, Cylinder };

/// Boxes (buildings, walls) are yawed footprints extruded from the ground;
/// cylinders are upright poles and trunks.
struct Landmark {
  ShapeKind kind = ShapeKind::Box;
  double cx = 0, cy = 0;
  double half_x = 1, half_y = 1;  // box half extents, or radius in half_x
  double yaw = 0;
  double height = 1;

  double footprint_radius() const {
    return kind == ShapeKind::Box ? std::hypot(half_x, half_y) : half_x;
  }
};

struct RoutePoint {
  double x = 0, y = 0, heading = 0;
};

/// Counter-clockwise rectangle centred on the origin, starting at the
/// lower-left corner heading +x.
class LoopRoute {
 public:
  LoopRoute(double width, double height) : w_(width), h_(height) {}

  double perimeter() const { return 2 * (w_ + h_); }

  RoutePoint at(double s) const {
    const double p = perimeter();
    s = std::fmod(s, p);
    if (s < 0) s += p;
    const double x0 = -w_ / 2, y0 = -h_ / 2;
    if (s < w_) return {x0 + s, y0, 0.0};
    s -= w_;
    if (s < h_) return {-x0, y0 + s, std::numbers::pi / 2};
    s -= h_;
    if (s < w_) return {-x0 - s, -y0, std::numbers::pi};
    s -= w_;
    return {x0, -y0 - s, 3 * std::numbers::pi / 2};
  }

  /// Distance from (x, y) to the route centreline.
  double distance(double x, double y) const {
    const double ax = std::abs(x), ay = std::abs(y);
    const double hx = w_ / 2, hy = h_ / 2;
    const double dx_edge = std::abs(ax - hx), dy_edge = std::abs(ay - hy);
    const double to_vertical = ay <= hy ? dx_edge : std::hypot(dx_edge, ay - hy);
    const double to_horizontal = ax <= hx ? dy_edge : std::hypot(ax - hx, dy_edge);
    return std::min(to_vertical, to_horizontal);
  }

 private:
  double w_, h_;
};

namespace detail {

constexpr double kNoHit = std::numeric_limits<double>::infinity();

inline double intersect_box(const Landmark& b, const Vec3& o, const Vec3& d) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double ox = o.x() - b.cx, oy = o.y() - b.cy;
  const double lo[3] = {c * ox + s * oy, -s * ox + c * oy, o.z()};
  const double ld[3] = {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
  const double mins[3] = {-b.half_x, -b.half_y, 0.0};
  const double maxs[3] = {b.half_x, b.half_y, b.height};
  double t0 = 0.0, t1 = kNoHit;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld[a]) < 1e-12) {
      if (lo[a] < mins[a] || lo[a] > maxs[a]) return kNoHit;
      continue;
    }
    double ta = (mins[a] - lo[a]) / ld[a], tb = (maxs[a] - lo[a]) / ld[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return kNoHit;
  }
  return t0 > 0 ? t0 : kNoHit;
}

inline double intersect_cylinder(const Landmark& cyl, const Vec3& o, const Vec3& d) {
  const double r = cyl.half_x;
  const double ox = o.x() - cyl.cx, oy = o.y() - cyl.cy;
  double best = kNoHit;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-12) {
    const double b = 2 * (ox * d.x() + oy * d.y());
    const double c = ox * ox + oy * oy - r * r;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      const double z = o.z() + t * d.z();
      if (t > 0 && z >= 0 && z <= cyl.height) best = t;
    }
  }
  if (std::abs(d.z()) > 1e-12) {  // top cap
    const double t = (cyl.height - o.z()) / d.z();
    const double x = ox + t * d.x(), y = oy + t * d.y();
    if (t > 0 && x * x + y * y <= r * r) best = std::min(best, t);
  }
  return best;
}

}  // namespace detail

struct SyntheticWorld {
  SyntheticParams params;
  std::vector<Landmark> landmarks;
};

/// Forces parameters into a workable range, reporting each adjustment.
inline SyntheticParams clamp_params(SyntheticParams p, std::ostream* warnings = &std::cerr) {
  auto warn = [&](const std::string& msg) {
    if (warnings) *warnings << "synthetic: " << msg << '\n';
  };
  if (p.n_landmarks < 1) {
    warn("n_landmarks " + std::to_string(p.n_landmarks) + " raised to 1");
    p.n_landmarks = 1;
  }
  const double min_area = std::max(p.traj.loop_width_m, p.traj.loop_height_m) + 4 * p.road_clearance_m + 10.0;
  if (p.area_m < min_area) {
    warn("area_m raised to " + std::to_string(min_area) + " to contain the route");
    p.area_m = min_area;
  }
  if (p.traj.step_m <= 0) {
    warn("trajectory step raised to 1 m");
    p.traj.step_m = 1.0;
  }
  for (auto& r : p.traj.revisits)
    if (r.step_m <= 0) {
      warn("revisit step raised to 1 m");
      r.step_m = 1.0;
    }
  if (p.traj.revisits.empty()) {
    warn("no revisit pass given; adding a forward pass at 1 m lateral offset");
    p.traj.revisits.push_back({1.0, false, p.traj.step_m / 2, p.traj.step_m * 2, 0.0});
  }
  p.rays_azimuth = std::max(p.rays_azimuth, 8);
  p.rays_elevation = std::max(p.rays_elevation, 2);
  if (p.max_range_m <= 0) p.max_range_m = 50.0;
  if (p.range_noise_m < 0) p.range_noise_m = 0.0;
  return p;
}

inline SyntheticWorld make_world(std::uint64_t seed, const SyntheticParams& params) {
  SyntheticWorld world{params, {}};
  Rng rng(seed);
  const LoopRoute route(params.traj.loop_width_m, params.traj.loop_height_m);
  const double half = params.area_m / 2;
  for (int i = 0; i < params.n_landmarks; ++i) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Landmark lm;
      const double kind = rng.uniform();
      lm.cx = rng.uniform(-half, half);
      lm.cy = rng.uniform(-half, half);
      lm.yaw = rng.uniform(0.0, std::numbers::pi);
      if (kind < 0.5) {
        lm.kind = ShapeKind::Box;
        lm.half_x = rng.uniform(1.5, 6.0);
        lm.half_y = rng.uniform(1.5, 6.0);
        lm.height = rng.uniform(3.0, 20.0);
      } else if (kind < 0.8) {
        lm.kind = ShapeKind::Cylinder;
        lm.half_x = rng.uniform(0.2, 1.2);
        lm.height = rng.uniform(2.0, 10.0);
      } else {
        lm.kind = ShapeKind::Box;
        lm.half_x = rng.uniform(3.0, 12.0);
        lm.half_y = rng.uniform(0.15, 0.3);
        lm.height = rng.uniform(1.5, 4.0);
      }
      if (route.distance(lm.cx, lm.cy) > lm.footprint_radius() + params.road_clearance_m) {
        world.landmarks.push_back(lm);
        break;
      }
    }
  }
  if (world.landmarks.empty()) {
    // Keep at least one landmark even if every placement collided with the route.
    world.landmarks.push_back({ShapeKind::Cylinder, half - 1.0, half - 1.0, 0.5, 0.5, 0.0, 5.0});
  }
  return world;
}

/// Ray-casts one scan from a sensor pose; points are returned in the sensor
/// frame. Rays sit at half-step offsets so none falls exactly on an
/// equiangular panorama cell boundary.
inline std::vector<Point> cast_scan(const SyntheticWorld& world, const Pose& pose, Rng& rng) {
  const auto& p = world.params;
  const Vec3 origin = pose.translation;
  std::vector<const Landmark*> near;
  for (const auto& lm : world.landmarks)
    if (std::hypot(lm.cx - origin.x(), lm.cy - origin.y()) <= p.max_range_m + lm.footprint_radius())
      near.push_back(&lm);

  const double el0 = p.elevation_min_deg * std::numbers::pi / 180, el1 = p.elevation_max_deg * std::numbers::pi / 180;
  std::vector<Point> points;
  points.reserve(static_cast<std::size_t>(p.rays_azimuth) * p.rays_elevation);
  for (int ia = 0; ia < p.rays_azimuth; ++ia) {
    const double az = 2 * std::numbers::pi * (ia + 0.5) / p.rays_azimuth;
    for (int ie = 0; ie < p.rays_elevation; ++ie) {
      const double el = el0 + (el1 - el0) * (ie + 0.5) / p.rays_elevation;
      const Vec3 local(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const Vec3 dir = pose.rotation * local;
      double t = dir.z() < -1e-12 ? -origin.z() / dir.z() : detail::kNoHit;
      for (const Landmark* lm : near)
        t = std::min(t, lm->kind == ShapeKind::Box ? detail::intersect_box(*lm, origin, dir)
                                                   : detail::intersect_cylinder(*lm, origin, dir));
      if (!(t <= p.max_range_m)) continue;
      const double noise = p.range_noise_m > 0 ? rng.normal(0.0, p.range_noise_m) : 0.0;
      const double r = std::max(t + noise, 1e-3);
      points.emplace_back((r * local).cast<float>());
    }
  }
  return points;
}

inline Pose sensor_pose(double x, double y, double heading, double height) {
  Pose pose;
  pose.rotation = rotation_z(heading);
  pose.translation = Vec3(x, y, height);
  return pose;
}

/// The full pose schedule: trajectory 0 is the mapping pass, trajectories
/// 1..n the revisit passes in order.
inline std::vector<std::pair<int, Pose>> route_poses(const SyntheticParams& p, Rng& rng) {
  const LoopRoute route(p.traj.loop_width_m, p.traj.loop_height_m);
  const double perimeter = route.perimeter();
  std::vector<std::pair<int, Pose>> out;
  for (double s = 0.0; s < perimeter - 1e-9; s += p.traj.step_m) {
    const auto rp = route.at(s);
    out.emplace_back(0, sensor_pose(rp.x, rp.y, rp.heading, p.sensor_height_m));
  }
  for (std::size_t pass = 0; pass < p.traj.revisits.size(); ++pass) {
    const auto& r = p.traj.revisits[pass];
    std::vector<double> arcs;
    for (double s = r.phase_m; s < r.phase_m + perimeter - 1e-9; s += r.step_m) arcs.push_back(s);
    if (r.reversed) std::reverse(arcs.begin(), arcs.end());
    for (double s : arcs) {
      const auto rp = route.at(s);
      const double nx = -std::sin(rp.heading), ny = std::cos(rp.heading);
      double heading = rp.heading + (r.reversed ? std::numbers::pi : 0.0);
      if (r.heading_jitter_deg > 0) heading += rng.uniform(-1.0, 1.0) * r.heading_jitter_deg * std::numbers::pi / 180;
      out.emplace_back(static_cast<int>(pass + 1), sensor_pose(rp.x + r.lateral_offset_m * nx,
                                                               rp.y + r.lateral_offset_m * ny, heading,
                                                               p.sensor_height_m));
    }
  }
  return out;
}

/// Pure function of (seed, params): identical inputs give bit-identical frames.
inline std::vector<SubmapFrame> make_synthetic_world(std::uint64_t seed, const SyntheticParams& raw_params,
                                                     std::ostream* warnings = &std::cerr) {
  const SyntheticParams params = clamp_params(raw_params, warnings);
  const SyntheticWorld world = make_world(seed, params);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto schedule = route_poses(params, rng);
  std::vector<SubmapFrame> frames;
  frames.reserve(schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    SubmapFrame f;
    f.frame_id = static_cast<std::int64_t>(i);
    f.trajectory_id = schedule[i].first;
    f.pose = schedule[i].second;
    f.timestamp = 0.1 * static_cast<double>(i);
    f.points = cast_scan(world, f.pose, rng);
    frames.push_back(std::move(f));
  }
  return frames;
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  std::size_t frame_count = 0;
};

inline std::string frame_file_name(std::int64_t id) {
  std::ostringstream name;
  name << std::setw(6) << std::setfill('0') << id << ".npz";
  return name.str();
}

/// Layout: manifest.json, poses.txt, frames/NNNNNN.npz.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<SubmapFrame>& frames,
                          const DatasetManifest& manifest) {
  std::filesystem::create_directories(dir / "frames");
  nlohmann::json j;
  j["seed"] = manifest.seed;
  j["params"] = manifest.params;
  j["frame_count"] = frames.size();
  j["frames"] = nlohmann::json::array();
  std::vector<Pose> poses;
  for (const auto& f : frames) {
    const std::string file = "frames/" + frame_file_name(f.frame_id);
    write_frame_npz(dir / file, f);
    j["frames"].push_back({{"file", file}, {"frame_id", f.frame_id}, {"trajectory_id", f.trajectory_id}});
    poses.push_back(f.pose);
  }
  save_poses(dir / "poses.txt", poses);
  io::detail::write_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.params = j.value("params", nlohmann::json::object());
  m.frame_count = j.value("frame_count", std::size_t{0});
  return m;
}

/// Reads a dataset directory. Frames are listed by the manifest when present,
/// otherwise every point file under frames/ is taken in name order with poses
/// from poses.txt.
inline std::vector<SubmapFrame> read_dataset(const std::filesystem::path& dir, std::size_t* dropped = nullptr) {
  std::vector<SubmapFrame> frames;
  std::size_t dropped_total = 0;
  if (std::filesystem::exists(dir / "manifest.json")) {
    const auto j = nlohmann::json::parse(io::detail::read_file(dir / "manifest.json"));
    for (const auto& entry : j.at("frames")) {
      auto r = load_submap(dir / entry.at("file").get<std::string>(), PointFormat::Npz);
      dropped_total += r.dropped_nonfinite;
      frames.push_back(std::move(r.frame));
    }
  } else {
    if (!std::filesystem::is_directory(dir / "frames"))
      throw Error(ErrorCode::UnreadableFile, dir.string() + " has neither manifest.json nor frames/");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir / "frames"))
      if (e.is_regular_file() && format_from_extension(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Pose> poses;
    if (std::filesystem::exists(dir / "poses.txt")) poses = load_poses(dir / "poses.txt");
    for (std::size_t i = 0; i < files.size(); ++i) {
      LoadOptions opt;
      opt.frame_id = static_cast<std::int64_t>(i);
      if (i < poses.size()) opt.pose = poses[i];
      auto r = load_submap(files[i], *format_from_extension(files[i]), opt);
      dropped_total += r.dropped_nonfinite;
      frames.push_back(std::move(r.frame));
    }
  }
  if (dropped) *dropped = dropped_total;
  return frames;
}

}  // namespace spherevlad::ingest
