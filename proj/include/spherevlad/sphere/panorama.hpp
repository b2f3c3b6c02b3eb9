#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spherevlad/common/error.hpp"
#include "spherevlad/harmonic/signals.hpp"
#include "spherevlad/ingest/frame.hpp"
#include "spherevlad/io/npz.hpp"

namespace spherevlad::sphere {

/// Single-channel range image on the 2B x 2B equiangular grid, row-major
/// [alpha][beta]. Values are range / max_range in [0, 1]; 0 marks an empty cell.
struct SphericalPanorama {
  int bandwidth = 0;
  double max_range_m = 0.0;
  std::int64_t frame_id = 0;
  std::vector<float> values;

  SphericalPanorama() = default;
  SphericalPanorama(int b, double max_range, std::int64_t id = 0)
      : bandwidth(b), max_range_m(max_range), frame_id(id), values(harmonic::s2_grid_size(b), 0.0f) {}

  int side() const { return 2 * bandwidth; }
  float& at(int alpha, int beta) { return values[static_cast<std::size_t>(alpha) * side() + beta]; }
  float at(int alpha, int beta) const { return values[static_cast<std::size_t>(alpha) * side() + beta]; }

  template <typename T>
  harmonic::S2Signal<T> to_signal() const {
    harmonic::S2Signal<T> s(1, bandwidth);
    std::transform(values.begin(), values.end(), s.values.begin(), [](float v) { return static_cast<T>(v); });
    return s;
  }
};

struct SphericalCoords {
  double azimuth = 0;  // [0, 2 pi)
  double polar = 0;    // [0, pi], from +z
  double range = 0;
};

inline std::optional<SphericalCoords> try_spherical_coords(double x, double y, double z) {
  const double r = std::sqrt(x * x + y * y + z * z);
  if (r == 0.0) return std::nullopt;
  double alpha = std::atan2(y, x);
  if (alpha < 0) alpha += 2 * std::numbers::pi;
  if (alpha >= 2 * std::numbers::pi) alpha = 0.0;  // -0 and rounding at the seam
  return SphericalCoords{alpha, std::acos(std::clamp(z / r, -1.0, 1.0)), r};
}

inline SphericalCoords to_spherical_coords(double x, double y, double z) {
  auto c = try_spherical_coords(x, y, z);
  if (!c) throw Error(ErrorCode::OriginPoint, "point at the sensor origin has no direction");
  return *c;
}

/// Sensor axis convention of the input cloud. The projection expects z up.
enum class UpAxis { Z, Y };

struct ProjectOptions {
  double max_range_m = 50.0;
  int bandwidth = 32;
  UpAxis up = UpAxis::Z;
};

/// Cell (floor(alpha / (pi/B)), floor(beta / (pi/2B))) keeps the nearest
/// return; ranges beyond max_range and origin points are discarded.
inline SphericalPanorama project(const ingest::SubmapFrame& frame, const ProjectOptions& opt = {}) {
  if (opt.bandwidth < 2) throw Error(ErrorCode::BadConfig, "project: bandwidth must be >= 2");
  if (!(opt.max_range_m > 0)) throw Error(ErrorCode::BadConfig, "project: max_range must be positive");
  SphericalPanorama pano(opt.bandwidth, opt.max_range_m, frame.frame_id);
  const int n = pano.side();
  const double alpha_step = 2 * std::numbers::pi / n;
  const double beta_step = std::numbers::pi / n;
  std::vector<double> nearest(pano.values.size(), std::numeric_limits<double>::infinity());
  for (const auto& p : frame.points) {
    double x = p.x(), y = p.y(), z = p.z();
    if (opt.up == UpAxis::Y) {  // x right, y up, z backward -> x forward, y left, z up
      const double fx = -z, fy = -x, fz = y;
      x = fx, y = fy, z = fz;
    }
    const auto c = try_spherical_coords(x, y, z);
    if (!c || !(c->range <= opt.max_range_m)) continue;
    const int ia = std::min(static_cast<int>(c->azimuth / alpha_step), n - 1);
    const int ib = std::min(static_cast<int>(c->polar / beta_step), n - 1);
    double& cell = nearest[static_cast<std::size_t>(ia) * n + ib];
    cell = std::min(cell, c->range);
  }
  for (std::size_t i = 0; i < nearest.size(); ++i)
    if (std::isfinite(nearest[i])) pano.values[i] = static_cast<float>(nearest[i] / opt.max_range_m);
  return pano;
}

inline SphericalPanorama project(const ingest::SubmapFrame& frame, double max_range_m, int bandwidth) {
  return project(frame, ProjectOptions{max_range_m, bandwidth, UpAxis::Z});
}

/// Circular azimuth shift: new[(a + steps) mod 2B] = old[a]. Equals projecting
/// the cloud yawed by steps * 2 pi / 2B.
inline SphericalPanorama rotate_panorama_yaw(const SphericalPanorama& pano, int steps) {
  SphericalPanorama out = pano;
  const int n = pano.side();
  const int shift = ((steps % n) + n) % n;
  for (int a = 0; a < n; ++a)
    std::copy_n(pano.values.begin() + static_cast<std::ptrdiff_t>(a) * n, n,
                out.values.begin() + static_cast<std::ptrdiff_t>((a + shift) % n) * n);
  return out;
}

/// Yaws every point about the sensor z axis.
inline ingest::SubmapFrame rotate_points_yaw(const ingest::SubmapFrame& frame, double yaw) {
  ingest::SubmapFrame out = frame;
  const Eigen::Matrix3f r = rotation_z(yaw).cast<float>();
  for (auto& p : out.points) p = r * p;
  return out;
}

/// Raw little-endian float32 grid at `path` plus `path`.json with
/// {bandwidth, max_range_m, frame_id}.
inline void save_panorama(const std::filesystem::path& path, const SphericalPanorama& pano) {
  std::string bytes(pano.values.size() * sizeof(float), '\0');
  std::memcpy(bytes.data(), pano.values.data(), bytes.size());
  io::detail::write_file(path, bytes);
  const nlohmann::json sidecar = {
      {"bandwidth", pano.bandwidth}, {"max_range_m", pano.max_range_m}, {"frame_id", pano.frame_id}};
  io::detail::write_file(path.string() + ".json", sidecar.dump(2) + "\n");
}

inline SphericalPanorama load_panorama(const std::filesystem::path& path) {
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(io::detail::read_file(path.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, path.string() + ".json: " + e.what());
  }
  SphericalPanorama pano(sidecar.at("bandwidth").get<int>(), sidecar.at("max_range_m").get<double>(),
                         sidecar.value("frame_id", std::int64_t{0}));
  const std::string bytes = io::detail::read_file(path);
  if (bytes.size() != pano.values.size() * sizeof(float))
    throw Error(ErrorCode::BadGridShape, path.string() + ": grid size does not match bandwidth");
  std::memcpy(pano.values.data(), bytes.data(), bytes.size());
  return pano;
}

}  // namespace spherevlad::sphere
