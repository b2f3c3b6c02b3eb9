#pragma once

// Point-cloud readers and writers: KITTI .bin, PLY (ascii / binary LE),
// PCD (ascii / binary) and the npz archive, plus KITTI pose files.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spherevlad/common/error.hpp"
#include "spherevlad/ingest/frame.hpp"
#include "spherevlad/io/npz.hpp"

namespace spherevlad::ingest {

enum class PointFormat { KittiBin, Ply, Pcd, Npz };

inline PointFormat parse_point_format(const std::string& name) {
  if (name == "kitti_bin" || name == "bin") return PointFormat::KittiBin;
  if (name == "ply") return PointFormat::Ply;
  if (name == "pcd") return PointFormat::Pcd;
  if (name == "npz") return PointFormat::Npz;
  throw Error(ErrorCode::BadConfig, "unknown point format '" + name + "'");
}

inline std::optional<PointFormat> format_from_extension(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".bin") return PointFormat::KittiBin;
  if (ext == ".ply") return PointFormat::Ply;
  if (ext == ".pcd") return PointFormat::Pcd;
  if (ext == ".npz") return PointFormat::Npz;
  return std::nullopt;
}

struct LoadOptions {
  std::optional<Pose> pose;  // from a sidecar poses file; npz archives may carry their own
  std::int64_t frame_id = 0;
  int trajectory_id = 0;
};

struct LoadResult {
  SubmapFrame frame;
  std::size_t dropped_nonfinite = 0;
};

namespace detail {

struct ScalarField {
  std::string name;
  char kind = 'F';  // F float, I signed, U unsigned
  int size = 4;
  int count = 1;
};

inline double read_scalar(const char* p, const ScalarField& f) {
  switch (f.kind) {
    case 'F':
      if (f.size == 4) { float v; std::memcpy(&v, p, 4); return v; }
      if (f.size == 8) { double v; std::memcpy(&v, p, 8); return v; }
      break;
    case 'I':
      if (f.size == 1) return static_cast<double>(static_cast<std::int8_t>(*p));
      if (f.size == 2) { std::int16_t v; std::memcpy(&v, p, 2); return v; }
      if (f.size == 4) { std::int32_t v; std::memcpy(&v, p, 4); return v; }
      if (f.size == 8) { std::int64_t v; std::memcpy(&v, p, 8); return static_cast<double>(v); }
      break;
    case 'U':
      if (f.size == 1) return static_cast<unsigned char>(*p);
      if (f.size == 2) { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
      if (f.size == 4) { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
      if (f.size == 8) { std::uint64_t v; std::memcpy(&v, p, 8); return static_cast<double>(v); }
      break;
  }
  throw Error(ErrorCode::MalformedRecord, "unsupported field type for " + f.name);
}

inline ScalarField ply_field(const std::string& type, const std::string& name) {
  static const std::map<std::string, std::pair<char, int>> types = {
      {"char", {'I', 1}},  {"int8", {'I', 1}},    {"uchar", {'U', 1}},  {"uint8", {'U', 1}},
      {"short", {'I', 2}}, {"int16", {'I', 2}},   {"ushort", {'U', 2}}, {"uint16", {'U', 2}},
      {"int", {'I', 4}},   {"int32", {'I', 4}},   {"uint", {'U', 4}},   {"uint32", {'U', 4}},
      {"float", {'F', 4}}, {"float32", {'F', 4}}, {"double", {'F', 8}}, {"float64", {'F', 8}}};
  auto it = types.find(type);
  if (it == types.end()) throw Error(ErrorCode::MalformedRecord, "unknown PLY type " + type);
  return {name, it->second.first, it->second.second, 1};
}

struct XyzLayout {
  int x = -1, y = -1, z = -1;

  void locate(const std::vector<ScalarField>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].name == "x") x = static_cast<int>(i);
      if (fields[i].name == "y") y = static_cast<int>(i);
      if (fields[i].name == "z") z = static_cast<int>(i);
    }
    if (x < 0 || y < 0 || z < 0) throw Error(ErrorCode::MalformedRecord, "x, y, z fields are mandatory");
  }
};

/// Reads `count` interleaved binary records into points.
inline void read_binary_records(const std::string& bytes, std::size_t offset, std::size_t count,
                                const std::vector<ScalarField>& fields, std::vector<Point>& points) {
  std::vector<std::size_t> field_offset(fields.size());
  std::size_t stride = 0;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    field_offset[i] = stride;
    stride += static_cast<std::size_t>(fields[i].size) * fields[i].count;
  }
  if (offset + count * stride > bytes.size())
    throw Error(ErrorCode::MalformedRecord, "binary body shorter than declared point count");
  XyzLayout xyz;
  xyz.locate(fields);
  points.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const char* rec = bytes.data() + offset + r * stride;
    points.emplace_back(static_cast<float>(read_scalar(rec + field_offset[xyz.x], fields[xyz.x])),
                        static_cast<float>(read_scalar(rec + field_offset[xyz.y], fields[xyz.y])),
                        static_cast<float>(read_scalar(rec + field_offset[xyz.z], fields[xyz.z])));
  }
}

inline void read_ascii_records(std::istream& in, std::size_t count, const std::vector<ScalarField>& fields,
                               std::vector<Point>& points) {
  XyzLayout xyz;
  xyz.locate(fields);
  std::size_t columns = 0;
  for (const auto& f : fields) columns += f.count;
  std::vector<double> row(columns);
  std::string line;
  points.reserve(count);
  while (points.size() < count && std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    for (std::size_t c = 0; c < columns; ++c) {
      std::string token;
      if (!(ls >> token)) throw Error(ErrorCode::MalformedRecord, "short ASCII point record");
      row[c] = std::strtod(token.c_str(), nullptr);  // accepts nan / inf
    }
    points.emplace_back(static_cast<float>(row[xyz.x]), static_cast<float>(row[xyz.y]),
                        static_cast<float>(row[xyz.z]));
  }
  if (points.size() < count) throw Error(ErrorCode::MalformedRecord, "ASCII body has fewer points than declared");
}

}  // namespace detail

inline std::vector<Point> read_kitti_bin(const std::filesystem::path& path) {
  const std::string bytes = io::detail::read_file(path);
  constexpr std::size_t record = 4 * sizeof(float);
  if (bytes.size() % record != 0)
    throw Error(ErrorCode::MalformedRecord, path.string() + ": length " + std::to_string(bytes.size()) +
                                                " is not a multiple of the 16-byte point record");
  std::vector<Point> points(bytes.size() / record);
  for (std::size_t i = 0; i < points.size(); ++i) {
    float v[4];
    std::memcpy(v, bytes.data() + i * record, record);
    points[i] = Point(v[0], v[1], v[2]);
  }
  return points;
}

inline void write_kitti_bin(const std::filesystem::path& path, const std::vector<Point>& points) {
  std::string bytes;
  bytes.reserve(points.size() * 16);
  for (const auto& p : points) {
    const float v[4] = {p.x(), p.y(), p.z(), 0.0f};
    bytes.append(reinterpret_cast<const char*>(v), sizeof(v));
  }
  io::detail::write_file(path, bytes);
}

inline std::vector<Point> read_ply(const std::filesystem::path& path) {
  const std::string bytes = io::detail::read_file(path);
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw Error(ErrorCode::MalformedRecord, "not a PLY file");

  std::string format;
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<detail::ScalarField> fields;
    bool has_list = false;
  };
  std::vector<Element> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") ls >> format;
    else if (key == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty()) throw Error(ErrorCode::MalformedRecord, "PLY property before element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        elements.back().has_list = true;
        continue;
      }
      ls >> name;
      elements.back().fields.push_back(detail::ply_field(type, name));
    } else if (key == "end_header") break;
  }
  if (format.empty()) throw Error(ErrorCode::MalformedRecord, "PLY header lacks format");

  std::vector<Point> points;
  std::size_t offset = static_cast<std::size_t>(in.tellg());
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      if (format != "ascii" && e.count > 0)
        throw Error(ErrorCode::MalformedRecord, "binary PLY with elements before vertex is not supported");
      for (std::size_t i = 0; i < e.count; ++i) std::getline(in, line);
      continue;
    }
    if (e.has_list) throw Error(ErrorCode::MalformedRecord, "list properties on vertices are not supported");
    if (format == "ascii") detail::read_ascii_records(in, e.count, e.fields, points);
    else if (format == "binary_little_endian") detail::read_binary_records(bytes, offset, e.count, e.fields, points);
    else throw Error(ErrorCode::MalformedRecord, "unsupported PLY format " + format);
    return points;
  }
  throw Error(ErrorCode::MalformedRecord, "PLY has no vertex element");
}

inline void write_ply(const std::filesystem::path& path, const std::vector<Point>& points, bool binary) {
  std::ostringstream out;
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << points.size() << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  if (binary) {
    for (const auto& p : points) out.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(float));
  } else {
    out << std::setprecision(9);
    for (const auto& p : points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
  io::detail::write_file(path, out.str());
}

inline std::vector<Point> read_pcd(const std::filesystem::path& path) {
  const std::string bytes = io::detail::read_file(path);
  std::istringstream in(bytes);
  std::vector<detail::ScalarField> fields;
  std::vector<std::string> sizes, types, counts;
  std::size_t n_points = 0;
  bool have_points = false;
  std::string data, line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, token;
    ls >> key;
    std::vector<std::string> rest;
    while (ls >> token) rest.push_back(token);
    if (key == "FIELDS") {
      for (const auto& name : rest) fields.push_back({name});
    } else if (key == "SIZE") sizes = rest;
    else if (key == "TYPE") types = rest;
    else if (key == "COUNT") counts = rest;
    else if (key == "POINTS" && !rest.empty()) {
      n_points = std::stoull(rest[0]);
      have_points = true;
    } else if (key == "WIDTH" && !have_points && !rest.empty()) n_points = std::stoull(rest[0]);
    else if (key == "DATA") {
      if (!rest.empty()) data = rest[0];
      break;
    }
  }
  if (fields.empty() || data.empty()) throw Error(ErrorCode::MalformedRecord, "incomplete PCD header");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i < sizes.size()) fields[i].size = std::stoi(sizes[i]);
    if (i < types.size()) fields[i].kind = types[i].empty() ? 'F' : types[i][0];
    if (i < counts.size()) fields[i].count = std::stoi(counts[i]);
  }
  std::vector<Point> points;
  if (data == "ascii") detail::read_ascii_records(in, n_points, fields, points);
  else if (data == "binary") detail::read_binary_records(bytes, static_cast<std::size_t>(in.tellg()), n_points, fields, points);
  else throw Error(ErrorCode::MalformedRecord, "unsupported PCD data mode " + data);
  return points;
}

inline void write_pcd(const std::filesystem::path& path, const std::vector<Point>& points, bool binary) {
  std::ostringstream out;
  out << "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\n"
      << "COUNT 1 1 1\nWIDTH " << points.size() << "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS " << points.size()
      << "\nDATA " << (binary ? "binary" : "ascii") << '\n';
  if (binary) {
    for (const auto& p : points) out.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(float));
  } else {
    out << std::setprecision(9);
    for (const auto& p : points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
  io::detail::write_file(path, out.str());
}

/// Frame archive members: points (N x 3), pose (3 x 4), and optionally
/// frame_id, trajectory_id, timestamp.
inline std::map<std::string, io::NpyArray> frame_to_arrays(const SubmapFrame& frame) {
  std::map<std::string, io::NpyArray> arrays;
  io::NpyArray pts{{frame.points.size(), 3}, {}, "<f4"};
  pts.data.reserve(frame.points.size() * 3);
  for (const auto& p : frame.points) pts.data.insert(pts.data.end(), {p.x(), p.y(), p.z()});
  arrays["points"] = std::move(pts);
  const auto rm = frame.pose.to_row_major();
  arrays["pose"] = io::NpyArray{{3, 4}, {rm.begin(), rm.end()}, "<f8"};
  arrays["frame_id"] = io::NpyArray{{}, {static_cast<double>(frame.frame_id)}, "<i8"};
  arrays["trajectory_id"] = io::NpyArray{{}, {static_cast<double>(frame.trajectory_id)}, "<i8"};
  if (frame.timestamp) arrays["timestamp"] = io::NpyArray{{}, {*frame.timestamp}, "<f8"};
  return arrays;
}

inline void write_frame_npz(const std::filesystem::path& path, const SubmapFrame& frame) {
  io::save_npz(path, frame_to_arrays(frame));
}

namespace detail {

inline std::size_t drop_nonfinite(std::vector<Point>& points) {
  const auto before = points.size();
  std::erase_if(points, [](const Point& p) { return !p.allFinite(); });
  return before - points.size();
}

}  // namespace detail

/// Loads one submap. Non-npz formats need the pose from options; npz archives
/// fall back to their own `pose` member.
inline LoadResult load_submap(const std::filesystem::path& path, PointFormat format, const LoadOptions& options = {}) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::UnreadableFile, "no such file " + path.string());
  LoadResult result;
  auto& frame = result.frame;
  frame.frame_id = options.frame_id;
  frame.trajectory_id = options.trajectory_id;
  std::optional<Pose> pose = options.pose;

  switch (format) {
    case PointFormat::KittiBin: frame.points = read_kitti_bin(path); break;
    case PointFormat::Ply: frame.points = read_ply(path); break;
    case PointFormat::Pcd: frame.points = read_pcd(path); break;
    case PointFormat::Npz: {
      const auto arrays = io::load_npz(path);
      auto it = arrays.find("points");
      if (it == arrays.end()) throw Error(ErrorCode::MalformedRecord, path.string() + ": archive lacks 'points'");
      const auto& pts = it->second;
      if (pts.shape.size() != 2 || pts.shape[1] < 3)
        throw Error(ErrorCode::MalformedRecord, path.string() + ": 'points' must be N x 3");
      const std::size_t cols = pts.shape[1];
      frame.points.resize(pts.shape[0]);
      for (std::size_t i = 0; i < pts.shape[0]; ++i)
        frame.points[i] = Point(static_cast<float>(pts.data[i * cols]), static_cast<float>(pts.data[i * cols + 1]),
                                static_cast<float>(pts.data[i * cols + 2]));
      if (!pose) {
        if (auto p = arrays.find("pose"); p != arrays.end()) {
          if (p->second.size() != 12 && p->second.size() != 16)
            throw Error(ErrorCode::MalformedRecord, path.string() + ": 'pose' must be 3 x 4 or 4 x 4");
          std::array<double, 12> rm{};
          std::copy_n(p->second.data.begin(), 12, rm.begin());
          pose = Pose::from_row_major(rm);
        }
      }
      if (auto p = arrays.find("frame_id"); p != arrays.end() && p->second.size() == 1)
        frame.frame_id = static_cast<std::int64_t>(p->second.data[0]);
      if (auto p = arrays.find("trajectory_id"); p != arrays.end() && p->second.size() == 1)
        frame.trajectory_id = static_cast<int>(p->second.data[0]);
      if (auto p = arrays.find("timestamp"); p != arrays.end() && p->second.size() == 1)
        frame.timestamp = p->second.data[0];
      break;
    }
  }
  if (!pose) throw Error(ErrorCode::MissingPose, path.string() + ": no pose supplied");
  if (!is_rotation(pose->rotation))
    throw Error(ErrorCode::MalformedRecord, path.string() + ": pose rotation is not orthonormal");
  frame.pose = *pose;
  result.dropped_nonfinite = detail::drop_nonfinite(frame.points);
  return result;
}

/// KITTI poses: one row-major 3x4 transform per line.
inline std::vector<Pose> load_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open poses file " + path.string());
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::array<double, 12> v{};
    for (auto& x : v)
      if (!(ls >> x))
        throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": expected 12 values");
    poses.push_back(Pose::from_row_major(v));
  }
  return poses;
}

inline void save_poses(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& p : poses) {
    const auto v = p.to_row_major();
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << '\n';
  }
  io::detail::write_file(path, out.str());
}

}  // namespace spherevlad::ingest
