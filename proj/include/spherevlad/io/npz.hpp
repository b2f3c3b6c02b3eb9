#pragma once

// Minimal NumPy .npy / .npz support: enough to exchange point clouds, poses
// and parameter tensors with numpy.savez / numpy.savez_compressed.
// Reading handles stored and deflated members, including the zip64 extra
// fields numpy emits; writing produces stored (uncompressed) members.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spherevlad/common/error.hpp"

namespace spherevlad::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// A dense array read from or destined for a .npy member. Values are kept as
/// doubles regardless of the on-disk dtype.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::string dtype = "<f8";  // on-disk type when writing: <f4, <f8, <i8

  std::size_t size() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

namespace detail {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t offset) {
  if (offset + sizeof(T) > in.size()) throw Error(ErrorCode::MalformedRecord, "truncated archive");
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::UnreadableFile, "short write to " + path.string());
}

inline std::string header_value(const std::string& header, const std::string& key) {
  const auto pos = header.find("'" + key + "'");
  if (pos == std::string::npos) throw Error(ErrorCode::MalformedRecord, "npy header lacks " + key);
  auto start = header.find(':', pos);
  if (start == std::string::npos) throw Error(ErrorCode::MalformedRecord, "bad npy header");
  ++start;
  while (start < header.size() && header[start] == ' ') ++start;
  if (header[start] == '(') {
    const auto end = header.find(')', start);
    return header.substr(start, end - start + 1);
  }
  if (header[start] == '\'') {
    const auto end = header.find('\'', start + 1);
    return header.substr(start + 1, end - start - 1);
  }
  auto end = header.find_first_of(",}", start);
  return header.substr(start, end - start);
}

}  // namespace detail

inline NpyArray parse_npy(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0)
    throw Error(ErrorCode::MalformedRecord, "not an npy payload");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len, data_start;
  if (major == 1) {
    header_len = detail::get<std::uint16_t>(bytes, 8);
    data_start = 10 + header_len;
  } else {
    header_len = detail::get<std::uint32_t>(bytes, 8);
    data_start = 12 + header_len;
  }
  if (data_start > bytes.size()) throw Error(ErrorCode::MalformedRecord, "truncated npy header");
  const std::string header = bytes.substr(data_start - header_len, header_len);

  NpyArray arr;
  arr.dtype = detail::header_value(header, "descr");
  const bool fortran = detail::header_value(header, "fortran_order").find("True") != std::string::npos;
  const std::string shape = detail::header_value(header, "shape");
  for (std::size_t i = 1; i < shape.size();) {
    while (i < shape.size() && !std::isdigit(static_cast<unsigned char>(shape[i]))) ++i;
    if (i >= shape.size()) break;
    std::size_t j = i;
    while (j < shape.size() && std::isdigit(static_cast<unsigned char>(shape[j]))) ++j;
    arr.shape.push_back(std::stoull(shape.substr(i, j - i)));
    i = j;
  }

  const std::size_t n = arr.size();
  std::size_t width = 0;
  if (arr.dtype == "<f4" || arr.dtype == "<i4") width = 4;
  else if (arr.dtype == "<f8" || arr.dtype == "<i8") width = 8;
  else if (arr.dtype == "|u1" || arr.dtype == "|b1") width = 1;
  else throw Error(ErrorCode::MalformedRecord, "unsupported npy dtype " + arr.dtype);
  if (data_start + n * width > bytes.size())
    throw Error(ErrorCode::MalformedRecord, "npy data shorter than its shape");

  arr.data.resize(n);
  const char* p = bytes.data() + data_start;
  for (std::size_t i = 0; i < n; ++i, p += width) {
    if (arr.dtype == "<f4") { float v; std::memcpy(&v, p, 4); arr.data[i] = v; }
    else if (arr.dtype == "<f8") { double v; std::memcpy(&v, p, 8); arr.data[i] = v; }
    else if (arr.dtype == "<i4") { std::int32_t v; std::memcpy(&v, p, 4); arr.data[i] = v; }
    else if (arr.dtype == "<i8") { std::int64_t v; std::memcpy(&v, p, 8); arr.data[i] = static_cast<double>(v); }
    else arr.data[i] = static_cast<unsigned char>(*p);
  }
  if (fortran && arr.shape.size() == 2) {
    std::vector<double> c_order(n);
    const std::size_t rows = arr.shape[0], cols = arr.shape[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) c_order[r * cols + c] = arr.data[c * rows + r];
    arr.data = std::move(c_order);
  }
  return arr;
}

inline std::string serialize_npy(const NpyArray& arr) {
  std::string shape = "(";
  for (std::size_t i = 0; i < arr.shape.size(); ++i) shape += std::to_string(arr.shape[i]) + ", ";
  if (arr.shape.size() > 1) shape.resize(shape.size() - 2);
  else if (arr.shape.size() == 1) shape.resize(shape.size() - 1);
  shape += ")";
  std::string header = "{'descr': '" + arr.dtype + "', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';

  std::string out("\x93NUMPY\x01\x00", 8);
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
  out += header;
  for (double v : arr.data) {
    if (arr.dtype == "<f4") detail::put<float>(out, static_cast<float>(v));
    else if (arr.dtype == "<f8") detail::put<double>(out, v);
    else if (arr.dtype == "<i8") detail::put<std::int64_t>(out, static_cast<std::int64_t>(v));
    else if (arr.dtype == "<i4") detail::put<std::int32_t>(out, static_cast<std::int32_t>(v));
    else throw Error(ErrorCode::MalformedRecord, "cannot write dtype " + arr.dtype);
  }
  return out;
}

/// Named members of a zip archive, raw bytes.
class ZipArchive {
 public:
  void add(const std::string& name, std::string bytes) { members_[name] = std::move(bytes); }
  bool contains(const std::string& name) const { return members_.count(name) != 0; }
  const std::string& member(const std::string& name) const {
    auto it = members_.find(name);
    if (it == members_.end()) throw Error(ErrorCode::MalformedRecord, "archive has no member " + name);
    return it->second;
  }
  const std::map<std::string, std::string>& members() const { return members_; }

  static ZipArchive parse(const std::string& bytes) {
    using detail::get;
    // End of central directory: scan backwards over a possible comment.
    if (bytes.size() < 22) throw Error(ErrorCode::MalformedRecord, "archive too short");
    std::size_t eocd = std::string::npos;
    for (std::size_t i = bytes.size() - 22 + 1; i-- > 0;) {
      if (get<std::uint32_t>(bytes, i) == 0x06054b50) {
        eocd = i;
        break;
      }
      if (bytes.size() - i > 22 + 65535) break;
    }
    if (eocd == std::string::npos) throw Error(ErrorCode::MalformedRecord, "no zip directory");
    std::uint64_t entries = get<std::uint16_t>(bytes, eocd + 10);
    std::uint64_t cd_offset = get<std::uint32_t>(bytes, eocd + 16);
    if (cd_offset == 0xFFFFFFFFu || entries == 0xFFFF) {
      // zip64 end of central directory via its locator
      const std::size_t locator = eocd - 20;
      if (get<std::uint32_t>(bytes, locator) != 0x07064b50) throw Error(ErrorCode::MalformedRecord, "bad zip64");
      const auto z64 = get<std::uint64_t>(bytes, locator + 8);
      entries = get<std::uint64_t>(bytes, z64 + 32);
      cd_offset = get<std::uint64_t>(bytes, z64 + 48);
    }

    ZipArchive archive;
    std::size_t pos = cd_offset;
    for (std::uint64_t e = 0; e < entries; ++e) {
      if (get<std::uint32_t>(bytes, pos) != 0x02014b50) throw Error(ErrorCode::MalformedRecord, "bad zip entry");
      const auto method = get<std::uint16_t>(bytes, pos + 10);
      std::uint64_t comp = get<std::uint32_t>(bytes, pos + 20);
      std::uint64_t uncomp = get<std::uint32_t>(bytes, pos + 24);
      const auto name_len = get<std::uint16_t>(bytes, pos + 28);
      const auto extra_len = get<std::uint16_t>(bytes, pos + 30);
      const auto comment_len = get<std::uint16_t>(bytes, pos + 32);
      std::uint64_t local = get<std::uint32_t>(bytes, pos + 42);
      const std::string name = bytes.substr(pos + 46, name_len);
      // zip64 extra: present fields appear in the order uncomp, comp, offset
      std::size_t x = pos + 46 + name_len;
      const std::size_t x_end = x + extra_len;
      while (x + 4 <= x_end) {
        const auto id = get<std::uint16_t>(bytes, x);
        const auto len = get<std::uint16_t>(bytes, x + 2);
        if (id == 0x0001) {
          std::size_t f = x + 4;
          if (uncomp == 0xFFFFFFFFu) { uncomp = get<std::uint64_t>(bytes, f); f += 8; }
          if (comp == 0xFFFFFFFFu) { comp = get<std::uint64_t>(bytes, f); f += 8; }
          if (local == 0xFFFFFFFFu) { local = get<std::uint64_t>(bytes, f); }
        }
        x += 4 + len;
      }
      pos = x_end + comment_len;

      if (get<std::uint32_t>(bytes, local) != 0x04034b50) throw Error(ErrorCode::MalformedRecord, "bad local header");
      const auto lname = get<std::uint16_t>(bytes, local + 26);
      const auto lextra = get<std::uint16_t>(bytes, local + 28);
      const std::size_t data = local + 30 + lname + lextra;
      if (data + comp > bytes.size()) throw Error(ErrorCode::MalformedRecord, "truncated member " + name);

      std::string payload;
      if (method == 0) {
        payload = bytes.substr(data, comp);
      } else if (method == 8) {
        payload.resize(uncomp);
        z_stream zs{};
        if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw Error(ErrorCode::MalformedRecord, "zlib init failed");
        zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data() + data));
        zs.avail_in = static_cast<uInt>(comp);
        zs.next_out = reinterpret_cast<Bytef*>(payload.data());
        zs.avail_out = static_cast<uInt>(uncomp);
        const int rc = inflate(&zs, Z_FINISH);
        inflateEnd(&zs);
        if (rc != Z_STREAM_END) throw Error(ErrorCode::MalformedRecord, "corrupt deflate stream in " + name);
      } else {
        throw Error(ErrorCode::MalformedRecord, "unsupported zip method " + std::to_string(method));
      }
      archive.add(name, std::move(payload));
    }
    return archive;
  }

  std::string serialize() const {
    using detail::put;
    std::string out, directory;
    for (const auto& [name, bytes] : members_) {
      const auto crc = static_cast<std::uint32_t>(
          crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
      const auto offset = static_cast<std::uint32_t>(out.size());
      const auto size = static_cast<std::uint32_t>(bytes.size());
      const auto name_len = static_cast<std::uint16_t>(name.size());
      // local header; fixed DOS timestamp (1980-01-01) keeps output byte-stable
      put<std::uint32_t>(out, 0x04034b50);
      put<std::uint16_t>(out, 20);
      put<std::uint16_t>(out, 0);
      put<std::uint16_t>(out, 0);
      put<std::uint16_t>(out, 0);
      put<std::uint16_t>(out, 0x21);
      put<std::uint32_t>(out, crc);
      put<std::uint32_t>(out, size);
      put<std::uint32_t>(out, size);
      put<std::uint16_t>(out, name_len);
      put<std::uint16_t>(out, 0);
      out += name;
      out += bytes;

      put<std::uint32_t>(directory, 0x02014b50);
      put<std::uint16_t>(directory, 20);
      put<std::uint16_t>(directory, 20);
      put<std::uint16_t>(directory, 0);
      put<std::uint16_t>(directory, 0);
      put<std::uint16_t>(directory, 0);
      put<std::uint16_t>(directory, 0x21);
      put<std::uint32_t>(directory, crc);
      put<std::uint32_t>(directory, size);
      put<std::uint32_t>(directory, size);
      put<std::uint16_t>(directory, name_len);
      put<std::uint16_t>(directory, 0);
      put<std::uint16_t>(directory, 0);
      put<std::uint16_t>(directory, 0);
      put<std::uint16_t>(directory, 0);
      put<std::uint32_t>(directory, 0);
      put<std::uint32_t>(directory, offset);
      directory += name;
    }
    const auto cd_offset = static_cast<std::uint32_t>(out.size());
    out += directory;
    put<std::uint32_t>(out, 0x06054b50);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(members_.size()));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(members_.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(directory.size()));
    put<std::uint32_t>(out, cd_offset);
    put<std::uint16_t>(out, 0);
    return out;
  }

 private:
  std::map<std::string, std::string> members_;
};

/// Reads every .npy member of an .npz file, keyed by name without extension.
inline std::map<std::string, NpyArray> load_npz(const std::filesystem::path& path) {
  const auto archive = ZipArchive::parse(detail::read_file(path));
  std::map<std::string, NpyArray> arrays;
  for (const auto& [name, bytes] : archive.members()) {
    if (name.size() > 4 && name.ends_with(".npy")) arrays[name.substr(0, name.size() - 4)] = parse_npy(bytes);
  }
  return arrays;
}

inline void save_npz(const std::filesystem::path& path, const std::map<std::string, NpyArray>& arrays,
                     const std::map<std::string, std::string>& extra_members = {}) {
  ZipArchive archive;
  for (const auto& [key, arr] : arrays) archive.add(key + ".npy", serialize_npy(arr));
  for (const auto& [name, bytes] : extra_members) archive.add(name, bytes);
  detail::write_file(path, archive.serialize());
}

}  // namespace spherevlad::io
