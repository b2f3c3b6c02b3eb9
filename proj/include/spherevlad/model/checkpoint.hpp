#pragma once

// Weight archives: an npz holding every parameter and buffer tensor plus a
// config.json member describing the network they belong to.

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "spherevlad/io/npz.hpp"
#include "spherevlad/model/network.hpp"

namespace spherevlad::model {

inline constexpr int kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const nlohmann::json& extra = {}) {
  std::map<std::string, io::NpyArray> arrays;
  auto put = [&](const std::string& prefix, const ParameterSet<T>& set) {
    for (const auto& [name, t] : set) {
      io::NpyArray a;
      a.shape = t.shape;
      a.data.assign(t.data.begin(), t.data.end());
      a.dtype = sizeof(T) == 4 ? "<f4" : "<f8";
      arrays[prefix + name] = std::move(a);
    }
  };
  put("param.", model.parameters());
  put("buffer.", model.buffers());
  const auto& cfg = model.config();
  nlohmann::json header = {{"version", kCheckpointVersion},
                           {"config", cfg},
                           {"variant", to_string(cfg.variant)},
                           {"K", cfg.clusters},
                           {"C", cfg.encoder.feature_channels()},
                           {"bandwidths", nlohmann::json::array()}};
  header["bandwidths"].push_back(cfg.encoder.input_bandwidth);
  for (const auto& l : cfg.encoder.layers) header["bandwidths"].push_back(l.bandwidth);
  if (!extra.is_null()) header["extra"] = extra;
  const std::string text = header.dump(2);
  io::save_npz(path, arrays, {{"config.json", text}});
}

struct CheckpointInfo {
  ModelConfig config;
  nlohmann::json header;
};

inline CheckpointInfo read_checkpoint_header(const std::filesystem::path& path) {
  const auto zip = io::ZipArchive::parse(io::detail::read_file(path));
  if (!zip.contains("config.json"))
    throw Error(ErrorCode::MalformedRecord, path.string() + ": checkpoint has no config.json");
  CheckpointInfo info;
  try {
    info.header = nlohmann::json::parse(zip.member("config.json"));
    info.config = info.header.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, path.string() + ": bad checkpoint header: " + e.what());
  }
  return info;
}

/// Rebuilds the model described by the archive and validates every tensor shape.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  const auto info = read_checkpoint_header(path);
  Model<T> model(info.config);
  const auto arrays = io::load_npz(path);
  auto take = [&](const std::string& prefix, ParameterSet<T>& set) {
    for (auto& [name, t] : set) {
      const auto it = arrays.find(prefix + name);
      if (it == arrays.end()) throw Error(ErrorCode::ShapeMismatch, path.string() + ": missing tensor " + prefix + name);
      if (it->second.shape != t.shape)
        throw Error(ErrorCode::ShapeMismatch, path.string() + ": tensor " + prefix + name + " has the wrong shape");
      for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<T>(it->second.data[i]);
    }
  };
  take("param.", model.parameters());
  take("buffer.", model.buffers());
  model.mark_initialized();
  return model;
}

}  // namespace spherevlad::model
