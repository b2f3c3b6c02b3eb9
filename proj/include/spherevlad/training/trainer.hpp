#pragma once

// Training over mined tuples: one tuple batch per step, batch statistics in
// every normalization layer, lazy quadruplet loss, Adam.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spherevlad/common/error.hpp"
#include "spherevlad/common/random.hpp"
#include "spherevlad/ingest/frame.hpp"
#include "spherevlad/ingest/splits.hpp"
#include "spherevlad/model/checkpoint.hpp"
#include "spherevlad/model/network.hpp"
#include "spherevlad/sphere/panorama.hpp"
#include "spherevlad/training/loss.hpp"
#include "spherevlad/training/optimizer.hpp"

namespace spherevlad::training {

enum class Precision { Float32, Float64 };

inline std::string to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::Float32;
  if (s == "float64") return Precision::Float64;
  throw Error(ErrorCode::BadConfig, "precision must be float32 or float64, got '" + s + "'");
}

struct TrainConfig {
  Margins margins;
  double d_pos = 8.0;
  double d_neg = 16.0;
  int n_pos = 2;
  int n_neg = 6;
  double learning_rate = 1e-3;
  int steps = 2000;
  int batch_tuples = 1;
  std::uint64_t seed = 0;
  bool rotation_augmentation = false;
  Precision precision = Precision::Float32;
  model::ModelConfig model = model::ModelConfig::desk();
  double max_range_m = 50.0;
  int validation_tuples = 32;
  int eval_every = 100;
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
  std::vector<std::string> frozen;  // parameter-name prefixes excluded from updates
  ingest::DistanceMode distance = ingest::DistanceMode::Euclidean3D;  // for tuple mining

  void validate() const {
    if (!(margins.m1 > 0) || !(margins.m2 > 0)) throw Error(ErrorCode::BadConfig, "margins m1 and m2 must be positive");
    if (!(d_pos < d_neg)) throw Error(ErrorCode::BadConfig, "d_pos must be smaller than d_neg");
    if (n_pos < 1 || n_neg < 1) throw Error(ErrorCode::BadConfig, "n_pos and n_neg must be at least 1");
    if (steps < 0 || batch_tuples < 1) throw Error(ErrorCode::BadConfig, "steps must be >= 0 and batch_tuples >= 1");
    if (!(learning_rate > 0)) throw Error(ErrorCode::BadConfig, "learning_rate must be positive");
    if (!(max_range_m > 0)) throw Error(ErrorCode::BadConfig, "max_range_m must be positive");
    if (validation_tuples < 1 || eval_every < 1) throw Error(ErrorCode::BadConfig, "validation_tuples and eval_every must be positive");
    model.validate();
  }

  ingest::TupleShape tuple_shape() const {
    ingest::TupleShape s;
    s.d_pos = d_pos;
    s.d_neg = d_neg;
    s.n_pos = static_cast<std::size_t>(n_pos);
    s.n_neg = static_cast<std::size_t>(n_neg);
    s.distance = distance;
    return s;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"m1", c.margins.m1},
       {"m2", c.margins.m2},
       {"d_pos", c.d_pos},
       {"d_neg", c.d_neg},
       {"n_pos", c.n_pos},
       {"n_neg", c.n_neg},
       {"learning_rate", c.learning_rate},
       {"steps", c.steps},
       {"batch_tuples", c.batch_tuples},
       {"seed", c.seed},
       {"rotation_augmentation", c.rotation_augmentation},
       {"precision", to_string(c.precision)},
       {"model", c.model},
       {"max_range_m", c.max_range_m},
       {"validation_tuples", c.validation_tuples},
       {"eval_every", c.eval_every},
       {"checkpoint_every", c.checkpoint_every},
       {"frozen", c.frozen},
       {"distance", c.distance == ingest::DistanceMode::Planar ? "planar" : "euclidean3d"}};
}

/// Overlays the keys present in j onto c. Unknown keys are an error naming the key.
inline void apply_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "training config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "m1") c.margins.m1 = v.get<double>();
      else if (key == "m2") c.margins.m2 = v.get<double>();
      else if (key == "d_pos") c.d_pos = v.get<double>();
      else if (key == "d_neg") c.d_neg = v.get<double>();
      else if (key == "n_pos") c.n_pos = v.get<int>();
      else if (key == "n_neg") c.n_neg = v.get<int>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "steps") c.steps = v.get<int>();
      else if (key == "batch_tuples") c.batch_tuples = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "rotation_augmentation") c.rotation_augmentation = v.get<bool>();
      else if (key == "precision") c.precision = parse_precision(v.get<std::string>());
      else if (key == "model") {
        if (v.is_string()) c.model = model::model_preset(v.get<std::string>());
        else model::apply_json(v, c.model);
      }
      else if (key == "max_range_m") c.max_range_m = v.get<double>();
      else if (key == "validation_tuples") c.validation_tuples = v.get<int>();
      else if (key == "eval_every") c.eval_every = v.get<int>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<int>();
      else if (key == "frozen") c.frozen = v.get<std::vector<std::string>>();
      else if (key == "distance") {
        const auto d = v.get<std::string>();
        if (d == "planar") c.distance = ingest::DistanceMode::Planar;
        else if (d == "euclidean3d") c.distance = ingest::DistanceMode::Euclidean3D;
        else throw Error(ErrorCode::BadConfig, "distance must be euclidean3d or planar, got '" + d + "'");
      }
      else throw Error(ErrorCode::BadConfig, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("bad config value: ") + e.what());
  }
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  apply_json(j, c);
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BadConfig, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, path.string() + ": " + e.what());
  }
  return j.get<TrainConfig>();
}

struct LossPoint {
  int step = 0;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
};

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossPoint>& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "step,train_loss,val_loss\n" << std::setprecision(10);
  for (const auto& p : curve) {
    out << p.step << ',';
    if (p.train_loss) out << *p.train_loss;
    out << ',';
    if (p.val_loss) out << *p.val_loss;
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path.string());
}

struct TrainHooks {
  /// Called once per augmented anchor with (step, frame index, azimuth shift in input cells).
  std::function<void(int, std::size_t, int)> on_augment;
  /// Called after every recorded curve point.
  std::function<void(const LossPoint&)> on_point;
  /// Polled between steps; returning true ends training early.
  std::function<bool()> should_stop;
};

template <typename T>
struct TrainResult {
  model::Model<T> model;
  std::vector<LossPoint> curve;
  std::vector<std::filesystem::path> checkpoints;
  bool interrupted = false;
};

namespace detail {

/// Distinct, reproducible streams derived from the one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::vector<std::size_t> tuple_members(const ingest::TrainingTuple& t) {
  std::vector<std::size_t> out{t.anchor};
  out.insert(out.end(), t.positives.begin(), t.positives.end());
  out.insert(out.end(), t.negatives.begin(), t.negatives.end());
  out.push_back(t.extra_negative);
  return out;
}

/// Loss of each tuple laid out consecutively in the batch; fills the
/// descriptor gradients when grads is non-null.
template <typename T>
std::vector<double> batch_losses(const std::vector<Vector<T>>& desc, std::size_t n_pos, std::size_t n_neg,
                                 const Margins& margins, std::vector<Vector<T>>* grads) {
  const std::size_t per = 2 + n_pos + n_neg;
  const std::size_t tuples = desc.size() / per;
  std::vector<double> losses;
  if (grads) grads->assign(desc.size(), Vector<T>::Zero(desc.front().size()));
  for (std::size_t t = 0; t < tuples; ++t) {
    const std::size_t base = t * per;
    const std::span<const Vector<T>> pos(desc.data() + base + 1, n_pos), neg(desc.data() + base + 1 + n_pos, n_neg);
    const auto l = lazy_quadruplet_loss<T>(desc[base], pos, neg, desc[base + per - 1], margins, grads != nullptr);
    losses.push_back(l.value);
    if (!grads) continue;
    (*grads)[base] = l.grad_anchor;
    for (std::size_t i = 0; i < n_pos; ++i) (*grads)[base + 1 + i] = l.grad_positives[i];
    for (std::size_t i = 0; i < n_neg; ++i) (*grads)[base + 1 + n_pos + i] = l.grad_negatives[i];
    (*grads)[base + per - 1] = l.grad_extra;
  }
  return losses;
}

}  // namespace detail

/// Mean loss over fixed tuples, each evaluated as its own normalization batch
/// without touching the running statistics.
template <typename T>
double tuple_set_loss(model::Model<T>& net, const std::vector<harmonic::S2Signal<T>>& inputs,
                      const std::vector<ingest::TrainingTuple>& tuples, const TrainConfig& cfg) {
  double total = 0;
  for (const auto& t : tuples) {
    std::vector<harmonic::S2Signal<T>> batch;
    for (std::size_t idx : detail::tuple_members(t)) batch.push_back(inputs[idx]);
    const auto desc = net.forward(batch, {true, false}, nullptr);
    total += detail::batch_losses<T>(desc, t.positives.size(), t.negatives.size(), cfg.margins, nullptr).front();
  }
  return total / static_cast<double>(tuples.size());
}

/// Trains a model from scratch. When out_dir is given the loss curve,
/// checkpoints and any non-finite-loss dump are written there.
template <typename T>
TrainResult<T> train(const std::vector<ingest::SubmapFrame>& frames, const TrainConfig& cfg,
                     const std::optional<std::filesystem::path>& out_dir = std::nullopt, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (frames.empty()) throw Error(ErrorCode::EmptyInput, "train: no frames");
  const int b0 = cfg.model.encoder.input_bandwidth;
  std::vector<harmonic::S2Signal<T>> inputs;
  inputs.reserve(frames.size());
  for (const auto& f : frames) inputs.push_back(sphere::project(f, cfg.max_range_m, b0).template to_signal<T>());

  const ingest::TupleMiner miner(frames, cfg.tuple_shape());
  Rng val_rng(detail::derive_seed(cfg.seed, 1));
  std::vector<ingest::TrainingTuple> validation;
  for (int i = 0; i < cfg.validation_tuples; ++i) validation.push_back(miner.sample(val_rng));

  TrainResult<T> result{model::Model<T>::random(cfg.model, detail::derive_seed(cfg.seed, 0)), {}, {}, false};
  auto& net = result.model;
  Adam<T> adam(net.parameters(), {cfg.learning_rate}, cfg.frozen);
  Rng rng(detail::derive_seed(cfg.seed, 2));
  // Shifts by whole cells of the coarsest grid keep every layer's grid aligned.
  const int yaw_stride = b0 / cfg.model.encoder.feature_bandwidth();
  const int yaw_positions = 2 * cfg.model.encoder.feature_bandwidth();

  auto record = [&](LossPoint p) {
    result.curve.push_back(p);
    if (hooks.on_point) hooks.on_point(p);
  };
  auto save = [&](const std::string& name, int step) {
    if (!out_dir) return;
    const auto path = *out_dir / name;
    model::save_checkpoint(path, net, {{"step", step}, {"train_config", cfg}});
    result.checkpoints.push_back(path);
  };
  record({0, std::nullopt, tuple_set_loss(net, inputs, validation, cfg)});

  for (int step = 1; step <= cfg.steps; ++step) {
    if (hooks.should_stop && hooks.should_stop()) {
      result.interrupted = true;
      break;
    }
    std::vector<ingest::TrainingTuple> tuples;
    std::vector<harmonic::S2Signal<T>> batch;
    for (int t = 0; t < cfg.batch_tuples; ++t) {
      tuples.push_back(miner.sample(rng));
      const auto members = detail::tuple_members(tuples.back());
      for (std::size_t m = 0; m < members.size(); ++m) {
        if (m == 0 && cfg.rotation_augmentation) {
          const int shift = static_cast<int>(rng.index(yaw_positions)) * yaw_stride;
          if (hooks.on_augment) hooks.on_augment(step, members[m], shift);
          auto pano = sphere::project(frames[members[m]], cfg.max_range_m, b0);
          batch.push_back(sphere::rotate_panorama_yaw(pano, shift).template to_signal<T>());
        } else {
          batch.push_back(inputs[members[m]]);
        }
      }
    }
    typename model::Model<T>::Cache cache;
    const auto desc = net.forward(batch, {true, true}, &cache);
    std::vector<Vector<T>> grads;
    const auto losses = detail::batch_losses<T>(desc, static_cast<std::size_t>(cfg.n_pos),
                                                static_cast<std::size_t>(cfg.n_neg), cfg.margins, &grads);
    double loss = 0;
    for (double l : losses) loss += l / static_cast<double>(losses.size());
    if (!std::isfinite(loss)) {
      if (out_dir) {
        nlohmann::json dump = {{"step", step}, {"loss", nullptr}, {"tuples", nlohmann::json::array()}};
        for (const auto& t : tuples)
          dump["tuples"].push_back({{"anchor", t.anchor}, {"positives", t.positives}, {"negatives", t.negatives},
                                    {"extra_negative", t.extra_negative}});
        std::filesystem::create_directories(*out_dir);
        std::ofstream(*out_dir / "nonfinite_dump.json") << dump.dump(2) << '\n';
        save("nonfinite_weights.npz", step);
        write_loss_csv(*out_dir / "loss_curve.csv", result.curve);
      }
      throw Error(ErrorCode::NonFiniteLoss, "non-finite loss at step " + std::to_string(step));
    }
    for (auto& g : grads) g /= static_cast<T>(cfg.batch_tuples);
    adam.step(net.parameters(), net.backward(cache, grads));

    LossPoint point{step, loss, std::nullopt};
    if (step % cfg.eval_every == 0 || step == cfg.steps) point.val_loss = tuple_set_loss(net, inputs, validation, cfg);
    record(point);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps)
      save("checkpoint_step" + std::to_string(step) + ".npz", step);
  }
  save("checkpoint.npz", result.curve.back().step);
  if (out_dir) write_loss_csv(*out_dir / "loss_curve.csv", result.curve);
  return result;
}

}  // namespace spherevlad::training
