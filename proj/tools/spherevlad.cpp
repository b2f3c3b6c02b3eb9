// spherevlad: data preparation, training, indexing, retrieval, evaluation,
// diagnostics and benchmarking from one binary.

#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spherevlad/eval/experiments.hpp"
#include "spherevlad/eval/index.hpp"
#include "spherevlad/eval/metrics.hpp"
#include "spherevlad/eval/snr.hpp"
#include "spherevlad/ingest/splits.hpp"
#include "spherevlad/ingest/synthetic.hpp"
#include "spherevlad/model/checkpoint.hpp"
#include "spherevlad/sphere/panorama.hpp"
#include "spherevlad/training/trainer.hpp"

#ifndef SPHEREVLAD_VERSION
#define SPHEREVLAD_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spherevlad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitInterrupted = 130;

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) {
  g_interrupted = true;
  std::signal(SIGINT, SIG_DFL);  // a second Ctrl-C kills immediately
}

struct Interrupted {};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void poll_interrupt() {
  if (g_interrupted) throw Interrupted{};
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// One manifest per run, written to <out>/run_manifest.json when the run ends,
/// fails or is interrupted.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv) {
    j_ = {{"command", std::move(command)},
          {"argv", std::move(argv)},
          {"tool_version", SPHEREVLAD_VERSION},
          {"config", json::object()},
          {"seed", nullptr},
          {"artifacts", json::object()},
          {"started", utc_now()}};
  }
  void set_out(const fs::path& dir) { out_ = dir; }
  void set_config(const json& c) { j_["config"] = c; }
  void set_seed(std::uint64_t s) { j_["seed"] = s; }
  void artifact(const std::string& name, const fs::path& p) { j_["artifacts"][name] = p.string(); }
  void note(const std::string& key, const json& v) { j_[key] = v; }

  void finish(const std::string& status) {
    if (!out_ || written_) return;
    j_["finished"] = utc_now();
    j_["status"] = status;
    fs::create_directories(*out_);
    std::ofstream(*out_ / "run_manifest.json") << j_.dump(2) << '\n';
    written_ = true;
  }

 private:
  json j_;
  std::optional<fs::path> out_;
  bool written_ = false;
};

// ---------------------------------------------------------------------------
// Data options shared by the commands that read a dataset

struct DataOptions {
  fs::path dataset;
  std::string strategy = "cross_recording";
  int database_label = 0;
  std::vector<int> query_labels;
  double threshold_m = 5.0;
  double revisit_radius_m = 3.0;
  std::size_t min_frame_gap = 30;
  double spacing_m = 5.0;
  bool planar = false;

  void add(CLI::App* app, bool need_split) {
    app->add_option("--dataset", dataset, "dataset directory (manifest.json or frames/ + poses.txt)")
        ->required()
        ->check(CLI::ExistingDirectory);
    app->add_flag("--planar", planar, "2D distance for ground truth and tuples");
    if (!need_split) return;
    app->add_option("--strategy", strategy, "keypose_rest | revisit | cross_recording")->capture_default_str();
    app->add_option("--database-label", database_label, "cross_recording: database trajectory id")
        ->capture_default_str();
    app->add_option("--query-labels", query_labels, "cross_recording: query trajectory ids (default: all others)");
    app->add_option("--threshold-m", threshold_m, "success radius in metres")->capture_default_str();
    app->add_option("--revisit-radius", revisit_radius_m, "revisit: radius in metres")->capture_default_str();
    app->add_option("--min-frame-gap", min_frame_gap, "revisit: minimum frame gap")->capture_default_str();
    app->add_option("--spacing", spacing_m, "keypose_rest: keypose spacing in metres")->capture_default_str();
  }

  ingest::DistanceMode distance() const {
    return planar ? ingest::DistanceMode::Planar : ingest::DistanceMode::Euclidean3D;
  }

  ingest::SplitSpec split(const std::vector<ingest::SubmapFrame>& frames) const {
    ingest::SplitParams p;
    p.spacing_m = spacing_m;
    p.revisit_radius_m = revisit_radius_m;
    p.min_frame_gap = min_frame_gap;
    p.database_label = database_label;
    p.query_labels = query_labels;
    p.success_threshold_m = threshold_m;
    p.distance = distance();
    return ingest::split_query_database(frames, ingest::parse_split_strategy(strategy), p);
  }

  json to_json() const {
    return {{"dataset", dataset.string()}, {"strategy", strategy},     {"database_label", database_label},
            {"query_labels", query_labels}, {"threshold_m", threshold_m}, {"revisit_radius_m", revisit_radius_m},
            {"min_frame_gap", min_frame_gap}, {"spacing_m", spacing_m}, {"planar", planar}};
  }
};

std::vector<ingest::SubmapFrame> load_frames(const fs::path& dir) {
  std::vector<ingest::SubmapFrame> frames;
  if (fs::exists(dir / "manifest.json") || fs::is_directory(dir / "frames")) {
    frames = ingest::read_dataset(dir);
  } else {
    // loose point files; projection does not need poses
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && ingest::format_from_extension(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i) {
      ingest::LoadOptions opt;
      opt.frame_id = static_cast<std::int64_t>(i);
      opt.pose = Pose{};
      frames.push_back(ingest::load_submap(files[i], *ingest::format_from_extension(files[i]), opt).frame);
    }
  }
  if (frames.empty()) throw UsageError("no frames found in " + dir.string());
  return frames;
}

eval::EvalOptions eval_options(const DataOptions& d, double max_range) {
  eval::EvalOptions o;
  o.threshold_m = d.threshold_m;
  o.max_range_m = max_range;
  o.distance = d.distance();
  return o;
}

void add_checkpoint(CLI::App* app, fs::path& path) {
  app->add_option("--checkpoint", path, "checkpoint.npz written by train")->required()->check(CLI::ExistingFile);
}

void add_out(CLI::App* app, fs::path& out) {
  app->add_option("--out", out, "output directory")->required();
}

training::Precision checkpoint_precision(const fs::path& ckpt) {
  const auto info = model::read_checkpoint_header(ckpt);
  const auto& extra = info.header.value("extra", json::object());
  if (extra.contains("train_config") && extra["train_config"].contains("precision"))
    return training::parse_precision(extra["train_config"]["precision"].get<std::string>());
  return training::Precision::Float32;
}

double checkpoint_max_range(const fs::path& ckpt) {
  const auto info = model::read_checkpoint_header(ckpt);
  const auto& extra = info.header.value("extra", json::object());
  if (extra.contains("train_config")) return extra["train_config"].value("max_range_m", 50.0);
  return 50.0;
}

/// Runs f with the model loaded at the checkpoint's training precision.
template <typename F>
void with_model(const fs::path& ckpt, F&& f) {
  if (checkpoint_precision(ckpt) == training::Precision::Float64) {
    auto net = model::load_checkpoint<double>(ckpt);
    f(net);
  } else {
    auto net = model::load_checkpoint<float>(ckpt);
    f(net);
  }
}

// ---------------------------------------------------------------------------
// Commands

struct ProjectArgs {
  fs::path in, out;
  int bandwidth = 32;
  double max_range = 50.0;
  std::string up = "z";
};

void cmd_project(const ProjectArgs& a, RunManifest& m) {
  m.set_config({{"in", a.in.string()}, {"bandwidth", a.bandwidth}, {"max_range_m", a.max_range}, {"up", a.up}});
  if (a.up != "z" && a.up != "y") throw UsageError("--up must be z or y");
  if (!fs::is_directory(a.in)) throw UsageError("no frames found: " + a.in.string() + " is not a directory");
  const auto frames = load_frames(a.in);
  fs::create_directories(a.out);
  const sphere::ProjectOptions opt{a.max_range, a.bandwidth, a.up == "y" ? sphere::UpAxis::Y : sphere::UpAxis::Z};
  for (const auto& f : frames) {
    poll_interrupt();
    auto name = ingest::frame_file_name(f.frame_id);
    name.replace(name.size() - 4, 4, ".pano");
    sphere::save_panorama(a.out / name, sphere::project(f, opt));
  }
  m.artifact("panoramas", a.out);
  m.note("frame_count", frames.size());
  std::cout << "projected " << frames.size() << " frames to " << a.out << '\n';
}

struct SynthArgs {
  std::uint64_t seed = 0;
  fs::path out;
  fs::path params;
  std::optional<int> landmarks, rays_azimuth, rays_elevation;
};

void cmd_synth(const SynthArgs& a, RunManifest& m) {
  ingest::SyntheticParams p;
  if (!a.params.empty()) {
    std::ifstream in(a.params);
    if (!in) throw UsageError("cannot open params " + a.params.string());
    try {
      p = json::parse(in).get<ingest::SyntheticParams>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BadConfig, a.params.string() + ": " + e.what());
    }
  }
  if (a.landmarks) p.n_landmarks = *a.landmarks;
  if (a.rays_azimuth) p.rays_azimuth = *a.rays_azimuth;
  if (a.rays_elevation) p.rays_elevation = *a.rays_elevation;
  p = ingest::clamp_params(p, &std::cerr);
  m.set_seed(a.seed);
  m.set_config({{"params", p}});
  const auto frames = ingest::make_synthetic_world(a.seed, p, nullptr);
  poll_interrupt();
  ingest::DatasetManifest dm;
  dm.seed = a.seed;
  dm.params = p;
  ingest::write_dataset(a.out, frames, dm);
  m.artifact("dataset", a.out);
  m.note("frame_count", frames.size());
  std::cout << "wrote " << frames.size() << " frames to " << a.out << '\n';
}

struct TrainArgs {
  fs::path config, out;
  DataOptions data;
  std::optional<std::string> variant, precision, preset;
  bool no_attention = false, no_batchnorm = false, augment = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> lr;
  std::vector<int> trajectories;
};

void cmd_train(const TrainArgs& a, RunManifest& m) {
  training::TrainConfig cfg;
  if (!a.config.empty()) cfg = training::load_train_config(a.config);
  if (a.preset) cfg.model = model::model_preset(*a.preset);
  if (a.variant) {
    cfg.model.variant = model::parse_variant(*a.variant);
    if (cfg.model.variant == model::Variant::SphereVlad) cfg.model.attention = false;
  }
  if (a.no_attention) cfg.model.attention = false;
  if (a.no_batchnorm) cfg.model.encoder.batchnorm = false;
  if (a.augment) cfg.rotation_augmentation = true;
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.steps = *a.steps;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.precision) cfg.precision = training::parse_precision(*a.precision);
  if (a.data.planar) cfg.distance = ingest::DistanceMode::Planar;
  cfg.validate();
  m.set_config({{"train", cfg}, {"data", a.data.to_json()}, {"trajectories", a.trajectories}});
  m.set_seed(cfg.seed);

  auto frames = load_frames(a.data.dataset);
  if (!a.trajectories.empty()) {
    std::erase_if(frames, [&](const ingest::SubmapFrame& f) {
      return std::find(a.trajectories.begin(), a.trajectories.end(), f.trajectory_id) == a.trajectories.end();
    });
    if (frames.empty()) throw UsageError("no frames found for the selected trajectories");
  }
  fs::create_directories(a.out);
  training::TrainHooks hooks;
  hooks.should_stop = [] { return g_interrupted.load(); };
  hooks.on_point = [&](const training::LossPoint& p) {
    if (p.val_loss) std::cerr << "step " << p.step << " val_loss " << *p.val_loss << '\n';
  };
  auto run = [&]<typename T>() {
    const auto r = training::train<T>(frames, cfg, a.out, hooks);
    m.artifact("checkpoint", a.out / "checkpoint.npz");
    m.artifact("loss_curve", a.out / "loss_curve.csv");
    if (r.interrupted) throw Interrupted{};
  };
  if (cfg.precision == training::Precision::Float64) run.template operator()<double>();
  else run.template operator()<float>();
}

struct IndexArgs {
  fs::path checkpoint, out;
  DataOptions data;
};

void cmd_index(const IndexArgs& a, RunManifest& m) {
  m.set_config({{"checkpoint", a.checkpoint.string()}, {"data", a.data.to_json()}});
  const auto frames = load_frames(a.data.dataset);
  const auto split = a.data.split(frames);
  const double max_range = checkpoint_max_range(a.checkpoint);
  with_model(a.checkpoint, [&](auto& net) {
    const auto idx = eval::index_frames(net, eval::select_frames(frames, split.database_ids), max_range);
    fs::create_directories(a.out);
    idx.save(a.out / "index.svix");
    std::cout << "indexed " << idx.size() << " database frames, dimension " << idx.dimension() << '\n';
  });
  m.artifact("index", a.out / "index.svix");
}

struct QueryArgs {
  fs::path checkpoint, index, out;
  DataOptions data;
  std::size_t top_n = 25;
};

void cmd_query(const QueryArgs& a, RunManifest& m) {
  m.set_config({{"checkpoint", a.checkpoint.string()}, {"index", a.index.string()}, {"top_n", a.top_n},
                {"data", a.data.to_json()}});
  const auto frames = load_frames(a.data.dataset);
  const auto split = a.data.split(frames);
  const auto idx = eval::DescriptorIndex::load(a.index);
  const auto queries = eval::select_frames(frames, split.query_ids);
  const double max_range = checkpoint_max_range(a.checkpoint);
  std::vector<eval::RetrievalResult> results;
  const std::vector<double> thresholds{a.data.threshold_m};
  with_model(a.checkpoint, [&](auto& net) {
    for (const auto& q : queries) {
      poll_interrupt();
      const auto g = net.describe(sphere::project(q, max_range, net.config().encoder.input_bandwidth));
      results.push_back(idx.query(g.values, 0, q.frame_id, q.pose, thresholds, a.data.distance()));
    }
  });
  fs::create_directories(a.out);
  std::ofstream out(a.out / "results.csv");
  out << "query_id,rank,db_id,distance,pose_distance,success\n";
  for (const auto& r : results)
    for (std::size_t i = 0; i < std::min(a.top_n, r.ranking.size()); ++i)
      out << r.query_id << ',' << i + 1 << ',' << r.ranking[i].db_id << ',' << r.ranking[i].distance << ','
          << r.ranking[i].pose_distance << ',' << (r.ranking[i].pose_distance <= a.data.threshold_m ? 1 : 0) << '\n';
  const auto recall = eval::recall_at_n(results, a.data.threshold_m, idx.size(), a.top_n);
  eval::write_recall_csv(a.out / "recall.csv", recall);
  m.artifact("results", a.out / "results.csv");
  m.artifact("recall", a.out / "recall.csv");
  m.note("ar1", recall.ar1);
  m.note("ar1_percent", recall.ar1_percent);
  std::cout << "AR@1 " << recall.ar1 << "  AR@1% " << recall.ar1_percent << '\n';
}

struct EvalArgs {
  fs::path checkpoint, out, train_config;
  DataOptions data;
  std::string yaw_sweep;
  double noise_m = 1.0;
  std::uint64_t seed = 0;
  bool snr = false, ablation = false, bench = false;
  std::size_t bench_runs = 500;
};

void cmd_eval(const EvalArgs& a, RunManifest& m) {
  m.set_config({{"checkpoint", a.checkpoint.string()}, {"data", a.data.to_json()}, {"yaw_sweep", a.yaw_sweep},
                {"noise_m", a.noise_m}, {"snr", a.snr}, {"ablation", a.ablation}, {"bench", a.bench},
                {"bench_runs", a.bench_runs}, {"train_config", a.train_config.string()}});
  m.set_seed(a.seed);
  const auto frames = load_frames(a.data.dataset);
  const auto split = a.data.split(frames);
  const auto opt = eval_options(a.data, checkpoint_max_range(a.checkpoint));
  fs::create_directories(a.out);
  with_model(a.checkpoint, [&](auto& net) {
    const auto ev = eval::evaluate(net, frames, split, opt);
    eval::write_recall_csv(a.out / "recall.csv", ev.recall);
    m.artifact("recall", a.out / "recall.csv");
    m.note("ar1", ev.recall.ar1);
    m.note("ar1_percent", ev.recall.ar1_percent);
    std::cout << "AR@1 " << ev.recall.ar1 << "  AR@1% " << ev.recall.ar1_percent << '\n';
    poll_interrupt();
    if (!a.yaw_sweep.empty()) {
      const auto rows = eval::yaw_sweep_eval(net, frames, split, eval::parse_yaw_list(a.yaw_sweep), a.noise_m, a.seed, opt);
      eval::write_yaw_csv(a.out / "yaw_sweep.csv", rows);
      m.artifact("yaw_sweep", a.out / "yaw_sweep.csv");
      for (const auto& r : rows) std::cout << "yaw " << r.yaw_deg << "  AR@1 " << r.recall.ar1 << '\n';
      poll_interrupt();
    }
    if (a.snr) {
      const auto r = eval::snr_report(net, frames, {}, opt.max_range_m);
      eval::write_snr_csv(a.out / "snr.csv", r);
      eval::write_histogram_csv(a.out / "cluster_assignment.csv", r.histogram);
      m.artifact("snr", a.out / "snr.csv");
      m.artifact("cluster_assignment", a.out / "cluster_assignment.csv");
      std::cout << "SNR " << r.snr << " (" << r.n_active << " of " << r.n_total << " active)\n";
      poll_interrupt();
    }
    if (a.bench) {
      const auto r = eval::benchmark_runtime(net, eval::select_frames(frames, split.query_ids), a.bench_runs, 10,
                                             opt.max_range_m);
      eval::write_runtime_csv(a.out / "runtime.csv", r);
      m.artifact("runtime", a.out / "runtime.csv");
      std::cout << "preprocess " << r.preprocess_ms << " ms  inference " << r.inference_ms << " ms\n";
    }
  });
  if (a.ablation) {
    training::TrainConfig cfg;
    if (!a.train_config.empty()) cfg = training::load_train_config(a.train_config);
    training::TrainHooks hooks;
    hooks.should_stop = [] { return g_interrupted.load(); };
    const auto train_frames = eval::select_frames(frames, split.database_ids);
    const auto rows = cfg.precision == training::Precision::Float64
                          ? eval::run_ablation<double>(train_frames, frames, split, cfg, opt, hooks)
                          : eval::run_ablation<float>(train_frames, frames, split, cfg, opt, hooks);
    poll_interrupt();
    eval::write_ablation_csv(a.out / "ablation.csv", rows);
    m.artifact("ablation", a.out / "ablation.csv");
  }
}

struct SnrArgs {
  fs::path checkpoint, assignments, out, dataset;
  double min_fraction = 0.01;
};

void cmd_snr(const SnrArgs& a, RunManifest& m) {
  m.set_config({{"checkpoint", a.checkpoint.string()}, {"assignments", a.assignments.string()},
                {"dataset", a.dataset.string()}, {"min_argmax_fraction", a.min_fraction}});
  const eval::ActivityRule rule{a.min_fraction};
  eval::SNRReport r;
  if (!a.assignments.empty()) {
    r = eval::snr_from_assignments(eval::load_assignment_csv(a.assignments), rule);
  } else {
    if (a.checkpoint.empty() || a.dataset.empty())
      throw UsageError("snr needs --assignments, or --checkpoint with --dataset");
    const auto frames = load_frames(a.dataset);
    const double max_range = checkpoint_max_range(a.checkpoint);
    with_model(a.checkpoint, [&](auto& net) { r = eval::snr_report(net, frames, rule, max_range); });
  }
  fs::create_directories(a.out);
  eval::write_snr_csv(a.out / "snr.csv", r);
  eval::write_histogram_csv(a.out / "cluster_assignment.csv", r.histogram);
  m.artifact("snr", a.out / "snr.csv");
  m.artifact("cluster_assignment", a.out / "cluster_assignment.csv");
  std::cout << "N_active " << r.n_active << "  N_total " << r.n_total << "  SNR " << std::fixed << std::setprecision(3)
            << r.snr << (r.degenerate ? "  (all centroids active)" : "") << '\n';
}

struct BenchArgs {
  fs::path checkpoint, out, dataset;
  std::size_t runs = 500;
  std::size_t warmup = 10;
};

void cmd_bench(const BenchArgs& a, RunManifest& m) {
  m.set_config({{"checkpoint", a.checkpoint.string()}, {"dataset", a.dataset.string()}, {"runs", a.runs},
                {"warmup", a.warmup}});
  const auto frames = load_frames(a.dataset);
  const double max_range = checkpoint_max_range(a.checkpoint);
  eval::RuntimeReport r;
  with_model(a.checkpoint, [&](auto& net) { r = eval::benchmark_runtime(net, frames, a.runs, a.warmup, max_range); });
  fs::create_directories(a.out);
  eval::write_runtime_csv(a.out / "runtime.csv", r);
  m.artifact("runtime", a.out / "runtime.csv");
  std::cout << "preprocess " << r.preprocess_ms << " ms  inference " << r.inference_ms << " ms  peak "
            << r.peak_memory_mb << " MB\n";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadConfig: return kExitUsage;
    case ErrorCode::NonFiniteLoss: return kExitNumeric;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SphereVLAD++ LiDAR place recognition"};
  app.set_version_flag("--version", SPHEREVLAD_VERSION);
  app.require_subcommand(1);

  ProjectArgs project;
  auto* c_project = app.add_subcommand("project", "project point-cloud submaps to range panoramas");
  c_project->add_option("in_dir", project.in, "dataset or directory of point files")->required();
  c_project->add_option("out_dir", project.out, "panorama output directory")->required();
  c_project->add_option("--bandwidth", project.bandwidth, "grid is 2B x 2B")->capture_default_str();
  c_project->add_option("--max-range", project.max_range, "metres")->capture_default_str();
  c_project->add_option("--up", project.up, "up axis of the input clouds: z or y")->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a seeded synthetic world with revisits");
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  add_out(c_synth, synth.out);
  c_synth->add_option("--params", synth.params, "JSON file of synthetic world parameters");
  c_synth->add_option("--landmarks", synth.landmarks);
  c_synth->add_option("--rays-azimuth", synth.rays_azimuth);
  c_synth->add_option("--rays-elevation", synth.rays_elevation);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train a model with the lazy quadruplet loss");
  c_train->add_option("config", train.config, "training config JSON")->check(CLI::ExistingFile);
  train.data.add(c_train, false);
  add_out(c_train, train.out);
  c_train->add_option("--preset", train.preset, "model preset: default | desk | tiny");
  c_train->add_option("--variant", train.variant, "sphere_vlad | sphere_vlad_pp");
  c_train->add_flag("--no-attention", train.no_attention);
  c_train->add_flag("--no-batchnorm", train.no_batchnorm);
  c_train->add_flag("--augment", train.augment, "grid-aligned yaw augmentation of anchors");
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--steps", train.steps);
  c_train->add_option("--lr", train.lr);
  c_train->add_option("--precision", train.precision, "float32 | float64");
  c_train->add_option("--trajectories", train.trajectories, "train only on these trajectory ids");

  IndexArgs index;
  auto* c_index = app.add_subcommand("index", "describe database frames and write an index");
  add_checkpoint(c_index, index.checkpoint);
  index.data.add(c_index, true);
  add_out(c_index, index.out);

  QueryArgs query;
  auto* c_query = app.add_subcommand("query", "rank query frames against an index");
  add_checkpoint(c_query, query.checkpoint);
  c_query->add_option("--index", query.index)->required()->check(CLI::ExistingFile);
  query.data.add(c_query, true);
  add_out(c_query, query.out);
  c_query->add_option("--top-n", query.top_n)->capture_default_str();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "recall, yaw sweep, SNR, ablation and runtime");
  add_checkpoint(c_eval, ev.checkpoint);
  ev.data.add(c_eval, true);
  add_out(c_eval, ev.out);
  c_eval->add_option("--yaw-sweep", ev.yaw_sweep, "degrees, start:step:stop or a comma list");
  c_eval->add_option("--noise-m", ev.noise_m, "yaw sweep translation noise half-range")->capture_default_str();
  c_eval->add_option("--seed", ev.seed)->capture_default_str();
  c_eval->add_flag("--snr", ev.snr);
  c_eval->add_flag("--ablation-table", ev.ablation, "train and evaluate the four bn/attention variants");
  c_eval->add_option("--train-config", ev.train_config, "training config for --ablation-table")
      ->check(CLI::ExistingFile);
  c_eval->add_flag("--bench", ev.bench);
  c_eval->add_option("--bench-runs", ev.bench_runs)->capture_default_str();

  SnrArgs snr;
  auto* c_snr = app.add_subcommand("snr", "centroid activity SNR from a model or an assignment CSV");
  c_snr->add_option("--checkpoint", snr.checkpoint)->check(CLI::ExistingFile);
  c_snr->add_option("--dataset", snr.dataset)->check(CLI::ExistingDirectory);
  c_snr->add_option("--assignments", snr.assignments, "CSV of soft assignments, one row per local descriptor")
      ->check(CLI::ExistingFile);
  c_snr->add_option("--min-fraction", snr.min_fraction, "argmax share that makes a centroid active")
      ->capture_default_str();
  add_out(c_snr, snr.out);

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "per-frame projection and inference time");
  add_checkpoint(c_bench, bench.checkpoint);
  c_bench->add_option("--dataset", bench.dataset)->required()->check(CLI::ExistingDirectory);
  add_out(c_bench, bench.out);
  c_bench->add_option("--runs", bench.runs)->capture_default_str();
  c_bench->add_option("--warmup", bench.warmup)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  RunManifest manifest(sub->get_name(), std::vector<std::string>(argv, argv + argc));
  std::signal(SIGINT, on_sigint);
  try {
    const std::string name = sub->get_name();
    if (name == "project") {
      manifest.set_out(project.out);
      cmd_project(project, manifest);
    } else if (name == "synth") {
      manifest.set_out(synth.out);
      cmd_synth(synth, manifest);
    } else if (name == "train") {
      manifest.set_out(train.out);
      cmd_train(train, manifest);
    } else if (name == "index") {
      manifest.set_out(index.out);
      cmd_index(index, manifest);
    } else if (name == "query") {
      manifest.set_out(query.out);
      cmd_query(query, manifest);
    } else if (name == "eval") {
      manifest.set_out(ev.out);
      cmd_eval(ev, manifest);
    } else if (name == "snr") {
      manifest.set_out(snr.out);
      cmd_snr(snr, manifest);
    } else if (name == "bench") {
      manifest.set_out(bench.out);
      cmd_bench(bench, manifest);
    }
    manifest.finish("complete");
    return kExitOk;
  } catch (const Interrupted&) {
    manifest.finish("interrupted");
    std::cerr << "interrupted\n";
    return kExitInterrupted;
  } catch (const UsageError& e) {
    manifest.finish("failed");
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    manifest.note("error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}});
    manifest.finish("failed");
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  }
}
