#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "spherevlad/eval/experiments.hpp"
#include "spherevlad/eval/index.hpp"
#include "spherevlad/eval/metrics.hpp"
#include "spherevlad/eval/snr.hpp"
#include "spherevlad/ingest/synthetic.hpp"
#include "test_util.hpp"

namespace spherevlad::eval {
namespace {

GlobalDescriptor descriptor(std::int64_t id, std::vector<double> v) {
  GlobalDescriptor g;
  g.values = std::move(v);
  g.frame_id = id;
  return g;
}

Pose at(double x, double y = 0) {
  Pose p;
  p.translation = Vec3(x, y, 0);
  return p;
}

GlobalDescriptor random_descriptor(std::int64_t id, int dim, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return descriptor(id, v);
}

TEST(DescriptorIndex, SingleEntry) {
  const std::vector<GlobalDescriptor> d{descriptor(7, {1, 0})};
  const std::vector<Pose> p{at(0)};
  const auto idx = build_index(d, p);
  EXPECT_EQ(idx.size(), 1u);
  EXPECT_EQ(idx.dimension(), 2u);
}

TEST(DescriptorIndex, EmptyAndRaggedInputsThrow) {
  try {
    build_index(std::vector<GlobalDescriptor>{}, std::vector<Pose>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDatabase);
  }
  const std::vector<GlobalDescriptor> d{descriptor(1, {1, 0}), descriptor(2, {1, 0, 0})};
  const std::vector<Pose> p{at(0), at(1)};
  try {
    build_index(d, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(DescriptorIndex, ExactMatchRanksFirstAtZero) {
  Rng rng(1);
  std::vector<GlobalDescriptor> d;
  std::vector<Pose> p;
  for (int i = 0; i < 20; ++i) {
    d.push_back(random_descriptor(i, 8, rng));
    p.push_back(at(i));
  }
  const auto idx = build_index(d, p);
  auto q = d[13];
  // float32 storage, so the query is the stored row itself
  for (std::size_t k = 0; k < q.values.size(); ++k) q.values[k] = static_cast<float>(q.values[k]);
  const auto r = idx.query(q);
  EXPECT_EQ(r.ranking.front().db_id, 13);
  EXPECT_EQ(r.ranking.front().distance, 0.0);
}

TEST(DescriptorIndex, DuplicatesKeepDistinctIdsAndTieByAscendingId) {
  const std::vector<GlobalDescriptor> d{descriptor(9, {0, 1}), descriptor(4, {0, 1}), descriptor(5, {1, 0})};
  const std::vector<Pose> p{at(0), at(1), at(2)};
  const auto idx = build_index(d, p);
  EXPECT_EQ(idx.entries()[0].frame_id, 4);
  const auto r = idx.query(std::vector<double>{0, 1});
  ASSERT_EQ(r.ranking.size(), 3u);
  EXPECT_EQ(r.ranking[0].db_id, 4);
  EXPECT_EQ(r.ranking[1].db_id, 9);
  EXPECT_EQ(r.ranking[2].db_id, 5);
}

TEST(DescriptorIndex, ThreeEntryHandExample) {
  const std::vector<GlobalDescriptor> d{descriptor(0, {1, 0}), descriptor(1, {0, 1}), descriptor(2, {0.6, 0.8})};
  const std::vector<Pose> p{at(0), at(10), at(20)};
  const auto idx = build_index(d, p);
  const auto r = idx.query(std::vector<double>{0.8, 0.6});
  // distances: id0 sqrt(.04+.36), id1 sqrt(.64+.16), id2 sqrt(.04+.04)
  ASSERT_EQ(r.ranking.size(), 3u);
  EXPECT_EQ(r.ranking[0].db_id, 2);
  EXPECT_EQ(r.ranking[1].db_id, 0);
  EXPECT_EQ(r.ranking[2].db_id, 1);
  EXPECT_NEAR(r.ranking[0].distance, std::sqrt(0.08), 1e-7);
}

TEST(DescriptorIndex, QueryDimensionMismatchThrows) {
  const std::vector<GlobalDescriptor> d{descriptor(0, {1, 0})};
  const std::vector<Pose> p{at(0)};
  try {
    build_index(d, p).query(std::vector<double>{1, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(DescriptorIndex, MatchesBruteForceOnRandomDatabases) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + static_cast<int>(rng.index(200)), dim = 1 + static_cast<int>(rng.index(16));
    std::vector<GlobalDescriptor> d;
    std::vector<Pose> p;
    for (int i = 0; i < m; ++i) {
      d.push_back(random_descriptor(static_cast<std::int64_t>(rng.index(1000)), dim, rng));
      p.push_back(at(i));
    }
    const auto idx = build_index(d, p);
    const auto q = random_descriptor(-1, dim, rng);
    const auto r = idx.query(q);
    // brute force in float32-rounded storage
    std::vector<std::pair<double, std::int64_t>> brute;
    for (const auto& g : d) {
      double s = 0;
      for (int k = 0; k < dim; ++k) {
        const double diff = q.values[static_cast<std::size_t>(k)] - static_cast<float>(g.values[static_cast<std::size_t>(k)]);
        s += diff * diff;
      }
      brute.emplace_back(std::sqrt(s), g.frame_id);
    }
    std::sort(brute.begin(), brute.end());
    ASSERT_EQ(r.ranking.size(), brute.size());
    for (std::size_t i = 0; i < brute.size(); ++i) {
      EXPECT_EQ(r.ranking[i].distance, brute[i].first);
      EXPECT_EQ(r.ranking[i].db_id, brute[i].second);
      if (i > 0) {
        EXPECT_LE(r.ranking[i - 1].distance, r.ranking[i].distance);
      }
    }
  }
}

TEST(DescriptorIndex, TopNTruncates) {
  Rng rng(3);
  std::vector<GlobalDescriptor> d;
  std::vector<Pose> p;
  for (int i = 0; i < 30; ++i) {
    d.push_back(random_descriptor(i, 4, rng));
    p.push_back(at(i));
  }
  const auto idx = build_index(d, p);
  const auto q = random_descriptor(-1, 4, rng);
  const auto full = idx.query(q), top = idx.query(q, 5);
  ASSERT_EQ(top.ranking.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(top.ranking[i].db_id, full.ranking[i].db_id);
}

TEST(DescriptorIndex, SaveLoadRoundTripGivesIdenticalQueries) {
  testing::TempDir dir;
  Rng rng(4);
  std::vector<GlobalDescriptor> d;
  std::vector<Pose> p;
  for (int i = 0; i < 40; ++i) {
    d.push_back(random_descriptor(100 - i, 12, rng));
    Pose pose = at(rng.uniform() * 50, rng.uniform() * 50);
    pose.rotation = rotation_z(rng.uniform() * 6);
    p.push_back(pose);
  }
  const auto idx = build_index(d, p);
  idx.save(dir / "db.svix");
  const auto back = DescriptorIndex::load(dir / "db.svix");
  ASSERT_EQ(back.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(back.entries()[i].frame_id, idx.entries()[i].frame_id);
    EXPECT_EQ(back.entries()[i].pose.rotation, idx.entries()[i].pose.rotation);
    EXPECT_EQ(back.entries()[i].pose.translation, idx.entries()[i].pose.translation);
  }
  for (int t = 0; t < 10; ++t) {
    const auto q = random_descriptor(-1, 12, rng);
    const auto a = idx.query(q, 0, at(3)), b = back.query(q, 0, at(3));
    for (std::size_t i = 0; i < a.ranking.size(); ++i) {
      EXPECT_EQ(a.ranking[i].db_id, b.ranking[i].db_id);
      EXPECT_EQ(a.ranking[i].distance, b.ranking[i].distance);
      EXPECT_EQ(a.ranking[i].pose_distance, b.ranking[i].pose_distance);
    }
  }
}

TEST(DescriptorIndex, LoadRejectsForeignFile) {
  testing::TempDir dir;
  std::ofstream(dir / "bad.svix") << "NOPE0000";
  try {
    DescriptorIndex::load(dir / "bad.svix");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
  }
}

TEST(DescriptorIndex, SuccessFlagsUseGroundTruthDistance) {
  const std::vector<GlobalDescriptor> d{descriptor(0, {1, 0}), descriptor(1, {0, 1})};
  const std::vector<Pose> p{at(4), at(100)};
  const auto idx = build_index(d, p);
  const std::vector<double> thresholds{3.0, 5.0};
  const auto r = idx.query(std::vector<double>{1, 0}, 0, 0, at(0), thresholds);
  ASSERT_EQ(r.flags.size(), 2u);
  EXPECT_FALSE(r.flags[0].success);  // 4 m away fails the 3 m rule
  EXPECT_TRUE(r.flags[1].success);
}

// ---------------------------------------------------------------------------
// Recall

RetrievalResult ranked(std::vector<double> pose_distances) {
  RetrievalResult r;
  for (std::size_t i = 0; i < pose_distances.size(); ++i)
    r.ranking.push_back({static_cast<std::int64_t>(i), static_cast<double>(i), pose_distances[i]});
  return r;
}

TEST(Recall, AllFirstMatchesGiveFullRecall) {
  const std::vector<RetrievalResult> res{ranked({1, 50}), ranked({0, 9})};
  const auto r = recall_at_n(res, 5.0, 2, 2);
  EXPECT_EQ(r.ar1, 1.0);
  EXPECT_EQ(r.ar1_percent, 1.0);
}

TEST(Recall, SuccessAtRankTwoOnly) {
  const std::vector<RetrievalResult> res{ranked({20, 2, 30})};
  const auto r = recall_at_n(res, 5.0, 3, 3);
  EXPECT_EQ(r.recall[0], 0.0);
  EXPECT_EQ(r.recall[1], 1.0);
  EXPECT_EQ(r.recall[2], 1.0);
}

TEST(Recall, OnePercentCutoffRule) {
  EXPECT_EQ(one_percent_cutoff(1), 1u);
  EXPECT_EQ(one_percent_cutoff(49), 1u);
  EXPECT_EQ(one_percent_cutoff(100), 1u);
  EXPECT_EQ(one_percent_cutoff(150), 2u);  // round half away from zero
  EXPECT_EQ(one_percent_cutoff(3000), 30u);
  Rng rng(5);
  std::vector<RetrievalResult> res;
  for (int q = 0; q < 40; ++q) {
    std::vector<double> d(100);
    for (auto& v : d) v = rng.uniform() * 40;
    res.push_back(ranked(d));
  }
  const auto r = recall_at_n(res, 5.0, 100);
  EXPECT_EQ(r.ar1_percent, r.ar1);
}

TEST(Recall, CutoffAtThreeThousandUsesThirtyNeighbours) {
  std::vector<double> d(3000, 100.0);
  d[29] = 1.0;
  std::vector<double> late(3000, 100.0);
  late[30] = 1.0;
  const std::vector<RetrievalResult> res{ranked(d), ranked(late)};
  const auto r = recall_at_n(res, 5.0, 3000);
  EXPECT_EQ(r.one_percent_cutoff, 30u);
  EXPECT_EQ(r.ar1_percent, 0.5);
  EXPECT_EQ(r.ar1, 0.0);
}

TEST(Recall, InvariantToQueryAndDatabaseOrder) {
  Rng rng(6);
  std::vector<GlobalDescriptor> d;
  std::vector<Pose> p;
  for (int i = 0; i < 60; ++i) {
    d.push_back(random_descriptor(i, 6, rng));
    p.push_back(at(rng.uniform() * 30, rng.uniform() * 30));
  }
  std::vector<GlobalDescriptor> q;
  std::vector<Pose> qp;
  for (int i = 0; i < 25; ++i) {
    q.push_back(random_descriptor(1000 + i, 6, rng));
    qp.push_back(at(rng.uniform() * 30, rng.uniform() * 30));
  }
  const auto base = evaluate_descriptors(build_index(d, p), q, qp, {});
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<GlobalDescriptor> d2;
  std::vector<Pose> p2;
  for (auto i : order) {
    d2.push_back(d[i]);
    p2.push_back(p[i]);
  }
  std::vector<std::size_t> qorder(q.size());
  std::iota(qorder.begin(), qorder.end(), 0);
  rng.shuffle(qorder);
  std::vector<GlobalDescriptor> q2;
  std::vector<Pose> qp2;
  for (auto i : qorder) {
    q2.push_back(q[i]);
    qp2.push_back(qp[i]);
  }
  const auto shuffled = evaluate_descriptors(build_index(d2, p2), q2, qp2, {});
  EXPECT_EQ(shuffled.recall.recall, base.recall.recall);
  EXPECT_EQ(shuffled.recall.ar1_percent, base.recall.ar1_percent);
}

// ---------------------------------------------------------------------------
// SNR

std::vector<std::size_t> fixture_counts(std::size_t active, std::size_t total) {
  std::vector<std::size_t> c(total, 0);
  for (std::size_t k = 0; k < active; ++k) c[k] = 10;
  return c;
}

TEST(Snr, PaperRatios) {
  EXPECT_DOUBLE_EQ(snr_from_counts(fixture_counts(7, 32)).snr, 7.0 / 25.0);
  EXPECT_EQ(std::round(snr_from_counts(fixture_counts(7, 32)).snr * 100) / 100, 0.28);
  EXPECT_EQ(std::round(snr_from_counts(fixture_counts(4, 32)).snr * 1000) / 1000, 0.143);
  EXPECT_EQ(std::round(snr_from_counts(fixture_counts(8, 32)).snr * 1000) / 1000, 0.333);
}

TEST(Snr, ExactForEveryActiveCount) {
  for (std::size_t total = 1; total <= 40; ++total)
    for (std::size_t active = 0; active < total; ++active) {
      const auto r = snr_from_counts(fixture_counts(active, total));
      EXPECT_EQ(r.n_active, active);
      EXPECT_EQ(r.snr, static_cast<double>(active) / static_cast<double>(total - active));
      EXPECT_FALSE(r.degenerate);
    }
}

TEST(Snr, AllActiveIsDegenerate) {
  const auto r = snr_from_counts(fixture_counts(4, 4));
  EXPECT_TRUE(r.degenerate);
  EXPECT_TRUE(std::isinf(r.snr));
}

TEST(Snr, PathologicalThresholdGivesZero) {
  const auto r = snr_from_counts(fixture_counts(5, 8), {1.5});
  EXPECT_EQ(r.n_active, 0u);
  EXPECT_EQ(r.snr, 0.0);
}

TEST(Snr, OnePercentRuleBoundary) {
  std::vector<std::size_t> c{99, 1, 0, 0};  // 1 of 100 is exactly 1%
  EXPECT_EQ(snr_from_counts(c).n_active, 2u);
  c = {199, 1, 0, 0};  // 0.5%
  EXPECT_EQ(snr_from_counts(c).n_active, 1u);
}

TEST(Snr, AssignmentMatrixArgmaxWithLowestIndexTies) {
  model::Matrix<double> a(3, 3);
  a << 0.2, 0.5, 0.3,  //
      1.0 / 3, 1.0 / 3, 1.0 / 3,  //
      0.4, 0.2, 0.4;
  std::vector<std::size_t> counts(3, 0);
  accumulate_argmax(a, counts);
  EXPECT_EQ(counts, (std::vector<std::size_t>{2, 1, 0}));
}

TEST(Snr, FixtureCsvReproducesPaperValue) {
  const auto m = load_assignment_csv(std::filesystem::path(SPHEREVLAD_TEST_DATA) / "assign_7_of_32.csv");
  EXPECT_EQ(m.cols(), 32);
  const auto r = snr_from_assignments(m);
  EXPECT_EQ(r.n_active, 7u);
  EXPECT_DOUBLE_EQ(r.snr, 0.28);
}

TEST(Snr, CsvRowsMustSumToOne) {
  testing::TempDir dir;
  std::ofstream(dir / "bad.csv") << "c0,c1\n0.5,0.6\n";
  try {
    load_assignment_csv(dir / "bad.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
  }
}

// ---------------------------------------------------------------------------
// Model-driven experiments on a small world

const std::vector<ingest::SubmapFrame>& world() {
  static const auto frames = [] {
    ingest::SyntheticParams p;
    p.rays_azimuth = 96;
    p.rays_elevation = 24;
    p.n_landmarks = 150;
    return ingest::make_synthetic_world(4, p, nullptr);
  }();
  return frames;
}

ingest::SplitSpec trajectory_split(const std::vector<ingest::SubmapFrame>& frames, std::size_t stride = 4) {
  ingest::SplitSpec s;
  std::size_t i = 0;
  for (const auto& f : frames) {
    if (i++ % stride) continue;
    (f.trajectory_id == 0 ? s.database_ids : s.query_ids).push_back(f.frame_id);
  }
  return s;
}

model::ModelConfig small_model() {
  auto cfg = model::ModelConfig::tiny();
  cfg.encoder.input_bandwidth = 8;
  cfg.encoder.layers = {{4, 8}, {4, 4}, {4, 4}, {4, 2}};
  return cfg;
}

TEST(ClusterSummary, CountsConserveLocalDescriptors) {
  auto net = model::Model<float>::random(small_model(), 1);
  const std::vector<ingest::SubmapFrame> few(world().begin(), world().begin() + 5);
  const auto counts = cluster_assignment_summary(net, few);
  EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}),
            5 * static_cast<std::size_t>(small_model().encoder.local_count()));
}

TEST(ClusterSummary, ZeroVladWeightsConcentrateOnClusterZero) {
  auto net = model::Model<float>::random(small_model(), 1);
  for (const char* n : {"vlad.w", "vlad.b"})
    std::fill(net.parameters().at(n).data.begin(), net.parameters().at(n).data.end(), 0.0f);
  const std::vector<ingest::SubmapFrame> few(world().begin(), world().begin() + 3);
  const auto counts = cluster_assignment_summary(net, few);
  EXPECT_EQ(counts[0], 3 * static_cast<std::size_t>(small_model().encoder.local_count()));
  const auto r = snr_report(net, few);
  EXPECT_EQ(r.n_active, 1u);
}

TEST(YawSweep, ZeroYawMatchesBaselineEvaluation) {
  auto net = model::Model<float>::random(small_model(), 2);
  const auto split = trajectory_split(world());
  const auto base = evaluate(net, world(), split);
  const auto rows = yaw_sweep_eval(net, world(), split, {0.0}, 0.0, 1);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].recall.recall, base.recall.recall);
  for (std::size_t q = 0; q < base.results.size(); ++q)
    EXPECT_EQ(rows[0].results[q].ranking.front().db_id, base.results[q].ranking.front().db_id);
}

TEST(YawSweep, GridAlignedYawsGiveIdenticalRankings) {
  auto net = model::Model<double>::random(small_model(), 3);
  const auto split = trajectory_split(world(), 8);
  // coarsest grid has 2 * 2 azimuth cells, so multiples of 90 degrees are exact
  const auto rows = yaw_sweep_eval(net, world(), split, {0.0, 90.0, 180.0, 270.0}, 0.0, 1);
  for (std::size_t y = 1; y < rows.size(); ++y) {
    EXPECT_EQ(rows[y].recall.recall, rows[0].recall.recall);
    for (std::size_t q = 0; q < rows[0].results.size(); ++q) {
      const auto& a = rows[0].results[q].ranking;
      const auto& b = rows[y].results[q].ranking;
      for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].db_id, b[i].db_id);
        EXPECT_NEAR(a[i].distance, b[i].distance, 1e-6);
      }
    }
  }
}

TEST(YawSweep, ParsesPaperGrid) {
  EXPECT_EQ(parse_yaw_list("0:30:180"), (std::vector<double>{0, 30, 60, 90, 120, 150, 180}));
  EXPECT_EQ(parse_yaw_list("0,45"), (std::vector<double>{0, 45}));
  EXPECT_THROW(parse_yaw_list("0:0:10"), Error);
  EXPECT_THROW(parse_yaw_list("abc"), Error);
}

TEST(YawSweep, TranslationNoiseChangesDescriptors) {
  auto net = model::Model<float>::random(small_model(), 2);
  const auto& f = world()[0];
  const auto clean = net.describe(perturbed_panorama(f, 0, 0, 0, 50, 8));
  const auto noisy = net.describe(perturbed_panorama(f, 0, 0.9, -0.7, 50, 8));
  EXPECT_NE(clean.values, noisy.values);
  EXPECT_EQ(perturbed_panorama(f, 0, 0, 0, 50, 8).values, sphere::project(f, 50, 8).values);
}

TEST(Ablation, FourRowsInFixedOrder) {
  training::TrainConfig cfg;
  cfg.model = small_model();
  cfg.steps = 1;
  cfg.validation_tuples = 1;
  const auto split = trajectory_split(world(), 8);
  const auto rows = run_ablation<float>(world(), world(), split, cfg);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_FALSE(rows[0].batchnorm);
  EXPECT_FALSE(rows[0].attention);
  EXPECT_FALSE(rows[1].batchnorm);
  EXPECT_TRUE(rows[1].attention);
  EXPECT_TRUE(rows[2].batchnorm);
  EXPECT_FALSE(rows[2].attention);
  EXPECT_TRUE(rows[3].batchnorm);
  EXPECT_TRUE(rows[3].attention);
  testing::TempDir dir;
  write_ablation_csv(dir / "ablation.csv", rows);
  std::ifstream in(dir / "ablation.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 5);
}

TEST(Benchmark, ProjectionIsPartOfTotal) {
  auto net = model::Model<float>::random(small_model(), 2);
  const std::vector<ingest::SubmapFrame> few(world().begin(), world().begin() + 3);
  const auto r = benchmark_runtime(net, few, 20, 2);
  EXPECT_EQ(r.runs, 20u);
  EXPECT_GT(r.preprocess_ms, 0.0);
  EXPECT_GT(r.inference_ms, 0.0);
  EXPECT_LE(r.preprocess_ms, r.total_ms);
  EXPECT_GT(r.peak_memory_mb, 0.0);
}

}  // namespace
}  // namespace spherevlad::eval
