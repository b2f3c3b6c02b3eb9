#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

#include "gradcheck.hpp"
#include "spherevlad/ingest/synthetic.hpp"
#include "spherevlad/training/grad_check.hpp"
#include "spherevlad/training/trainer.hpp"
#include "test_util.hpp"

namespace spherevlad::training {
namespace {

Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

Vector<double> random_unit(int dim, Rng& rng) {
  Vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v.normalized();
}

double brute_force_loss(const Vector<double>& a, const std::vector<Vector<double>>& pos,
                        const std::vector<Vector<double>>& neg, const Vector<double>& extra, Margins m) {
  double t1 = -1e300, t2 = -1e300;
  for (const auto& p : pos) {
    for (const auto& n : neg) t1 = std::max(t1, m.m1 + (a - p).norm() - (a - n).norm());
    for (const auto& n : neg) t2 = std::max(t2, m.m2 + (a - p).norm() - (n - extra).norm());
  }
  return std::max(0.0, t1) + std::max(0.0, t2);
}

TEST(LazyQuadrupletLoss, HandExample) {
  // d(a,pos) = 0.4, d(a,neg) = 0.6, d(neg,neg*) = 0.5
  const auto a = vec({0.0}), p = vec({0.4}), n = vec({0.6}), x = vec({1.1});
  const std::vector<Vector<double>> pos{p}, neg{n};
  const auto l = lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{});
  EXPECT_NEAR(l.first.value, 0.3, 1e-15);
  EXPECT_NEAR(l.second.value, 0.1, 1e-15);
  EXPECT_NEAR(l.value, 0.4, 1e-15);
}

TEST(LazyQuadrupletLoss, MatchesExhaustiveMax) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_unit(5, rng), x = random_unit(5, rng);
    std::vector<Vector<double>> pos{random_unit(5, rng), random_unit(5, rng)},
        neg{random_unit(5, rng), random_unit(5, rng)};
    const auto l = lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{});
    EXPECT_DOUBLE_EQ(l.value, brute_force_loss(a, pos, neg, x, Margins{}));
    EXPECT_GE(l.value, 0.0);
  }
}

TEST(LazyQuadrupletLoss, InactiveHingesGiveZeroLossAndGradient) {
  const auto a = vec({0, 0}), p = vec({0.1, 0}), n1 = vec({0, 1}), n2 = vec({0, -1}), x = vec({5, 0});
  const std::vector<Vector<double>> pos{p}, neg{n1, n2};
  const auto l = lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{});
  EXPECT_EQ(l.value, 0.0);
  EXPECT_TRUE(l.grad_anchor.isZero(0));
  EXPECT_TRUE(l.grad_extra.isZero(0));
  for (const auto& g : l.grad_positives) EXPECT_TRUE(g.isZero(0));
  for (const auto& g : l.grad_negatives) EXPECT_TRUE(g.isZero(0));
}

TEST(LazyQuadrupletLoss, InvariantToListPermutation) {
  Rng rng(2);
  const auto a = random_unit(4, rng), x = random_unit(4, rng);
  std::vector<Vector<double>> pos, neg;
  for (int i = 0; i < 3; ++i) pos.push_back(random_unit(4, rng));
  for (int i = 0; i < 5; ++i) neg.push_back(random_unit(4, rng));
  const double base = lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{}).value;
  for (int t = 0; t < 10; ++t) {
    rng.shuffle(pos);
    rng.shuffle(neg);
    EXPECT_DOUBLE_EQ(lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{}).value, base);
  }
}

TEST(LazyQuadrupletLoss, FirstMaximizingIndexWinsTies) {
  const auto a = vec({0.0}), p = vec({0.5}), n = vec({1.0}), x = vec({3.0});
  const std::vector<Vector<double>> pos{p, p}, neg{n, n};
  const auto l = lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{});
  EXPECT_EQ(l.first.positive, 0u);
  EXPECT_EQ(l.first.negative, 0u);
  EXPECT_TRUE(l.grad_positives[1].isZero(0));
  EXPECT_TRUE(l.grad_negatives[1].isZero(0));
}

TEST(LazyQuadrupletLoss, DimensionMismatchThrows) {
  const std::vector<Vector<double>> pos{vec({1, 0})}, neg{vec({1, 0, 0})};
  try {
    lazy_quadruplet_loss<double>(vec({0, 1}), pos, neg, vec({0, 0}), Margins{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(LazyQuadrupletLoss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto a = random_unit(3, rng), x = random_unit(3, rng);
  std::vector<Vector<double>> pos{random_unit(3, rng), random_unit(3, rng)}, neg{random_unit(3, rng)};
  auto f = [&] { return lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{}, false).value; };
  const auto l = lazy_quadruplet_loss<double>(a, pos, neg, x, Margins{});
  ASSERT_GT(l.first.value, 0.0);
  using testing::group_error;
  using testing::numeric_gradient;
  EXPECT_LT(group_error({l.grad_anchor.data(), 3}, numeric_gradient({a.data(), 3}, f)), 1e-7);
  EXPECT_LT(group_error({l.grad_extra.data(), 3}, numeric_gradient({x.data(), 3}, f)), 1e-7);
  for (int i = 0; i < 2; ++i)
    EXPECT_LT(group_error({l.grad_positives[i].data(), 3}, numeric_gradient({pos[i].data(), 3}, f)), 1e-7);
  EXPECT_LT(group_error({l.grad_negatives[0].data(), 3}, numeric_gradient({neg[0].data(), 3}, f)), 1e-7);
}

TEST(Adam, StepsTowardMinimumAndRespectsFrozen) {
  model::ParameterSet<double> p;
  p.add("a.x", {2}, 1.0);
  p.add("b.y", {1}, 1.0);
  Adam<double> adam(p, {0.1}, {"b."});
  for (int i = 0; i < 200; ++i) {
    auto g = p.zeros_like();
    for (auto& [name, t] : g)
      for (std::size_t k = 0; k < t.size(); ++k) t.data[k] = 2 * p.at(name).data[k];  // d/dx x^2
    adam.step(p, g);
  }
  EXPECT_LT(std::abs(p.at("a.x").data[0]), 0.05);
  EXPECT_EQ(p.at("b.y").data[0], 1.0);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  model::ParameterSet<double> p;
  p.add("w", {1}, 0.0);
  Adam<double> adam(p, {0.01});
  auto g = p.zeros_like();
  g.at("w").data[0] = 123.0;
  adam.step(p, g);
  EXPECT_NEAR(p.at("w").data[0], -0.01, 1e-9);
}

TEST(TrainConfig, DefaultsMatchPaperMargins) {
  const TrainConfig c;
  EXPECT_EQ(c.margins.m1, 0.5);
  EXPECT_EQ(c.margins.m2, 0.2);
  EXPECT_EQ(c.d_pos, 8.0);
  EXPECT_EQ(c.d_neg, 16.0);
  EXPECT_FALSE(c.rotation_augmentation);
}

TEST(TrainConfig, JsonRoundTripAndOverlay) {
  TrainConfig c;
  c.steps = 17;
  c.model.variant = model::Variant::SphereVlad;
  nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  EXPECT_EQ(back.steps, 17);
  EXPECT_EQ(back.model, c.model);
  TrainConfig d;
  apply_json(nlohmann::json{{"model", {{"preset", "tiny"}, {"attention", false}}}, {"m1", 0.7}}, d);
  EXPECT_EQ(d.model.encoder.input_bandwidth, 4);
  EXPECT_FALSE(d.model.attention);
  EXPECT_EQ(d.margins.m1, 0.7);
}

TEST(TrainConfig, UnknownKeyNamesTheKey) {
  try {
    nlohmann::json{{"learning_rat", 0.1}}.get<TrainConfig>();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadConfig);
    EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos);
  }
}

TEST(TrainConfig, ValidationRejectsBadMarginsAndThresholds) {
  TrainConfig c;
  c.margins.m1 = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.d_pos = 20;
  EXPECT_THROW(c.validate(), Error);
}

TEST(GradCheck, TinyConfigPassesForEveryGroup) {
  const auto report = grad_check(model::ModelConfig::tiny());
  EXPECT_GT(report.loss, 0.0);
  EXPECT_TRUE(report.passed) << report.max_rel_err;
  for (const auto& row : report.rows) {
    EXPECT_LE(row.rel_err, 1e-4) << row.name;
    EXPECT_GT(row.max_abs_gradient, 0.0) << row.name;
  }
  EXPECT_EQ(report.rows.size(), model::Model<double>(model::ModelConfig::tiny()).parameters().size());
}

TEST(GradCheck, VladGroupsOnly) {
  GradCheckOptions opt;
  opt.groups = {"vlad."};
  opt.seed = 5;
  const auto report = grad_check(model::ModelConfig::tiny(), opt);
  EXPECT_EQ(report.rows.size(), 3u);
  EXPECT_TRUE(report.passed) << report.max_rel_err;
}

TEST(GradCheck, OmegaAlone) {
  GradCheckOptions opt;
  opt.groups = {"att.omega"};
  opt.seed = 6;
  const auto report = grad_check(model::ModelConfig::tiny(), opt);
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_LE(report.rows[0].rel_err, 1e-4);
}

TEST(GradCheck, ZeroLossTupleHasZeroGradients) {
  GradCheckOptions opt;
  opt.margins = {-10.0, -10.0};
  const auto report = grad_check(model::ModelConfig::tiny(), opt);
  EXPECT_EQ(report.loss, 0.0);
  for (const auto& row : report.rows) EXPECT_EQ(row.max_abs_gradient, 0.0) << row.name;
}

// ---------------------------------------------------------------------------
// Training loop

const std::vector<ingest::SubmapFrame>& small_world() {
  static const auto frames = [] {
    ingest::SyntheticParams p;
    p.rays_azimuth = 64;
    p.rays_elevation = 16;
    p.n_landmarks = 120;
    return ingest::make_synthetic_world(21, p, nullptr);
  }();
  return frames;
}

TrainConfig tiny_run(int steps) {
  TrainConfig c;
  c.model = model::ModelConfig::tiny();
  c.steps = steps;
  c.seed = 3;
  c.validation_tuples = 4;
  c.eval_every = 5;
  return c;
}

TEST(Train, SameSeedGivesIdenticalCurve) {
  const auto cfg = tiny_run(6);
  const auto a = train<float>(small_world(), cfg), b = train<float>(small_world(), cfg);
  ASSERT_EQ(a.curve.size(), 7u);
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].train_loss, b.curve[i].train_loss);
    EXPECT_EQ(a.curve[i].val_loss, b.curve[i].val_loss);
  }
  EXPECT_FALSE(a.curve[0].train_loss.has_value());
  EXPECT_TRUE(a.curve[0].val_loss.has_value());
  EXPECT_TRUE(a.curve.back().val_loss.has_value());
}

TEST(Train, WritesCurveAndCheckpoint) {
  testing::TempDir dir;
  auto cfg = tiny_run(4);
  cfg.checkpoint_every = 2;
  auto r = train<float>(small_world(), cfg, dir.path());
  ASSERT_EQ(r.checkpoints.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_step2.npz"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint.npz"));
  std::ifstream in(dir / "loss_curve.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,train_loss,val_loss");
  auto loaded = model::load_checkpoint<float>(dir / "checkpoint.npz");
  auto trained = r.model;
  const auto pano = sphere::project(small_world()[0], 50.0, 4);
  EXPECT_EQ(loaded.describe(pano).values, trained.describe(pano).values);
}

TEST(Train, AugmentationTouchesEachAnchorOnce) {
  auto cfg = tiny_run(5);
  cfg.rotation_augmentation = true;
  cfg.batch_tuples = 2;
  std::vector<int> per_step(6, 0);
  TrainHooks hooks;
  hooks.on_augment = [&](int step, std::size_t, int shift) {
    ++per_step[step];
    EXPECT_EQ(shift % (4 / 2), 0);  // coarse-grid aligned: B0 / B_f input cells
  };
  train<float>(small_world(), cfg, std::nullopt, hooks);
  for (int s = 1; s <= 5; ++s) EXPECT_EQ(per_step[s], 2) << s;
  EXPECT_EQ(per_step[0], 0);
}

TEST(Train, GridAlignedYawLeavesLossUnchanged) {
  auto net = model::Model<double>::random(model::ModelConfig::desk(), 4);
  const auto& frames = small_world();
  const ingest::TupleMiner miner(frames, TrainConfig{}.tuple_shape());
  Rng rng(4);
  const auto t = miner.sample(rng);
  const auto members = detail::tuple_members(t);
  std::vector<harmonic::S2Signal<double>> batch, rotated;
  for (std::size_t m = 0; m < members.size(); ++m) {
    const auto pano = sphere::project(frames[members[m]], 50.0, 16);
    batch.push_back(pano.to_signal<double>());
    rotated.push_back(m == 0 ? sphere::rotate_panorama_yaw(pano, 12).to_signal<double>() : batch.back());
  }
  auto loss_of = [&](const std::vector<harmonic::S2Signal<double>>& b) {
    return detail::batch_losses<double>(net.forward(b, {true, false}, nullptr), 2, 6, Margins{}, nullptr).front();
  };
  EXPECT_NEAR(loss_of(rotated), loss_of(batch), 1e-10);
}

TEST(Train, NonFiniteLossStopsWithDump) {
  testing::TempDir dir;
  auto cfg = tiny_run(5);
  cfg.margins.m1 = std::numeric_limits<double>::infinity();
  try {
    train<float>(small_world(), cfg, dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "nonfinite_dump.json"));
}

TEST(Train, StopHookEndsEarly) {
  auto cfg = tiny_run(50);
  int polls = 0;
  TrainHooks hooks;
  hooks.should_stop = [&] { return ++polls > 3; };
  const auto r = train<float>(small_world(), cfg, std::nullopt, hooks);
  EXPECT_TRUE(r.interrupted);
  EXPECT_EQ(r.curve.back().step, 3);
}

TEST(Train, FrozenPrefixesAreNotUpdated) {
  auto cfg = tiny_run(3);
  cfg.frozen = {"conv", "bn", "att."};
  const auto r = train<float>(small_world(), cfg);
  const auto init = model::Model<float>::random(cfg.model, detail::derive_seed(cfg.seed, 0));
  EXPECT_EQ(r.model.parameters().at("conv2.filters").data, init.parameters().at("conv2.filters").data);
  EXPECT_NE(r.model.parameters().at("vlad.w").data, init.parameters().at("vlad.w").data);
}

}  // namespace
}  // namespace spherevlad::training
