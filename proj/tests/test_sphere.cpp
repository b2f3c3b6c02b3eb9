#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "spherevlad/common/random.hpp"
#include "spherevlad/sphere/panorama.hpp"
#include "test_util.hpp"

namespace spherevlad::sphere {
namespace {

constexpr double kPi = std::numbers::pi;

ingest::SubmapFrame random_frame(Rng& rng, std::size_t n, double extent = 60.0) {
  ingest::SubmapFrame f;
  for (std::size_t i = 0; i < n; ++i)
    f.points.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-10, 10));
  return f;
}

TEST(SphericalCoords, AxisPoint) {
  const auto c = to_spherical_coords(1, 0, 0);
  EXPECT_DOUBLE_EQ(c.azimuth, 0.0);
  EXPECT_DOUBLE_EQ(c.polar, kPi / 2);
  EXPECT_DOUBLE_EQ(c.range, 1.0);
}

TEST(SphericalCoords, PolePoint) {
  const auto c = to_spherical_coords(0, 0, 2);
  EXPECT_DOUBLE_EQ(c.azimuth, 0.0);
  EXPECT_DOUBLE_EQ(c.polar, 0.0);
  EXPECT_DOUBLE_EQ(c.range, 2.0);
}

TEST(SphericalCoords, DiagonalPoint) {
  const auto c = to_spherical_coords(1, 1, std::sqrt(2.0));
  EXPECT_NEAR(c.azimuth, kPi / 4, 1e-15);
  EXPECT_NEAR(c.polar, kPi / 4, 1e-15);
  EXPECT_NEAR(c.range, 2.0, 1e-15);
}

TEST(SphericalCoords, NegativeAzimuthWraps) {
  const auto c = to_spherical_coords(0, -1, 0);
  EXPECT_NEAR(c.azimuth, 1.5 * kPi, 1e-15);
  EXPECT_GE(to_spherical_coords(1, -0.0, 0).azimuth, 0.0);
}

TEST(SphericalCoords, OriginThrows) {
  try {
    to_spherical_coords(0, 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OriginPoint);
  }
}

TEST(Project, DefaultGridIsSixtyFourSquare) {
  Rng rng(1);
  const auto pano = project(random_frame(rng, 100), 50.0, 32);
  EXPECT_EQ(pano.side(), 64);
  EXPECT_EQ(pano.values.size(), 64u * 64u);
  for (float v : pano.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Project, EmptyFrameGivesZeroGrid) {
  const auto pano = project(ingest::SubmapFrame{}, 50.0, 8);
  for (float v : pano.values) EXPECT_EQ(v, 0.0f);
}

TEST(Project, NearestReturnWinsInCell) {
  ingest::SubmapFrame f;
  const Vec3 dir = Vec3(1.0, 0.05, 0.02).normalized();
  f.points = {(10 * dir).cast<float>(), (30 * dir).cast<float>(), {0, 0, 0}, (60 * dir).cast<float>()};
  const auto pano = project(f, 50.0, 32);
  const auto c = to_spherical_coords(dir.x(), dir.y(), dir.z());
  const int a = static_cast<int>(c.azimuth / (kPi / 32)), b = static_cast<int>(c.polar / (kPi / 64));
  EXPECT_NEAR(pano.at(a, b), 0.2f, 1e-6);
  int nonzero = 0;
  for (float v : pano.values) nonzero += v != 0.0f;
  EXPECT_EQ(nonzero, 1);
}

TEST(Project, BoundaryGoesToLowerIndexCell) {
  ingest::SubmapFrame f;
  f.points = {{0, 1, 0}};  // azimuth exactly pi/2: boundary between cells 3 and 4 at B=8
  const auto pano = project(f, 50.0, 8);
  EXPECT_GT(pano.at(4, 8), 0.0f);  // pi/2 / (pi/8) = 4; polar pi/2 / (pi/16) = 8
}

TEST(Project, InvariantToPointOrder) {
  Rng rng(2);
  auto f = random_frame(rng, 2000);
  const auto a = project(f, 50.0, 16);
  rng.shuffle(f.points);
  EXPECT_EQ(project(f, 50.0, 16).values, a.values);
}

TEST(Project, TighteningRangeOnlyTouchesExcludedCells) {
  Rng rng(3);
  const auto f = random_frame(rng, 3000);
  const double loose = 60, tight = 30;
  const auto a = project(f, loose, 8), b = project(f, tight, 8);
  // recompute nearest range per cell brute force and compare
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) {
      double nearest_all = 1e300;
      for (const auto& p : f.points) {
        const auto c = to_spherical_coords(p.x(), p.y(), p.z());
        if (static_cast<int>(c.azimuth / (kPi / 8)) == i && static_cast<int>(c.polar / (kPi / 16)) == j &&
            c.range <= loose)
          nearest_all = std::min(nearest_all, c.range);
      }
      const double range_a = a.at(i, j) * loose, range_b = b.at(i, j) * tight;
      if (nearest_all <= tight) {
        EXPECT_NEAR(range_b, range_a, 1e-4) << i << "," << j;  // unchanged cell
      } else {
        EXPECT_EQ(b.at(i, j), 0.0f);  // nearest excluded
      }
    }
  }
}

TEST(RotateYaw, ZeroAndFullTurnAreIdentity) {
  Rng rng(4);
  const auto pano = project(random_frame(rng, 500), 50.0, 8);
  EXPECT_EQ(rotate_panorama_yaw(pano, 0).values, pano.values);
  EXPECT_EQ(rotate_panorama_yaw(pano, 16).values, pano.values);
  EXPECT_EQ(rotate_panorama_yaw(rotate_panorama_yaw(pano, 5), -5).values, pano.values);
}

TEST(RotateYaw, CommutesWithProjectionForGridAlignedYaw) {
  Rng rng(5);
  const int b = 8, n = 2 * b;
  for (int trial = 0; trial < 10; ++trial) {
    auto f = random_frame(rng, 1500);
    // drop points within float noise of an azimuth boundary
    std::erase_if(f.points, [&](const ingest::Point& p) {
      const double a = to_spherical_coords(p.x(), p.y(), p.z()).azimuth / (2 * kPi / n);
      return std::abs(a - std::round(a)) < 1e-4;
    });
    const int k = static_cast<int>(rng.index(n));
    const auto lhs = project(rotate_points_yaw(f, k * 2 * kPi / n), 50.0, b);
    const auto rhs = rotate_panorama_yaw(project(f, 50.0, b), k);
    for (std::size_t i = 0; i < lhs.values.size(); ++i) EXPECT_NEAR(lhs.values[i], rhs.values[i], 1e-6);
  }
}

TEST(Project, YUpRemapMatchesZUpCloud) {
  Rng rng(6);
  const auto f = random_frame(rng, 800);
  ingest::SubmapFrame g = f;
  for (auto& p : g.points) p = ingest::Point(-p.y(), p.z(), -p.x());  // z-up (x fwd, y left) -> y-up
  const auto a = project(f, 50.0, 8);
  const auto b = project(g, ProjectOptions{50.0, 8, UpAxis::Y});
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-6);
}

TEST(Panorama, SaveLoadRoundTrip) {
  testing::TempDir dir;
  Rng rng(7);
  auto pano = project(random_frame(rng, 300), 50.0, 8);
  pano.frame_id = 99;
  save_panorama(dir / "p.bin", pano);
  const auto back = load_panorama(dir / "p.bin");
  EXPECT_EQ(back.bandwidth, 8);
  EXPECT_EQ(back.frame_id, 99);
  EXPECT_EQ(back.max_range_m, 50.0);
  EXPECT_EQ(back.values, pano.values);
}

TEST(Panorama, ToSignalPreservesLayout) {
  SphericalPanorama p(4, 50.0);
  p.at(3, 5) = 0.5f;
  const auto s = p.to_signal<double>();
  EXPECT_EQ(s.at(0, 3, 5), 0.5);
}

}  // namespace
}  // namespace spherevlad::sphere
