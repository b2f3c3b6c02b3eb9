#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <ranges>

#include "harmonic_oracles.hpp"
#include "spherevlad/harmonic/correlate.hpp"
#include "spherevlad/harmonic/rotation.hpp"
#include "spherevlad/harmonic/transforms.hpp"

namespace spherevlad::harmonic {
namespace {

using testing::relative_error;
constexpr double kPi = std::numbers::pi;

EulerZYZ random_euler(Rng& rng) {
  return {rng.uniform(0, 2 * kPi), std::acos(rng.uniform(-1, 1)), rng.uniform(0, 2 * kPi)};
}

// --------------------------------------------------------------------------
// Spherical harmonic transform

TEST(Sht, ConstantSignalIsPureDegreeZero) {
  S2Signal<double> f(1, 6);
  std::fill(f.values.begin(), f.values.end(), 2.5);
  const auto c = sht_forward(f);
  EXPECT_NEAR(c.at(0, 0, 0).real(), 2.5 * std::sqrt(4 * kPi), 1e-12);
  for (std::size_t i = 1; i < c.values.size(); ++i) EXPECT_LT(std::abs(c.values[i]), 1e-12);
}

TEST(Sht, RealPartOfY21HasHalfWeightOnBothOrders) {
  const int b = 6;
  S2Signal<double> f(1, b);
  const PolarQuadrature q(b);
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k) f.at(0, j, k) = testing::ylm(2, 1, q.nodes[k], j * kPi / b).real();
  const auto c = sht_forward(f);
  EXPECT_NEAR(std::abs(c.at(0, 2, 1) - std::complex<double>(0.5, 0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(c.at(0, 2, -1) - std::complex<double>(-0.5, 0)), 0.0, 1e-12);
  for (int l = 0; l < b; ++l)
    for (int m = -l; m <= l; ++m)
      if (!(l == 2 && std::abs(m) == 1)) {
        EXPECT_LT(std::abs(c.at(0, l, m)), 1e-10);
      }
}

TEST(Sht, SpectrumRoundTrip) {
  Rng rng(1);
  for (int b : {8, 16}) {
    const auto c = testing::random_s2_coefficients(2, b, rng);
    const auto back = sht_forward(sht_inverse(c));
    EXPECT_LT(relative_error(back.values | std::views::transform([](auto z) { return z.real(); }),
                             c.values | std::views::transform([](auto z) { return z.real(); })),
              1e-10);
    double worst = 0;
    for (std::size_t i = 0; i < c.values.size(); ++i) worst = std::max(worst, std::abs(back.values[i] - c.values[i]));
    EXPECT_LT(worst, 1e-10) << b;
  }
}

TEST(Sht, ZeroAndDipole) {
  S2Coefficients<double> zero(1, 4);
  for (double v : sht_inverse(zero).values) EXPECT_EQ(v, 0.0);

  S2Coefficients<double> dipole(1, 4);
  dipole.at(0, 1, 0) = 1.0;
  const auto grid = sht_inverse(dipole);
  const PolarQuadrature q(4);
  for (int j = 0; j < 8; ++j)
    for (int k = 0; k < 8; ++k) EXPECT_NEAR(grid.at(0, j, k), std::sqrt(3 / (4 * kPi)) * std::cos(q.nodes[k]), 1e-13);
}

TEST(Sht, InverseMatchesPointwiseSynthesis) {
  Rng rng(2);
  const int b = 5;
  const auto c = testing::random_s2_coefficients(1, b, rng);
  const auto grid = sht_inverse(c);
  const PolarQuadrature q(b);
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k)
      EXPECT_NEAR(grid.at(0, j, k), testing::eval_s2(c.channel(0), b, q.nodes[k], j * kPi / b), 1e-11);
}

TEST(Sht, PlancherelAndLinearity) {
  Rng rng(4);
  const int b = 8;
  const auto cf = testing::random_s2_coefficients(1, b, rng);
  const auto cg = testing::random_s2_coefficients(1, b, rng);
  const auto f = sht_inverse(cf), g = sht_inverse(cg);
  const PolarQuadrature q(b);
  double grid_dot = 0.0;
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k) grid_dot += q.weights[k] * (kPi / b) * f.at(0, j, k) * g.at(0, j, k);
  std::complex<double> spec_dot{};
  for (std::size_t i = 0; i < cf.values.size(); ++i) spec_dot += std::conj(cf.values[i]) * cg.values[i];
  EXPECT_NEAR(grid_dot, spec_dot.real(), 1e-9 * std::abs(grid_dot) + 1e-12);

  S2Signal<double> mix(1, b);
  for (std::size_t i = 0; i < mix.values.size(); ++i) mix.values[i] = 2.0 * f.values[i] - 0.5 * g.values[i];
  const auto lhs = sht_forward(mix);
  for (std::size_t i = 0; i < lhs.values.size(); ++i)
    EXPECT_LT(std::abs(lhs.values[i] - (2.0 * cf.values[i] - 0.5 * cg.values[i])), 1e-10);
}

TEST(Sht, RejectsBadGrid) {
  S2Signal<double> f(1, 4);
  f.values.resize(10);
  EXPECT_THROW(sht_forward(f), Error);
  try {
    sht_forward(f);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadGridShape);
  }
}

// --------------------------------------------------------------------------
// SO(3) Fourier transform

TEST(So3Ft, ZeroSignal) {
  SO3FeatureMap<double> g(1, 3);
  for (auto z : so3_ft_forward(g).values) EXPECT_EQ(std::abs(z), 0.0);
}

TEST(So3Ft, SpectrumRoundTrip) {
  Rng rng(7);
  const auto c = testing::random_so3_coefficients(2, 4, rng);
  const auto back = so3_ft_forward(so3_ft_inverse(c));
  double worst = 0;
  for (std::size_t i = 0; i < c.values.size(); ++i) worst = std::max(worst, std::abs(back.values[i] - c.values[i]));
  EXPECT_LT(worst, 1e-9);
}

TEST(So3Ft, SampledWignerFunctionIsolatesItsEntry) {
  const int b = 4, l = 2, m = 1, n = -2;
  SO3FeatureMap<double> g(1, b);
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k)
      for (int p = 0; p < 2 * b; ++p)
        g.at(0, j, k, p) = testing::wigner_D_reference(l, m, n, testing::so3_grid_point(b, j, k, p)).real();
  const auto c = so3_ft_forward(g);
  // Re D = (D_{mn} + (-1)^{m-n} D_{-m,-n}) / 2
  for (int ll = 0; ll < b; ++ll)
    for (int mm = -ll; mm <= ll; ++mm)
      for (int nn = -ll; nn <= ll; ++nn) {
        std::complex<double> expected{};
        if (ll == l && mm == m && nn == n) expected = 0.5;
        if (ll == l && mm == -m && nn == -n) expected = -0.5;
        EXPECT_LT(std::abs(c.at(0, ll, mm, nn) - expected), 1e-12) << ll << " " << mm << " " << nn;
      }
}

TEST(So3Ft, InverseMatchesPointwiseSynthesis) {
  Rng rng(8);
  const int b = 3;
  const auto c = testing::random_so3_coefficients(1, b, rng);
  const auto g = so3_ft_inverse(c);
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k)
      for (int p = 0; p < 2 * b; ++p)
        EXPECT_NEAR(g.at(0, j, k, p), testing::eval_so3(c.channel(0), b, testing::so3_grid_point(b, j, k, p)), 1e-11);
}

TEST(So3Ft, AdjointsAreTransposes) {
  Rng rng(9);
  const int b = 4, deg = 3;
  const auto& plan = so3_plan<double>(b, deg);
  std::vector<double> x(plan.grid_size()), y(plan.grid_size()), adj_grid(plan.grid_size());
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  std::vector<std::complex<double>> c(plan.coefficient_count()), gc(plan.coefficient_count()),
      fx(plan.coefficient_count());
  for (auto& z : c) z = {rng.normal(), rng.normal()};
  for (auto& z : gc) z = {rng.normal(), rng.normal()};

  // <inverse(c), y> == Re <c, inverse_adjoint(y)> (real inner product on C = R^2)
  std::vector<double> inv(plan.grid_size());
  plan.inverse(c, inv);
  plan.inverse_adjoint(y, fx);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < inv.size(); ++i) lhs += inv[i] * y[i];
  for (std::size_t i = 0; i < c.size(); ++i) rhs += c[i].real() * fx[i].real() + c[i].imag() * fx[i].imag();
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));

  // <forward(x), gc> == <x, forward_adjoint(gc)>
  plan.forward(x, fx);
  plan.forward_adjoint(gc, adj_grid);
  lhs = rhs = 0;
  for (std::size_t i = 0; i < fx.size(); ++i) lhs += fx[i].real() * gc[i].real() + fx[i].imag() * gc[i].imag();
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * adj_grid[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(So3Ft, PlancherelAndSymmetry) {
  Rng rng(10);
  const int b = 4;
  const auto cf = testing::random_so3_coefficients(1, b, rng);
  const auto cg = testing::random_so3_coefficients(1, b, rng);
  const auto f = so3_ft_inverse(cf), g = so3_ft_inverse(cg);
  const PolarQuadrature q(b);
  const double da = kPi / b;
  double grid_dot = 0;
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k)
      for (int p = 0; p < 2 * b; ++p) grid_dot += q.weights[k] * da * da * f.at(0, j, k, p) * g.at(0, j, k, p);
  std::complex<double> spec_dot{};
  for (int l = 0; l < b; ++l)
    for (int m = -l; m <= l; ++m)
      for (int n = -l; n <= l; ++n)
        spec_dot += 8 * kPi * kPi / (2 * l + 1) * std::conj(cf.at(0, l, m, n)) * cg.at(0, l, m, n);
  EXPECT_NEAR(grid_dot, spec_dot.real(), 1e-9 * std::abs(grid_dot));
  EXPECT_LT(so3_symmetry_defect(so3_ft_forward(f)), 1e-12);
}

// --------------------------------------------------------------------------
// Rotations

TEST(Rotation, S2ActionMatchesPointwiseDefinition) {
  Rng rng(12);
  const int b = 5;
  const auto c = testing::random_s2_coefficients(1, b, rng);
  const RotationSpec r(random_euler(rng));
  const auto rc = rotate_coefficients(c, r);
  for (int trial = 0; trial < 20; ++trial) {
    const double beta = std::acos(rng.uniform(-1, 1)), alpha = rng.uniform(0, 2 * kPi);
    const auto [rb, ra] = testing::polar_angles(r.matrix().transpose() * testing::unit_vector(beta, alpha));
    EXPECT_NEAR(testing::eval_s2(rc.channel(0), b, beta, alpha), testing::eval_s2(c.channel(0), b, rb, ra), 1e-10);
  }
}

TEST(Rotation, SO3LeftActionMatchesPointwiseDefinition) {
  Rng rng(13);
  const int b = 3;
  const auto c = testing::random_so3_coefficients(1, b, rng);
  const RotationSpec q(random_euler(rng));
  const auto rc = rotate_coefficients(c, q);
  for (int trial = 0; trial < 20; ++trial) {
    const EulerZYZ e = random_euler(rng);
    const EulerZYZ moved = EulerZYZ::from_matrix(q.matrix().transpose() * e.matrix());
    EXPECT_NEAR(testing::eval_so3(rc.channel(0), b, e), testing::eval_so3(c.channel(0), b, moved), 1e-10);
  }
}

TEST(Rotation, IdentityCompositionAndYawShift) {
  Rng rng(14);
  const int b = 6;
  const auto f = sht_inverse(testing::random_s2_coefficients(1, b, rng));
  EXPECT_LT(relative_error(rotate_signal(f, RotationSpec::identity()).values, f.values), 1e-10);

  const RotationSpec r1(random_euler(rng)), r2(random_euler(rng));
  const auto sequential = rotate_signal(rotate_signal(f, r1), r2);
  const auto composed = rotate_signal(f, r2 * r1);
  EXPECT_LT(relative_error(sequential.values, composed.values), 1e-8);

  const int steps = 3;
  const auto shifted = rotate_signal(f, RotationSpec::yaw(steps * kPi / b));
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k)
      EXPECT_NEAR(shifted.at(0, (j + steps) % (2 * b), k), f.at(0, j, k), 1e-10);

  const auto g = so3_ft_inverse(testing::random_so3_coefficients(1, 3, rng));
  const auto g_shift = rotate_signal(g, RotationSpec::yaw(2 * kPi / 6));
  for (int j = 0; j < 6; ++j)
    for (int k = 0; k < 6; ++k)
      for (int p = 0; p < 6; ++p) EXPECT_NEAR(g_shift.at(0, (j + 1) % 6, k, p), g.at(0, j, k, p), 1e-10);
}

// --------------------------------------------------------------------------
// Correlations

TEST(Correlation, S2MatchesBruteForceQuadrature) {
  Rng rng(20);
  const int b = 3;
  for (int trial = 0; trial < 3; ++trial) {
    const auto fc = testing::random_s2_coefficients(2, b, rng);
    const auto psi = testing::random_s2_filters(2, 2, b, rng);
    const auto out = s2_correlate(sht_inverse(fc), psi);
    EXPECT_LT(relative_error(out.values, testing::brute_force_s2_correlation(fc, psi, b)), 1e-10);
  }
}

TEST(Correlation, SO3MatchesBruteForceQuadrature) {
  Rng rng(21);
  const int b = 2;
  for (int trial = 0; trial < 3; ++trial) {
    const auto gc = testing::random_so3_coefficients(2, b, rng);
    const auto psi = testing::random_so3_filters(2, 2, b, rng);
    const auto out = so3_correlate(so3_ft_inverse(gc), psi);
    EXPECT_LT(relative_error(out.values, testing::brute_force_so3_correlation(gc, psi, b)), 1e-10);
  }
}

TEST(Correlation, ConstantInputGivesConstantOutput) {
  const int b = 4;
  S2Signal<double> f(1, b);
  std::fill(f.values.begin(), f.values.end(), 1.0);
  S2FilterBank<double> psi(1, 1, b);
  for (int l = 0; l < b; l += 2) psi.filter(0, 0)[s2_index(l, 0)] = 1.0;  // even zonal filter
  const auto out = s2_correlate(f, psi);
  for (double v : out.values) EXPECT_NEAR(v, out.values[0], 1e-12);
  EXPECT_NEAR(out.values[0], std::sqrt(4 * kPi) * (1.0 / std::sqrt(4 * kPi)) * 4 * kPi / std::sqrt(4 * kPi), 1e-10);
}

TEST(Correlation, DeltaFilterIsIdentityOnSO3) {
  Rng rng(22);
  const int b = 3;
  const auto g = so3_ft_inverse(testing::random_so3_coefficients(2, b, rng));
  SO3FilterBank<double> psi(2, 2, b);
  for (int c = 0; c < 2; ++c)
    for (int l = 0; l < b; ++l)
      for (int m = -l; m <= l; ++m)
        psi.filter(c, c)[so3_block_offset(l) + (m + l) * (2 * l + 1) + (m + l)] = (2 * l + 1) / (8 * kPi * kPi);
  EXPECT_LT(relative_error(so3_correlate(g, psi).values, g.values), 1e-10);
}

TEST(Correlation, AzimuthShiftOfInputShiftsOutput) {
  Rng rng(23);
  const int b = 4, steps = 2;
  const auto f = sht_inverse(testing::random_s2_coefficients(1, b, rng));
  S2Signal<double> shifted(1, b);
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k) shifted.at(0, (j + steps) % (2 * b), k) = f.at(0, j, k);
  const auto psi = testing::random_s2_filters(1, 1, b, rng);
  const auto out = s2_correlate(f, psi), out_shift = s2_correlate(shifted, psi);
  for (int j = 0; j < 2 * b; ++j)
    for (int k = 0; k < 2 * b; ++k)
      for (int p = 0; p < 2 * b; ++p)
        EXPECT_NEAR(out_shift.at(0, (j + steps) % (2 * b), k, p), out.at(0, j, k, p), 1e-11);
}

TEST(Correlation, EquivariantUnderArbitraryRotation) {
  Rng rng(24);
  const int b = 6;
  const RotationSpec r(random_euler(rng));
  const auto f = sht_inverse(testing::random_s2_coefficients(2, b, rng));
  const auto psi = testing::random_s2_filters(3, 2, b, rng);
  const auto lhs = s2_correlate(rotate_signal(f, r), psi);
  const auto rhs = rotate_signal(s2_correlate(f, psi), r);
  EXPECT_LT(relative_error(lhs.values, rhs.values), 1e-9);

  const auto g = so3_ft_inverse(testing::random_so3_coefficients(2, b, rng));
  const auto phi = testing::random_so3_filters(2, 2, b, rng);
  const auto lhs3 = so3_correlate(rotate_signal(g, r), phi, 4);
  const auto rhs3 = rotate_signal(so3_correlate(g, phi, 4), r);
  EXPECT_LT(relative_error(lhs3.values, rhs3.values), 1e-9);
}

TEST(Correlation, OutputSpectraAreRealByConstruction) {
  Rng rng(25);
  const auto fc = testing::random_s2_coefficients(2, 5, rng);
  const auto psi = testing::random_s2_filters(2, 2, 5, rng);
  EXPECT_LT(so3_symmetry_defect(s2_correlate_spectrum(fc, psi, 5)), 1e-12);
  const auto gc = testing::random_so3_coefficients(2, 4, rng);
  const auto phi = testing::random_so3_filters(2, 2, 4, rng);
  EXPECT_LT(so3_symmetry_defect(so3_correlate_spectrum(gc, phi, 4)), 1e-12);
}

TEST(Correlation, ReportsMismatches) {
  S2Signal<double> f(2, 4);
  S2FilterBank<double> wrong_bw(1, 2, 3), wrong_ch(1, 3, 4);
  try {
    s2_correlate(f, wrong_bw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BandwidthMismatch);
  }
  try {
    s2_correlate(f, wrong_ch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ChannelMismatch);
  }
  SO3FeatureMap<double> g(2, 3);
  SO3FilterBank<double> phi(1, 1, 3);
  EXPECT_THROW(so3_correlate(g, phi), Error);
}

}  // namespace
}  // namespace spherevlad::harmonic
