#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace spherevlad {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid transform sensor -> world.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  Pose operator*(const Pose& rhs) const {
    return Pose{rotation * rhs.rotation, rotation * rhs.translation + translation};
  }

  /// Row-major 3x4 [R | t], the layout of KITTI pose files.
  std::array<double, 12> to_row_major() const {
    std::array<double, 12> out{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out[r * 4 + c] = rotation(r, c);
      out[r * 4 + 3] = translation(r);
    }
    return out;
  }

  static Pose from_row_major(const std::array<double, 12>& v) {
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[r * 4 + c];
      p.translation(r) = v[r * 4 + 3];
    }
    return p;
  }
};

inline double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm();
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
  return orthonormality_error(r) <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

inline Mat3 rotation_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

inline Mat3 rotation_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

/// ZYZ Euler angles: R = Rz(alpha) * Ry(beta) * Rz(gamma).
struct EulerZYZ {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  Mat3 matrix() const { return rotation_z(alpha) * rotation_y(beta) * rotation_z(gamma); }

  /// Inverse of matrix(). In gimbal lock (beta at 0 or pi) gamma is set to 0
  /// and the whole in-plane angle is carried by alpha.
  static EulerZYZ from_matrix(const Mat3& r) {
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    EulerZYZ e;
    const double cb = std::clamp(r(2, 2), -1.0, 1.0);
    e.beta = std::acos(cb);
    const double sb = std::sqrt(r(0, 2) * r(0, 2) + r(1, 2) * r(1, 2));
    if (sb > 1e-12) {
      e.alpha = std::atan2(r(1, 2), r(0, 2));
      e.gamma = std::atan2(r(2, 1), -r(2, 0));
    } else if (cb > 0) {
      e.beta = 0.0;
      e.alpha = std::atan2(r(1, 0), r(0, 0));
      e.gamma = 0.0;
    } else {
      e.beta = std::numbers::pi;
      e.alpha = std::atan2(-r(1, 0), -r(0, 0));
      e.gamma = 0.0;
    }
    auto wrap = [&](double a) {
      a = std::fmod(a, kTwoPi);
      return a < 0 ? a + kTwoPi : a;
    };
    e.alpha = wrap(e.alpha);
    e.gamma = wrap(e.gamma);
    return e;
  }
};

/// A rotation given either as ZYZ Euler angles or as a matrix; both views
/// are always available.
class RotationSpec {
 public:
  RotationSpec() = default;
  explicit RotationSpec(const EulerZYZ& e) : matrix_(e.matrix()), euler_(e) {}
  explicit RotationSpec(const Mat3& m) : matrix_(m), euler_(EulerZYZ::from_matrix(m)) {}

  static RotationSpec identity() { return RotationSpec{}; }
  static RotationSpec yaw(double angle) { return RotationSpec(EulerZYZ{angle, 0.0, 0.0}); }

  const Mat3& matrix() const { return matrix_; }
  const EulerZYZ& euler() const { return euler_; }

  RotationSpec operator*(const RotationSpec& rhs) const { return RotationSpec(Mat3(matrix_ * rhs.matrix_)); }
  RotationSpec inverse() const { return RotationSpec(Mat3(matrix_.transpose())); }

 private:
  Mat3 matrix_ = Mat3::Identity();
  EulerZYZ euler_{};
};

}  // namespace spherevlad
