#pragma once

// Rigid-body pose on R^3 x S^3 and the attitude-difference operator used by
// the planner's terminal constraints.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "meltnav/errors.hpp"

namespace meltnav {

struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  [[nodiscard]] double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  [[nodiscard]] Quat normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }

  [[nodiscard]] Quat conjugate() const { return {w, -x, -y, -z}; }

  // Hamilton product.
  [[nodiscard]] Quat operator*(const Quat& p) const {
    return {w * p.w - x * p.x - y * p.y - z * p.z,
            w * p.x + x * p.w + y * p.z - z * p.y,
            w * p.y - x * p.z + y * p.w + z * p.x,
            w * p.z + x * p.y - y * p.x + z * p.w};
  }

  [[nodiscard]] Eigen::Matrix3d rotation_matrix() const {
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
  }

  // First column of the rotation matrix: world direction of the body x axis.
  [[nodiscard]] Eigen::Vector3d body_x_axis() const {
    return {1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)};
  }

  [[nodiscard]] Eigen::Vector3d rotate(const Eigen::Vector3d& v) const {
    return rotation_matrix() * v;
  }

  static Quat from_axis_angle(const Eigen::Vector3d& axis, double angle) {
    const double n = axis.norm();
    if (n == 0.0) return {};
    const double half = 0.5 * angle;
    const double s = std::sin(half) / n;
    return {std::cos(half), s * axis.x(), s * axis.y(), s * axis.z()};
  }

  // Exponential of the pure quaternion (0, w/2): rotation by |w| about w/|w|.
  static Quat exp_rotation(const Eigen::Vector3d& rotation_vector) {
    return from_axis_angle(rotation_vector, rotation_vector.norm());
  }
};

inline Quat slerp(const Quat& a, Quat b, double t) {
  double dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
  if (dot < 0.0) {
    b = {-b.w, -b.x, -b.y, -b.z};
    dot = -dot;
  }
  if (dot > 1.0 - 1e-12) {
    Quat r{a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
           a.z + t * (b.z - a.z)};
    return r.normalized();
  }
  const double theta = std::acos(dot);
  const double sa = std::sin((1.0 - t) * theta) / std::sin(theta);
  const double sb = std::sin(t * theta) / std::sin(theta);
  return Quat{sa * a.w + sb * b.w, sa * a.x + sb * b.x, sa * a.y + sb * b.y,
              sa * a.z + sb * b.z}
      .normalized();
}

struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Quat q;
};

// Roll/pitch/yaw of the relative rotation q_b^-1 * q_a (intrinsic Z-Y-X).
struct AttitudeError {
  double d_phi = 0.0;    // roll
  double d_theta = 0.0;  // pitch
  double d_psi = 0.0;    // yaw
};

// Attitude difference q_a [-] q_b as Euler angles of the relative rotation.
// Throws degenerate_attitude_error within ~1e-12 of the pitch singularity
// (|pitch| = pi/2), where yaw and roll are no longer separable.
inline AttitudeError boxminus(const Quat& q_a, const Quat& q_b) {
  constexpr double kUnitTol = 1e-6;
  if (std::abs(q_a.norm() - 1.0) > kUnitTol || std::abs(q_b.norm() - 1.0) > kUnitTol) {
    throw std::invalid_argument("boxminus: quaternions must be unit norm");
  }
  Quat r = q_b.conjugate() * q_a;
  r = r.normalized();
  if (r.w < 0.0) r = {-r.w, -r.x, -r.y, -r.z};  // canonical hemisphere

  const double sin_pitch = std::clamp(2.0 * (r.w * r.y - r.x * r.z), -1.0, 1.0);
  const double pitch = std::asin(sin_pitch);
  if (std::numbers::pi / 2 - std::abs(pitch) <= 1e-9) {
    throw degenerate_attitude_error("boxminus: pitch at +-pi/2, Euler angles degenerate");
  }
  AttitudeError e;
  e.d_phi = std::atan2(2.0 * (r.w * r.x + r.y * r.z), 1.0 - 2.0 * (r.x * r.x + r.y * r.y));
  e.d_theta = pitch;
  e.d_psi = std::atan2(2.0 * (r.w * r.z + r.x * r.y), 1.0 - 2.0 * (r.y * r.y + r.z * r.z));
  return e;
}

}  // namespace meltnav
