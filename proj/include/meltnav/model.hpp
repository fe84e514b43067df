#pragma once

// Kinematic probe model: parameters, heater layout, group/unit controls, the
// rate map from heater duties to body velocities, the pose ODE right-hand
// side, and the two levels of power-budget checks.
//
// Conventions: lengths in meters, time in hours, angles in radians, power in
// watts. Unit indices are 0-based in code; file formats and documentation use
// the 1-based numbering (units 1..32, groups 1..9).

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "meltnav/errors.hpp"
#include "meltnav/pose.hpp"

namespace meltnav {

inline constexpr int kNumUnits = 32;
inline constexpr int kNumGroups = 9;      // groups 1..8 controllable, group 9 fixed on
inline constexpr int kNumFreeGroups = 8;

struct ModelParams {
  double v_max = 1.0;   // maximal melting velocity, m/h
  double eta = 0.1;     // roll rate per meter melted, rad/m
  double r_min = 6.0;   // minimal turn radius, m
  double alpha = 0.3;   // share of turning authority attributed to the head

  void validate() const {
    if (!(v_max > 0.0) || !(eta > 0.0) || !(r_min > 0.0)) {
      throw config_error("ModelParams: v_max, eta, r_min must be positive");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw config_error("ModelParams: alpha must lie in [0, 1]");
    }
  }
};

struct GroupControls {
  std::array<double, kNumFreeGroups> u{};  // duty fractions, groups 1..8

  void validate() const {
    for (double ui : u) {
      if (!(ui >= 0.0 && ui <= 1.0)) {
        throw config_error("GroupControls: duties must lie in [0, 1]");
      }
    }
  }
};

struct AugmentedControls {
  double v = 0.0;                          // translational velocity, m/h
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();  // body rates, rad/h
  GroupControls u;
};

struct BinaryControls {
  std::array<bool, kNumUnits> on{};
};

struct HeaterLayout {
  std::array<double, kNumUnits> unit_power{};  // watts per unit
  std::array<int, kNumUnits> group_of{};       // 0-based group id per unit
  double p_total_max = 0.0;
  double p_wall_max = 0.0;
  double p_back_max = 0.0;

  static constexpr int head_begin = 0, head_end = 16;   // units 1..16
  static constexpr int wall_begin = 16, wall_end = 24;  // units 17..24
  static constexpr int back_begin = 24, back_end = 32;  // units 25..32

  [[nodiscard]] bool is_head(int unit) const { return unit >= head_begin && unit < head_end; }
  [[nodiscard]] bool is_wall(int unit) const { return unit >= wall_begin && unit < wall_end; }
  [[nodiscard]] bool is_back(int unit) const { return unit >= back_begin && unit < back_end; }
  [[nodiscard]] bool is_corner(int unit) const { return group_of[unit] == kNumGroups - 1; }

  [[nodiscard]] double group_power(int group) const {
    double p = 0.0;
    for (int i = 0; i < kNumUnits; ++i) {
      if (group_of[i] == group) p += unit_power[i];
    }
    return p;
  }

  [[nodiscard]] std::vector<int> group_members(int group) const {
    std::vector<int> m;
    for (int i = 0; i < kNumUnits; ++i) {
      if (group_of[i] == group) m.push_back(i);
    }
    return m;
  }

  // Budget available to the eight controllable groups once the always-on
  // corner group is powered.
  [[nodiscard]] double total_budget_free() const { return p_total_max - group_power(8); }

  // Budget available to the lateral groups 5..8: the wall budget plus back
  // headroom left by the corners.
  [[nodiscard]] double wall_budget_free() const {
    return p_wall_max + (p_back_max - group_power(8));
  }

  void validate() const {
    for (int i = 0; i < kNumUnits; ++i) {
      if (!(unit_power[i] >= 0.0) || !std::isfinite(unit_power[i])) {
        throw config_error("HeaterLayout: unit powers must be finite and non-negative");
      }
      if (group_of[i] < 0 || group_of[i] >= kNumGroups) {
        throw config_error("HeaterLayout: unit assigned to an unknown group");
      }
    }
    for (int g = 0; g < kNumGroups; ++g) {
      if (group_members(g).empty()) {
        throw config_error("HeaterLayout: every group must contain at least one unit");
      }
    }
    for (int i = 0; i < kNumUnits; ++i) {
      const int g = group_of[i];
      if (g < 4 && !is_head(i)) {
        throw config_error("HeaterLayout: groups 1-4 must consist of head units");
      }
      if (g == 8 && !is_back(i)) {
        throw config_error("HeaterLayout: the always-on group must consist of back units");
      }
    }
    if (!(total_budget_free() > 0.0) || !(wall_budget_free() > 0.0)) {
      throw config_error("HeaterLayout: derived budgets must be positive");
    }
  }
};

// 16 head units at 100 W in four quadrant groups, 8 wall units at 75 W and 8
// back units at 75 W; each lateral group couples one side's wall pair with the
// back unit behind it; the four remaining back units are the always-on
// corners.
inline HeaterLayout default_layout() {
  HeaterLayout l;
  for (int i = 0; i < 16; ++i) {
    l.unit_power[i] = 100.0;
    l.group_of[i] = i / 4;
  }
  for (int s = 0; s < 4; ++s) {
    l.unit_power[16 + 2 * s] = 75.0;
    l.unit_power[16 + 2 * s + 1] = 75.0;
    l.group_of[16 + 2 * s] = 4 + s;
    l.group_of[16 + 2 * s + 1] = 4 + s;
    l.unit_power[24 + s] = 75.0;
    l.group_of[24 + s] = 4 + s;
  }
  for (int c = 28; c < 32; ++c) {
    l.unit_power[c] = 75.0;
    l.group_of[c] = 8;
  }
  l.p_total_max = 1800.0;
  l.p_wall_max = 450.0;
  l.p_back_max = 450.0;
  return l;
}

struct DerivedRates {
  double v = 0.0;
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
};

// Maps group duties to translational and angular rates. All rates scale with
// v, so a stationary probe cannot rotate regardless of the lateral duties.
inline DerivedRates derived_rates(const GroupControls& u, const ModelParams& p) {
  DerivedRates r;
  r.v = (u.u[0] + u.u[1] + u.u[2] + u.u[3]) * p.v_max / 4.0;
  r.omega.x() = r.v * p.eta;
  const double head_y = 0.5 * p.alpha * (u.u[0] + u.u[3] - u.u[1] - u.u[2]);
  const double head_z = 0.5 * p.alpha * (u.u[0] + u.u[1] - u.u[2] - u.u[3]);
  const double wall_y = (1.0 - p.alpha) * (u.u[4] - u.u[6]);
  const double wall_z = (1.0 - p.alpha) * (u.u[5] - u.u[7]);
  r.omega.y() = (r.v / p.r_min) * (head_y + wall_y);
  r.omega.z() = (r.v / p.r_min) * (head_z + wall_z);
  return r;
}

using StateDerivative = Eigen::Matrix<double, 7, 1>;

// Right-hand side of the pose kinematics: position moves along the body x
// axis at speed v; the quaternion integrates the body rates.
inline StateDerivative ode_rhs(const Pose& x, double v, const Eigen::Vector3d& omega) {
  StateDerivative f;
  const Quat& q = x.q;
  f.segment<3>(0) = v * q.body_x_axis();
  f(3) = 0.5 * (-q.x * omega.x() - q.y * omega.y() - q.z * omega.z());
  f(4) = 0.5 * (q.w * omega.x() + q.y * omega.z() - q.z * omega.y());
  f(5) = 0.5 * (q.w * omega.y() - q.x * omega.z() + q.z * omega.x());
  f(6) = 0.5 * (q.w * omega.z() + q.x * omega.y() - q.y * omega.x());
  return f;
}

inline StateDerivative ode_rhs(const Pose& x, const AugmentedControls& c) {
  return ode_rhs(x, c.v, c.omega);
}

// d(ode_rhs)/d(state), state ordered (x, y, z, q_w, q_x, q_y, q_z).
inline Eigen::Matrix<double, 7, 7> ode_jacobian_state(const Pose& x, double v,
                                                      const Eigen::Vector3d& omega) {
  Eigen::Matrix<double, 7, 7> j = Eigen::Matrix<double, 7, 7>::Zero();
  const Quat& q = x.q;
  // Position rows: v * d(R e_x)/dq.
  j(0, 5) = v * -4.0 * q.y;
  j(0, 6) = v * -4.0 * q.z;
  j(1, 3) = v * 2.0 * q.z;
  j(1, 4) = v * 2.0 * q.y;
  j(1, 5) = v * 2.0 * q.x;
  j(1, 6) = v * 2.0 * q.w;
  j(2, 3) = v * -2.0 * q.y;
  j(2, 4) = v * 2.0 * q.z;
  j(2, 5) = v * -2.0 * q.w;
  j(2, 6) = v * 2.0 * q.x;
  // Quaternion rows: 0.5 * Omega(omega).
  const double wx = omega.x(), wy = omega.y(), wz = omega.z();
  j(3, 4) = -0.5 * wx;
  j(3, 5) = -0.5 * wy;
  j(3, 6) = -0.5 * wz;
  j(4, 3) = 0.5 * wx;
  j(4, 5) = 0.5 * wz;
  j(4, 6) = -0.5 * wy;
  j(5, 3) = 0.5 * wy;
  j(5, 4) = -0.5 * wz;
  j(5, 6) = 0.5 * wx;
  j(6, 3) = 0.5 * wz;
  j(6, 4) = 0.5 * wy;
  j(6, 5) = -0.5 * wx;
  return j;
}

// d(ode_rhs)/d(v, omega_x, omega_y, omega_z).
inline Eigen::Matrix<double, 7, 4> ode_jacobian_rates(const Pose& x, double /*v*/,
                                                      const Eigen::Vector3d& /*omega*/) {
  Eigen::Matrix<double, 7, 4> j = Eigen::Matrix<double, 7, 4>::Zero();
  const Quat& q = x.q;
  j.block<3, 1>(0, 0) = q.body_x_axis();
  j(3, 1) = -0.5 * q.x;
  j(3, 2) = -0.5 * q.y;
  j(3, 3) = -0.5 * q.z;
  j(4, 1) = 0.5 * q.w;
  j(4, 2) = -0.5 * q.z;
  j(4, 3) = 0.5 * q.y;
  j(5, 1) = 0.5 * q.z;
  j(5, 2) = 0.5 * q.w;
  j(5, 3) = -0.5 * q.x;
  j(6, 1) = -0.5 * q.y;
  j(6, 2) = 0.5 * q.x;
  j(6, 3) = 0.5 * q.w;
  return j;
}

// Expands group duties to the 32 units; the always-on group reads 1.
inline std::array<double, kNumUnits> ungroup(const GroupControls& u, const HeaterLayout& layout) {
  std::array<double, kNumUnits> w{};
  for (int i = 0; i < kNumUnits; ++i) {
    const int g = layout.group_of[i];
    w[i] = (g == 8) ? 1.0 : u.u[g];
  }
  return w;
}

// Collapses unit-level activations to effective group duties by power-weighted
// mean. Returns all nine groups; callers feeding derived_rates use the first
// eight.
inline std::array<double, kNumGroups> regroup(const std::array<double, kNumUnits>& w,
                                              const HeaterLayout& layout) {
  std::array<double, kNumGroups> load{};
  std::array<double, kNumGroups> power{};
  for (int i = 0; i < kNumUnits; ++i) {
    load[layout.group_of[i]] += layout.unit_power[i] * w[i];
    power[layout.group_of[i]] += layout.unit_power[i];
  }
  std::array<double, kNumGroups> u{};
  for (int g = 0; g < kNumGroups; ++g) {
    if (!(power[g] > 0.0)) {
      throw config_error("regroup: group without power rating");
    }
    u[g] = load[g] / power[g];
  }
  return u;
}

inline GroupControls to_group_controls(const std::array<double, kNumGroups>& g) {
  GroupControls u;
  for (int i = 0; i < kNumFreeGroups; ++i) u.u[i] = g[i];
  return u;
}

struct GroupPowerReport {
  double total_load = 0.0;   // sum of P_g u_g over groups 1..8
  double total_margin = 0.0;
  double wall_load = 0.0;    // sum over groups 5..8
  double wall_margin = 0.0;
  bool feasible = false;
};

inline GroupPowerReport power_check_group(const GroupControls& u, const HeaterLayout& layout) {
  GroupPowerReport r;
  for (int g = 0; g < kNumFreeGroups; ++g) {
    const double pg = layout.group_power(g) * u.u[g];
    r.total_load += pg;
    if (g >= 4) r.wall_load += pg;
  }
  r.total_margin = layout.total_budget_free() - r.total_load;
  r.wall_margin = layout.wall_budget_free() - r.wall_load;
  r.feasible = r.total_margin >= 0.0 && r.wall_margin >= 0.0;
  return r;
}

struct UnitPowerReport {
  double total_load = 0.0;
  double total_margin = 0.0;
  double wall_load = 0.0;
  double wall_margin = 0.0;
  double back_load = 0.0;
  double back_margin = 0.0;
  bool feasible = false;
};

// Unit-level budgets: total draw across all 32 units, wall draw, back draw.
// The always-on corners count toward total and back.
inline UnitPowerReport power_check_units(const BinaryControls& v, const HeaterLayout& layout) {
  UnitPowerReport r;
  for (int i = 0; i < kNumUnits; ++i) {
    if (!v.on[i]) continue;
    r.total_load += layout.unit_power[i];
    if (layout.is_wall(i)) r.wall_load += layout.unit_power[i];
    if (layout.is_back(i)) r.back_load += layout.unit_power[i];
  }
  r.total_margin = layout.p_total_max - r.total_load;
  r.wall_margin = layout.p_wall_max - r.wall_load;
  r.back_margin = layout.p_back_max - r.back_load;
  r.feasible = r.total_margin >= 0.0 && r.wall_margin >= 0.0 && r.back_margin >= 0.0;
  return r;
}

}  // namespace meltnav
