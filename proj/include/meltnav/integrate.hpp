#pragma once

// Implicit trapezoidal time propagation and trajectory utilities.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "meltnav/errors.hpp"
#include "meltnav/model.hpp"
#include "meltnav/pose.hpp"

namespace meltnav {

struct Trajectory {
  std::vector<double> times;
  std::vector<Pose> states;

  void validate() const {
    if (times.size() != states.size()) {
      throw config_error("Trajectory: times/states length mismatch");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
      if (!(times[k] > times[k - 1])) {
        throw config_error("Trajectory: times must be strictly increasing");
      }
    }
    for (const Pose& x : states) {
      if (std::abs(x.q.norm() - 1.0) > 1e-9) {
        throw config_error("Trajectory: quaternion drifted from unit norm");
      }
    }
  }
};

enum class Interp { piecewise_linear, piecewise_constant };

namespace detail {

// Index of the interval [times[i], times[i+1]] containing t; endpoints snap.
inline std::size_t interval_index(const std::vector<double>& times, double t) {
  if (times.empty() || t < times.front() || t > times.back()) {
    throw std::out_of_range("schedule/trajectory query outside the time span");
  }
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  std::size_t i = static_cast<std::size_t>(it - times.begin());
  if (i > 0) --i;
  if (i + 1 >= times.size()) i = times.size() - 2;  // t == back(): use last interval
  return i;
}

}  // namespace detail

// Group-duty schedule over a time grid. Piecewise-constant schedules hold the
// left node's value across each interval.
struct ControlSchedule {
  std::vector<double> times;
  std::vector<GroupControls> values;
  Interp interpolation = Interp::piecewise_linear;

  void validate() const {
    if (times.empty() || times.size() != values.size()) {
      throw config_error("ControlSchedule: empty or mismatched grids");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
      if (!(times[k] > times[k - 1])) {
        throw config_error("ControlSchedule: times must be strictly increasing");
      }
    }
    for (const GroupControls& u : values) u.validate();
  }

  [[nodiscard]] GroupControls at(double t) const {
    if (times.size() == 1) return values.front();
    const std::size_t i = detail::interval_index(times, t);
    if (interpolation == Interp::piecewise_constant) {
      return t >= times[i + 1] ? values[i + 1] : values[i];
    }
    const double theta = (t - times[i]) / (times[i + 1] - times[i]);
    GroupControls u;
    for (int g = 0; g < kNumFreeGroups; ++g) {
      u.u[g] = (1.0 - theta) * values[i].u[g] + theta * values[i + 1].u[g];
    }
    return u;
  }
};

// Rate-level schedule (v, omega, u). Used where the caller already holds
// consistent augmented controls, e.g. replaying a planner solution.
struct RateSchedule {
  std::vector<double> times;
  std::vector<AugmentedControls> values;
  Interp interpolation = Interp::piecewise_linear;

  [[nodiscard]] AugmentedControls at(double t) const {
    if (times.size() == 1) return values.front();
    const std::size_t i = detail::interval_index(times, t);
    if (interpolation == Interp::piecewise_constant) {
      return t >= times[i + 1] ? values[i + 1] : values[i];
    }
    const double theta = (t - times[i]) / (times[i + 1] - times[i]);
    const AugmentedControls &a = values[i], &b = values[i + 1];
    AugmentedControls c;
    c.v = (1.0 - theta) * a.v + theta * b.v;
    c.omega = (1.0 - theta) * a.omega + theta * b.omega;
    for (int g = 0; g < kNumFreeGroups; ++g) {
      c.u.u[g] = (1.0 - theta) * a.u.u[g] + theta * b.u.u[g];
    }
    return c;
  }

  static RateSchedule from_groups(const ControlSchedule& s, const ModelParams& p) {
    RateSchedule r;
    r.times = s.times;
    r.interpolation = s.interpolation;
    r.values.reserve(s.values.size());
    for (const GroupControls& u : s.values) {
      const DerivedRates d = derived_rates(u, p);
      r.values.push_back({d.v, d.omega, u});
    }
    return r;
  }
};

namespace detail {

inline Pose unpack_state(const Eigen::Matrix<double, 7, 1>& s) {
  Pose x;
  x.position = s.segment<3>(0);
  x.q = {s(3), s(4), s(5), s(6)};
  return x;
}

inline Eigen::Matrix<double, 7, 1> pack_state(const Pose& x) {
  Eigen::Matrix<double, 7, 1> s;
  s.segment<3>(0) = x.position;
  s(3) = x.q.w;
  s(4) = x.q.x;
  s(5) = x.q.y;
  s(6) = x.q.z;
  return s;
}

}  // namespace detail

// One implicit trapezoidal step: solves
//   x_{k+1} = x_k + (h/2) [f(x_k, c_k) + f(x_{k+1}, c_{k+1})]
// to residual <= 1e-12 (fixed point with Newton fallback), then renormalizes
// the quaternion. Negative h steps backward in time.
inline Pose trapezoidal_step(const Pose& x_k, const AugmentedControls& c_k,
                             const AugmentedControls& c_k1, double h) {
  constexpr double kTol = 1e-12;
  constexpr int kFixedPointCap = 50;
  constexpr int kNewtonCap = 25;

  const Eigen::Matrix<double, 7, 1> s0 = detail::pack_state(x_k);
  const StateDerivative f0 = ode_rhs(x_k, c_k);
  const Eigen::Matrix<double, 7, 1> base = s0 + (0.5 * h) * f0;

  auto residual = [&](const Eigen::Matrix<double, 7, 1>& s) {
    return (s - base - (0.5 * h) * ode_rhs(detail::unpack_state(s), c_k1)).eval();
  };

  Eigen::Matrix<double, 7, 1> s = s0 + h * f0;  // explicit predictor
  double err = residual(s).lpNorm<Eigen::Infinity>();
  for (int it = 0; it < kFixedPointCap && err > kTol; ++it) {
    s = base + (0.5 * h) * ode_rhs(detail::unpack_state(s), c_k1);
    err = residual(s).lpNorm<Eigen::Infinity>();
  }
  for (int it = 0; it < kNewtonCap && err > kTol; ++it) {
    const Pose xs = detail::unpack_state(s);
    const Eigen::Matrix<double, 7, 7> jg =
        Eigen::Matrix<double, 7, 7>::Identity() -
        (0.5 * h) * ode_jacobian_state(xs, c_k1.v, c_k1.omega);
    s -= jg.partialPivLu().solve(residual(s));
    err = residual(s).lpNorm<Eigen::Infinity>();
  }
  if (!(err <= kTol)) {
    throw integration_error("trapezoidal_step: implicit solve did not converge (step too large)");
  }
  Pose x = detail::unpack_state(s);
  x.q = x.q.normalized();
  return x;
}

// Chains trapezoidal steps over the schedule grid, optionally subdividing each
// interval. The returned grid contains every (sub)step boundary; the first
// state is x_0 exactly.
inline Trajectory forward_integrate(const Pose& x_0, const RateSchedule& schedule,
                                    int substeps = 1) {
  if (schedule.times.empty() || schedule.times.size() != schedule.values.size()) {
    throw config_error("forward_integrate: empty or mismatched schedule");
  }
  if (substeps < 1) throw config_error("forward_integrate: substeps must be >= 1");
  Trajectory traj;
  traj.times.push_back(schedule.times.front());
  traj.states.push_back(x_0);
  Pose x = x_0;
  for (std::size_t k = 0; k + 1 < schedule.times.size(); ++k) {
    const double ta = schedule.times[k];
    const double tb = schedule.times[k + 1];
    const bool pwc = schedule.interpolation == Interp::piecewise_constant;
    for (int s = 0; s < substeps; ++s) {
      const double a = ta + (tb - ta) * s / substeps;
      const double b = (s + 1 == substeps) ? tb : ta + (tb - ta) * (s + 1) / substeps;
      const AugmentedControls ca = pwc ? schedule.values[k] : schedule.at(a);
      const AugmentedControls cb = pwc ? schedule.values[k] : schedule.at(b);
      try {
        x = trapezoidal_step(x, ca, cb, b - a);
      } catch (const integration_error& e) {
        throw integration_error(std::string(e.what()) + " at schedule interval " +
                                std::to_string(k));
      }
      traj.times.push_back(b);
      traj.states.push_back(x);
    }
  }
  return traj;
}

inline Trajectory forward_integrate(const Pose& x_0, const ControlSchedule& schedule,
                                    const ModelParams& p, int substeps = 1) {
  return forward_integrate(x_0, RateSchedule::from_groups(schedule, p), substeps);
}

// Samples a trajectory on a new grid: positions interpolate linearly,
// attitudes spherically; grid points matching source times are copied.
inline Trajectory resample(const Trajectory& traj, const std::vector<double>& times) {
  if (traj.times.empty()) throw config_error("resample: empty trajectory");
  Trajectory out;
  out.times = times;
  out.states.reserve(times.size());
  for (double t : times) {
    if (traj.times.size() == 1) {
      if (t != traj.times.front()) {
        throw std::out_of_range("resample: target time outside trajectory span");
      }
      out.states.push_back(traj.states.front());
      continue;
    }
    const std::size_t i = detail::interval_index(traj.times, t);
    if (t == traj.times[i]) {
      out.states.push_back(traj.states[i]);
      continue;
    }
    if (t == traj.times[i + 1]) {
      out.states.push_back(traj.states[i + 1]);
      continue;
    }
    const double theta = (t - traj.times[i]) / (traj.times[i + 1] - traj.times[i]);
    Pose x;
    x.position = (1.0 - theta) * traj.states[i].position + theta * traj.states[i + 1].position;
    x.q = slerp(traj.states[i].q, traj.states[i + 1].q, theta);
    out.states.push_back(x);
  }
  return out;
}

}  // namespace meltnav
