#pragma once

// Closed-loop harness: plan once, then cycle replanning -> binary transform
// -> software safeguard -> plant -> sensing until the planned horizon fits
// inside one cycle. The plant integrates with its own (true) parameters on a
// finer grid than the planner, and all randomness flows through splittable
// counter-based streams so a fixed seed reproduces the run bit for bit.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "meltnav/bct.hpp"
#include "meltnav/errors.hpp"
#include "meltnav/integrate.hpp"
#include "meltnav/model.hpp"
#include "meltnav/ocp.hpp"
#include "meltnav/rng.hpp"

namespace meltnav {

// Duty-window plus random-unavailability stand-in for the onboard safeguard.
struct SsgConfig {
  double duty_cap = 1.0;     // max on-fraction over any `window` consecutive steps
  int window = 8;
  double dropout_prob = 0.0; // per-unit, per-step chance of being unavailable

  void validate() const {
    if (!(duty_cap >= 0.0 && duty_cap <= 1.0)) throw config_error("SsgConfig: duty_cap in [0,1]");
    if (window < 1) throw config_error("SsgConfig: window must be >= 1");
    if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0)) {
      throw config_error("SsgConfig: dropout_prob in [0,1]");
    }
  }
};

// Rolling record of the most recently applied steps (newest last).
struct SsgState {
  std::deque<std::array<std::uint8_t, kNumUnits>> recent;
};

// Gate a requested schedule through the safeguard: w <= v elementwise; units
// at their duty budget are vetoed; corner units pass through untouched.
// Rows [record_steps, m) are copied unchanged and not recorded (they belong
// to the next cycle's decision); record_steps < 0 processes every row.
inline Eigen::MatrixXi ssg_apply(const Eigen::MatrixXi& v, SsgState& state,
                                 const SsgConfig& cfg, const CounterRng& rng,
                                 const HeaterLayout& layout, int record_steps = -1) {
  cfg.validate();
  const int m = static_cast<int>(v.rows());
  if (v.cols() != kNumUnits) throw config_error("ssg_apply: schedule must have 32 columns");
  const int steps = record_steps < 0 ? m : std::min(record_steps, m);
  const int max_on = static_cast<int>(std::floor(cfg.duty_cap * cfg.window + 1e-9));
  Eigen::MatrixXi w = v;
  for (int j = 0; j < steps; ++j) {
    CounterRng draw = rng.split(static_cast<std::uint64_t>(j));
    std::array<double, kNumUnits> dropout{};
    for (int i = 0; i < kNumUnits; ++i) dropout[static_cast<std::size_t>(i)] = draw.next_double();
    std::array<std::uint8_t, kNumUnits> row{};
    for (int i = 0; i < kNumUnits; ++i) {
      int on = v(j, i) != 0 ? 1 : 0;
      if (!layout.is_corner(i) && on == 1) {
        int count = 0;
        const int look = std::min<int>(cfg.window - 1, static_cast<int>(state.recent.size()));
        for (int r = 0; r < look; ++r) {
          count += state.recent[state.recent.size() - 1 - static_cast<std::size_t>(r)]
                               [static_cast<std::size_t>(i)];
        }
        if (count >= max_on) on = 0;
        if (on == 1 && dropout[static_cast<std::size_t>(i)] < cfg.dropout_prob) on = 0;
      }
      w(j, i) = on;
      row[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(on);
    }
    state.recent.push_back(row);
    const std::size_t keep = std::max<std::size_t>(64, static_cast<std::size_t>(cfg.window));
    while (state.recent.size() > keep) state.recent.pop_front();
  }
  return w;
}

struct NoiseConfig {
  double sigma_pos = 0.0;  // m, per axis
  double sigma_att = 0.0;  // rad, rotation angle scale

  void validate() const {
    if (sigma_pos < 0.0 || sigma_att < 0.0) throw config_error("NoiseConfig: sigmas must be >= 0");
  }
};

// Simulated fused pose: Gaussian position noise per axis, small random
// rotation (uniform axis, Gaussian angle) on the attitude.
inline Pose sense(const Pose& x_true, const NoiseConfig& cfg, CounterRng& rng) {
  cfg.validate();
  Pose x = x_true;
  if (cfg.sigma_pos > 0.0) {
    for (int k = 0; k < 3; ++k) x.position(k) += cfg.sigma_pos * rng.next_gaussian();
  }
  if (cfg.sigma_att > 0.0) {
    const double z = 2.0 * rng.next_double() - 1.0;
    const double phi = 2.0 * std::numbers::pi * rng.next_double();
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Eigen::Vector3d axis(s * std::cos(phi), s * std::sin(phi), z);
    const double angle = cfg.sigma_att * rng.next_gaussian();
    x.q = (x.q * Quat::from_axis_angle(axis, angle)).normalized();
  }
  return x;
}

struct BctSettings {
  BctVariant variant = BctVariant::bct_star;
  int m = 16;                    // grid points per cycle window
  double delta_fraction = 0.25;  // inner window width as a fraction of the cycle
  double zeta = -1.0;            // < 0: default 0.01 * max unit power
  std::array<double, kNumUnits> mu;  // defect weights for the plain variant
  std::int64_t node_budget = 200000;

  BctSettings() { mu.fill(1.0); }

  void validate() const {
    if (m < 2) throw config_error("BctSettings: m must be >= 2");
    if (!(delta_fraction > 0.0 && delta_fraction <= 1.0)) {
      throw config_error("BctSettings: delta_fraction in (0,1]");
    }
    if (node_budget < 0) throw config_error("BctSettings: node_budget must be >= 0");
    for (double w : mu) {
      if (!(w > 0.0)) throw config_error("BctSettings: mu entries must be positive");
    }
  }

  [[nodiscard]] double effective_zeta(const HeaterLayout& layout) const {
    if (zeta >= 0.0) return zeta;
    double pmax = 0.0;
    for (double p : layout.unit_power) pmax = std::max(pmax, p);
    return 0.01 * pmax;
  }
};

struct Scenario {
  Pose x_0, x_f;
  ModelParams p_plan, p_true;
  HeaterLayout layout = default_layout();
  OcpWeights weights;
  OcpOptions ocp;
  BctSettings bct;
  SsgConfig ssg;
  NoiseConfig noise;
  double cycle_time = 0.2;  // h
  int max_cycles = 200;
  std::uint64_t seed = 1;
  bool perfect_loop = false;  // apply continuous controls, skip BCT and SSG
  int plant_substeps = 4;
  int mpc_retries = 1;  // cold restarts allowed after a failed warm solve

  void validate() const {
    p_plan.validate();
    p_true.validate();
    layout.validate();
    bct.validate();
    ssg.validate();
    noise.validate();
    if (!(cycle_time > 0.0)) throw config_error("Scenario: cycle_time must be positive");
    if (max_cycles < 1) throw config_error("Scenario: max_cycles must be >= 1");
    if (plant_substeps < 1) throw config_error("Scenario: plant_substeps must be >= 1");
    if (mpc_retries < 0) throw config_error("Scenario: mpc_retries must be >= 0");
  }
};

struct CycleRecord {
  int index = 0;
  double t_start = 0.0;
  double cycle_len = 0.0;
  Pose fused_start;
  double mpc_t_f = 0.0;
  double mpc_objective = 0.0;
  int mpc_iterations = 0;
  SolveStatus mpc_status = SolveStatus::converged;
  Eigen::MatrixXd u_samples;  // m x 32 requested duties (empty in perfect mode)
  Eigen::MatrixXi v;          // transformed schedule (empty in perfect mode)
  Eigen::MatrixXi w;          // applied schedule after the safeguard
  double bct_objective = 0.0;
  bool bct_optimal = false;
  CoverageReport coverage_v, coverage_w;
  Trajectory plant_segment;   // global timestamps
};

struct LoopResult {
  DiscretizedSolution tpp;
  std::vector<CycleRecord> cycles;
  Trajectory true_path;            // plant path, global time
  Trajectory fused_path;           // sensed poses at the plant nodes
  ControlSchedule applied_groups;  // group duties the plant actually received
  Pose final_true, final_fused;
  bool completed = false;
  std::string abort_reason;
};

namespace detail {

inline bool solve_ok(const SolveReport& r) { return r.status == SolveStatus::converged; }

// RNG stream ids: 0 = initial sense; per cycle k, 1+2k = safeguard, 2+2k = fusion.
inline std::uint64_t ssg_stream(int cycle) { return 1 + 2 * static_cast<std::uint64_t>(cycle); }
inline std::uint64_t fuse_stream(int cycle) { return 2 + 2 * static_cast<std::uint64_t>(cycle); }

}  // namespace detail

inline LoopResult run_closed_loop(const Scenario& sc) {
  sc.validate();
  LoopResult res;
  const CounterRng rng(sc.seed);

  res.tpp = solve_tpp(sc.x_0, sc.x_f, sc.p_plan, sc.layout, sc.weights, sc.ocp);
  if (!detail::solve_ok(res.tpp.report)) {
    res.abort_reason = "trajectory pre-planning failed: " + res.tpp.report.message;
    return res;
  }

  Pose x_true = sc.x_0;
  CounterRng init_rng = rng.split(0);
  Pose x_est = sense(x_true, sc.noise, init_rng);
  res.true_path.times.push_back(0.0);
  res.true_path.states.push_back(x_true);
  res.fused_path.times.push_back(0.0);
  res.fused_path.states.push_back(x_est);
  res.applied_groups.interpolation =
      sc.perfect_loop ? Interp::piecewise_linear : Interp::piecewise_constant;

  DiscretizedSolution warm = res.tpp;
  double warm_shift = 0.0;
  std::optional<BinarySchedule> prev_v;
  SsgState ssg_state;
  std::deque<std::array<std::uint8_t, kNumUnits>> history;
  const int window_l = std::clamp(
      static_cast<int>(std::lround(sc.bct.delta_fraction * (sc.bct.m - 1))), 1, sc.bct.m - 1);
  double t_global = 0.0;
  GroupControls last_applied{};

  for (int k = 0; k < sc.max_cycles; ++k) {
    DiscretizedSolution mpc =
        solve_mpc(x_est, sc.x_f, sc.p_plan, sc.layout, sc.weights, sc.ocp, &warm, warm_shift);
    for (int attempt = 0; attempt < sc.mpc_retries && !detail::solve_ok(mpc.report); ++attempt) {
      mpc = solve_mpc(x_est, sc.x_f, sc.p_plan, sc.layout, sc.weights, sc.ocp);
    }
    if (!detail::solve_ok(mpc.report)) {
      res.abort_reason = "replanning failed at cycle " + std::to_string(k) + ": " +
                         mpc.report.message;
      break;
    }

    const bool last = mpc.t_f <= sc.cycle_time + 1e-9;
    const double tc = last ? mpc.t_f : sc.cycle_time;
    const int m = sc.bct.m;

    CycleRecord rec;
    rec.index = k;
    rec.t_start = t_global;
    rec.cycle_len = tc;
    rec.fused_start = x_est;
    rec.mpc_t_f = mpc.t_f;
    rec.mpc_objective = mpc.objective;
    rec.mpc_iterations = mpc.report.iterations;
    rec.mpc_status = mpc.report.status;

    std::vector<double> node_times(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) node_times[static_cast<std::size_t>(j)] = tc * j / (m - 1);

    Trajectory plant;
    if (sc.perfect_loop) {
      ControlSchedule cs;
      cs.times = node_times;
      cs.interpolation = Interp::piecewise_linear;
      cs.values.reserve(static_cast<std::size_t>(m));
      for (double t : node_times) cs.values.push_back(extract_controls(mpc, t));
      plant = forward_integrate(x_true, cs, sc.p_true, sc.plant_substeps);
      for (int j = 0; j < m - 1; ++j) {
        res.applied_groups.times.push_back(t_global + node_times[static_cast<std::size_t>(j)]);
        res.applied_groups.values.push_back(cs.values[static_cast<std::size_t>(j)]);
      }
      last_applied = cs.values.back();
    } else {
      rec.u_samples.resize(m, kNumUnits);
      for (int j = 0; j < m; ++j) {
        const std::array<double, kNumUnits> units =
            ungroup(extract_controls(mpc, node_times[static_cast<std::size_t>(j)]), sc.layout);
        for (int i = 0; i < kNumUnits; ++i) rec.u_samples(j, i) = units[static_cast<std::size_t>(i)];
      }
      BctWindow window;
      window.t_window = tc;
      window.m = m;
      window.delta = sc.bct.delta_fraction * tc;
      window.u_samples = rec.u_samples;
      const int hist_rows = std::min<int>(window_l, static_cast<int>(history.size()));
      window.history.resize(hist_rows, kNumUnits);
      for (int r = 0; r < hist_rows; ++r) {
        const auto& row = history[history.size() - static_cast<std::size_t>(hist_rows - r)];
        for (int i = 0; i < kNumUnits; ++i) window.history(r, i) = row[static_cast<std::size_t>(i)];
      }
      const BctProblem prob =
          sc.bct.variant == BctVariant::bct_star
              ? build_bct_star(window, sc.layout, sc.bct.effective_zeta(sc.layout))
              : build_bct(window, sc.layout, sc.bct.mu);
      const BinarySchedule* warm_sched = nullptr;
      if (prev_v && prev_v->v.rows() == m &&
          prob.schedule_feasible(prev_v->v.cast<double>())) {
        warm_sched = &*prev_v;
      }
      BinarySchedule v = solve_bnb(prob, BnbBudget{sc.bct.node_budget}, warm_sched);
      rec.v = v.v;
      rec.bct_objective = v.objective;
      rec.bct_optimal = v.optimal;
      rec.w = ssg_apply(v.v, ssg_state, sc.ssg, rng.split(detail::ssg_stream(k)), sc.layout,
                        m - 1);
      for (int j = 0; j < m - 1; ++j) {
        std::array<std::uint8_t, kNumUnits> row{};
        for (int i = 0; i < kNumUnits; ++i) row[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(rec.w(j, i));
        history.push_back(row);
      }
      while (history.size() > 64) history.pop_front();
      prev_v = v;

      ControlSchedule applied;
      applied.times = node_times;
      applied.interpolation = Interp::piecewise_constant;
      applied.values.reserve(static_cast<std::size_t>(m));
      for (int j = 0; j < m; ++j) {
        std::array<double, kNumUnits> wrow{};
        for (int i = 0; i < kNumUnits; ++i) wrow[static_cast<std::size_t>(i)] = rec.w(j, i);
        applied.values.push_back(to_group_controls(regroup(wrow, sc.layout)));
      }
      plant = forward_integrate(x_true, applied, sc.p_true, sc.plant_substeps);
      for (int j = 0; j < m - 1; ++j) {
        res.applied_groups.times.push_back(t_global + node_times[static_cast<std::size_t>(j)]);
        res.applied_groups.values.push_back(applied.values[static_cast<std::size_t>(j)]);
      }
      last_applied = applied.values[static_cast<std::size_t>(m - 2)];

      BinarySchedule wsched;
      wsched.v = rec.w;
      rec.coverage_v = coverage_report(v, rec.u_samples, sc.layout);
      rec.coverage_w = coverage_report(wsched, rec.u_samples, sc.layout);
    }

    // Advance truth and fused estimate along the plant nodes.
    CounterRng fuse_rng = rng.split(detail::fuse_stream(k));
    for (std::size_t n = 1; n < plant.times.size(); ++n) {
      const double tg = t_global + plant.times[n];
      res.true_path.times.push_back(tg);
      res.true_path.states.push_back(plant.states[n]);
      const Pose sensed = sense(plant.states[n], sc.noise, fuse_rng);
      res.fused_path.times.push_back(tg);
      res.fused_path.states.push_back(sensed);
    }
    rec.plant_segment = plant;
    for (double& t : rec.plant_segment.times) t += t_global;
    res.cycles.push_back(std::move(rec));

    x_true = plant.states.back();
    x_est = res.fused_path.states.back();
    t_global += tc;
    warm = mpc;
    warm_shift = tc;
    if (last) {
      res.completed = true;
      break;
    }
  }
  if (!res.completed && res.abort_reason.empty()) res.abort_reason = "cycle cap reached";

  if (!res.applied_groups.times.empty()) {
    res.applied_groups.times.push_back(t_global);
    res.applied_groups.values.push_back(last_applied);
  }
  res.final_true = x_true;
  res.final_fused = x_est;
  return res;
}

// --- path curvature helpers -------------------------------------------------

inline std::vector<Eigen::Vector3d> resample_by_arclength(
    const std::vector<Eigen::Vector3d>& pts, double ds) {
  if (!(ds > 0.0)) throw config_error("resample_by_arclength: ds must be positive");
  std::vector<Eigen::Vector3d> out;
  if (pts.empty()) return out;
  out.push_back(pts.front());
  double carry = 0.0;
  for (std::size_t k = 1; k < pts.size(); ++k) {
    Eigen::Vector3d a = pts[k - 1];
    const Eigen::Vector3d b = pts[k];
    double seg = (b - a).norm();
    while (carry + seg >= ds) {
      const double need = ds - carry;
      a += (b - a).normalized() * need;
      out.push_back(a);
      seg = (b - a).norm();
      carry = 0.0;
    }
    carry += seg;
  }
  return out;
}

// Mean Menger curvature of the polyline after arc-length resampling.
inline double path_mean_curvature(const std::vector<Eigen::Vector3d>& pts, double ds) {
  const std::vector<Eigen::Vector3d> p = resample_by_arclength(pts, ds);
  if (p.size() < 3) return 0.0;
  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 1; k + 1 < p.size(); ++k) {
    const Eigen::Vector3d ab = p[k] - p[k - 1];
    const Eigen::Vector3d bc = p[k + 1] - p[k];
    const Eigen::Vector3d ac = p[k + 1] - p[k - 1];
    const double la = ab.norm(), lb = bc.norm(), lc = ac.norm();
    if (la < 1e-12 || lb < 1e-12 || lc < 1e-12) continue;
    const double area2 = ab.cross(bc).norm();  // twice the triangle area
    sum += 2.0 * area2 / (la * lb * lc);
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace meltnav
