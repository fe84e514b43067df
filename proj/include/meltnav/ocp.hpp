#pragma once

// Direct transcription of the trajectory planning problem (TPP) and the
// replanning problem (MPC) on a uniform grid with free final time.
//
// Decision vector z (n = 19(N+1) + 1):
//   states   x_k = (x, y, z, q_w, q_x, q_y, q_z)      at offset 7k
//   controls c_k = (v, w_x, w_y, w_z, u_1..u_8)        at offset 7(N+1) + 12k
//   t_f                                                at offset 19(N+1)
// Equalities: initial state (7), trapezoidal defects (7N), rate-consistency
// rows (4 per node), quaternion norm (1 per node), and for the TPP the
// terminal position (3). Inequalities: budget-normalized power rows (2 per
// node) and the terminal attitude box (4 rows on pitch/yaw of the final
// attitude error). The MPC replaces the terminal position equality by a
// gamma-weighted quadratic penalty.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "meltnav/integrate.hpp"
#include "meltnav/model.hpp"
#include "meltnav/nlp.hpp"
#include "meltnav/pose.hpp"

namespace meltnav {

struct OcpWeights {
  double beta = 10.0;      // terminal attitude penalty
  double gamma = 100.0;    // terminal position penalty (MPC only)
  double phi_max = 0.1745; // terminal pitch/yaw box, rad
  Eigen::Vector3d omega_max = Eigen::Vector3d::Zero();  // zero: derive from params

  void validate() const {
    if (!(beta > 0.0) || !(gamma > 0.0) || !(phi_max > 0.0)) {
      throw config_error("OcpWeights: beta, gamma, phi_max must be positive");
    }
  }
};

inline OcpWeights default_weights(const ModelParams& p) {
  OcpWeights w;
  w.omega_max = {p.eta * p.v_max, p.v_max / p.r_min, p.v_max / p.r_min};
  return w;
}

struct OcpOptions {
  int nodes = 50;          // N: number of intervals
  double tf_lower = 0.05;  // hours
  double tf_upper = 50.0;
  SolveOptions nlp;
};

struct DiscretizedSolution {
  std::vector<double> times;                 // N+1 nodes on [0, t_f]
  std::vector<Pose> states;                  // raw solver states (unit norm within feas_tol)
  std::vector<AugmentedControls> controls;
  double t_f = 0.0;
  double objective = 0.0;
  SolveReport report;

  // Trajectory view with renormalized quaternions.
  [[nodiscard]] Trajectory to_trajectory() const {
    Trajectory t;
    t.times = times;
    t.states = states;
    for (Pose& x : t.states) x.q = x.q.normalized();
    return t;
  }

  [[nodiscard]] RateSchedule to_rate_schedule() const {
    RateSchedule r;
    r.times = times;
    r.values = controls;
    r.interpolation = Interp::piecewise_linear;
    return r;
  }
};

// Linear interpolation on the solution grid with constant extension.
inline AugmentedControls extract_rates(const DiscretizedSolution& sol, double t) {
  const auto& ts = sol.times;
  if (ts.empty()) throw config_error("extract_rates: empty solution");
  if (t <= ts.front()) return sol.controls.front();
  if (t >= ts.back()) return sol.controls.back();
  RateSchedule r;
  r.times = ts;
  r.values = sol.controls;
  return r.at(t);
}

inline GroupControls extract_controls(const DiscretizedSolution& sol, double t) {
  GroupControls u = extract_rates(sol, t).u;
  for (double& ui : u.u) ui = std::clamp(ui, 0.0, 1.0);
  return u;
}

enum class OcpKind { tpp, mpc };

class OcpTranscription {
 public:
  OcpTranscription(OcpKind kind, const Pose& x0, const Pose& xf, const ModelParams& p,
                   const HeaterLayout& layout, const OcpWeights& w, const OcpOptions& opts)
      : kind_(kind), x0_(x0), xf_(xf), p_(p), layout_(layout), w_(w), opts_(opts),
        n_nodes_(opts.nodes + 1) {
    if (opts_.nodes < 2) throw config_error("OcpTranscription: need at least 2 intervals");
    p_.validate();
    layout_.validate();
    w_.validate();
    if (w_.omega_max.isZero()) w_ = [&] {
      OcpWeights d = default_weights(p_);
      d.beta = w_.beta;
      d.gamma = w_.gamma;
      d.phi_max = w_.phi_max;
      return d;
    }();
    qf_conj_ = xf_.q.conjugate();
    for (int g = 0; g < kNumFreeGroups; ++g) group_power_[g] = layout_.group_power(g);
  }

  [[nodiscard]] OcpKind kind() const { return kind_; }
  [[nodiscard]] int num_intervals() const { return opts_.nodes; }
  [[nodiscard]] int num_vars() const { return 19 * n_nodes_ + 1; }
  [[nodiscard]] int num_defect_rows() const { return 7 * opts_.nodes; }
  [[nodiscard]] int num_norm_rows() const { return n_nodes_; }
  [[nodiscard]] int num_eq() const {
    return 7 + num_defect_rows() + 4 * n_nodes_ + num_norm_rows() + (kind_ == OcpKind::tpp ? 3 : 0);
  }
  [[nodiscard]] int num_ineq() const { return 2 * n_nodes_ + 4; }
  [[nodiscard]] const OcpWeights& weights() const { return w_; }
  [[nodiscard]] const ModelParams& params() const { return p_; }

  // Variable indexing.
  [[nodiscard]] int ix(int node, int comp) const { return 7 * node + comp; }
  [[nodiscard]] int ic(int node, int comp) const { return 7 * n_nodes_ + 12 * node + comp; }
  [[nodiscard]] int itf() const { return 19 * n_nodes_; }

  [[nodiscard]] Pose node_pose(const Eigen::VectorXd& z, int k) const {
    Pose x;
    x.position = z.segment<3>(ix(k, 0));
    x.q = {z(ix(k, 3)), z(ix(k, 4)), z(ix(k, 5)), z(ix(k, 6))};
    return x;
  }

  [[nodiscard]] AugmentedControls node_controls(const Eigen::VectorXd& z, int k) const {
    AugmentedControls c;
    c.v = z(ic(k, 0));
    c.omega = {z(ic(k, 1)), z(ic(k, 2)), z(ic(k, 3))};
    for (int g = 0; g < kNumFreeGroups; ++g) c.u.u[g] = z(ic(k, 4 + g));
    return c;
  }

  [[nodiscard]] DiscretizedSolution decode(const Eigen::VectorXd& z) const {
    DiscretizedSolution s;
    s.t_f = z(itf());
    s.times.resize(n_nodes_);
    s.states.resize(n_nodes_);
    s.controls.resize(n_nodes_);
    for (int k = 0; k < n_nodes_; ++k) {
      s.times[k] = s.t_f * k / opts_.nodes;
      s.states[k] = node_pose(z, k);
      s.controls[k] = node_controls(z, k);
    }
    return s;
  }

  [[nodiscard]] Eigen::VectorXd lower_bounds() const {
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::VectorXd l = Eigen::VectorXd::Constant(num_vars(), -inf);
    for (int k = 0; k < n_nodes_; ++k) {
      l(ic(k, 0)) = 0.0;
      for (int a = 0; a < 3; ++a) l(ic(k, 1 + a)) = -w_.omega_max(a);
      for (int g = 0; g < kNumFreeGroups; ++g) l(ic(k, 4 + g)) = 0.0;
    }
    l(itf()) = opts_.tf_lower;
    return l;
  }

  [[nodiscard]] Eigen::VectorXd upper_bounds() const {
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::VectorXd u = Eigen::VectorXd::Constant(num_vars(), inf);
    for (int k = 0; k < n_nodes_; ++k) {
      u(ic(k, 0)) = p_.v_max;
      for (int a = 0; a < 3; ++a) u(ic(k, 1 + a)) = w_.omega_max(a);
      for (int g = 0; g < kNumFreeGroups; ++g) u(ic(k, 4 + g)) = 1.0;
    }
    u(itf()) = opts_.tf_upper;
    return u;
  }

  // Straight-line interpolation guess: full head throttle scaled into the
  // group budget, attitude slerped toward the target, roll rate consistent.
  [[nodiscard]] Eigen::VectorXd straight_guess() const {
    const int nn = num_vars();
    Eigen::VectorXd z = Eigen::VectorXd::Zero(nn);
    const double dist = (xf_.position - x0_.position).norm();
    double head_power = 0.0;
    for (int g = 0; g < 4; ++g) head_power += group_power_[g];
    const double scale =
        head_power > 0.0 ? std::min(1.0, layout_.total_budget_free() / head_power) : 1.0;
    const double v = dist < 1e-12 ? 0.0 : scale * p_.v_max;
    const double tf = std::clamp(dist < 1e-12 ? opts_.tf_lower : 1.2 * dist / std::max(v, 1e-9),
                                 opts_.tf_lower, opts_.tf_upper);
    for (int k = 0; k < n_nodes_; ++k) {
      const double theta = static_cast<double>(k) / opts_.nodes;
      const Eigen::Vector3d pos =
          (1.0 - theta) * x0_.position + theta * xf_.position;
      const Quat q = slerp(x0_.q, xf_.q, theta);
      z.segment<3>(ix(k, 0)) = pos;
      z(ix(k, 3)) = q.w;
      z(ix(k, 4)) = q.x;
      z(ix(k, 5)) = q.y;
      z(ix(k, 6)) = q.z;
      z(ic(k, 0)) = v;
      z(ic(k, 1)) = v * p_.eta;
      for (int g = 0; g < 4; ++g) z(ic(k, 4 + g)) = dist < 1e-12 ? 0.0 : scale;
    }
    z(itf()) = tf;
    return z;
  }

  // Warm guess: the previous solution advanced by `shift` hours, re-gridded
  // onto the new horizon, with node 0 pinned to the measured state.
  [[nodiscard]] Eigen::VectorXd warm_guess(const DiscretizedSolution& prev, double shift) const {
    if (prev.times.size() < 2) return straight_guess();
    Eigen::VectorXd z = Eigen::VectorXd::Zero(num_vars());
    const double tf = std::clamp(prev.t_f - shift, opts_.tf_lower, opts_.tf_upper);
    const Trajectory traj = prev.to_trajectory();
    for (int k = 0; k < n_nodes_; ++k) {
      const double t = std::min(shift + tf * k / opts_.nodes, prev.t_f);
      const Trajectory one = resample(traj, {t});
      const Pose& x = one.states.front();
      z.segment<3>(ix(k, 0)) = x.position;
      z(ix(k, 3)) = x.q.w;
      z(ix(k, 4)) = x.q.x;
      z(ix(k, 5)) = x.q.y;
      z(ix(k, 6)) = x.q.z;
      AugmentedControls c = extract_rates(prev, t);
      c.v = std::clamp(c.v, 0.0, p_.v_max);
      for (int a = 0; a < 3; ++a) {
        c.omega(a) = std::clamp(c.omega(a), -w_.omega_max(a), w_.omega_max(a));
      }
      for (double& ug : c.u.u) ug = std::clamp(ug, 0.0, 1.0);
      z(ic(k, 0)) = c.v;
      z(ic(k, 1)) = c.omega.x();
      z(ic(k, 2)) = c.omega.y();
      z(ic(k, 3)) = c.omega.z();
      for (int g = 0; g < kNumFreeGroups; ++g) z(ic(k, 4 + g)) = c.u.u[g];
    }
    // Pin the first node to the new initial state.
    z.segment<3>(ix(0, 0)) = x0_.position;
    z(ix(0, 3)) = x0_.q.w;
    z(ix(0, 4)) = x0_.q.x;
    z(ix(0, 5)) = x0_.q.y;
    z(ix(0, 6)) = x0_.q.z;
    z(itf()) = tf;
    return z;
  }

  // Pitch/yaw of the final attitude error and their gradients w.r.t. the
  // final-node quaternion variables.
  struct TerminalAttitude {
    double theta = 0.0, psi = 0.0;
    Eigen::Vector4d dtheta = Eigen::Vector4d::Zero();
    Eigen::Vector4d dpsi = Eigen::Vector4d::Zero();
  };

  [[nodiscard]] TerminalAttitude terminal_attitude(const Eigen::VectorXd& z) const {
    const Quat qn{z(ix(opts_.nodes, 3)), z(ix(opts_.nodes, 4)), z(ix(opts_.nodes, 5)),
                  z(ix(opts_.nodes, 6))};
    const Quat r = qf_conj_ * qn;
    // r is linear in q_n: r = A q_n with A built from qf_conj_.
    const Quat& p = qf_conj_;
    Eigen::Matrix4d a;
    a << p.w, -p.x, -p.y, -p.z,
         p.x,  p.w, -p.z,  p.y,
         p.y,  p.z,  p.w, -p.x,
         p.z, -p.y,  p.x,  p.w;
    TerminalAttitude t;
    // asin with a C1 linear extension beyond |s| = s0: exact for any pitch up
    // to ~1.42 rad (far outside the terminal box), bounded gradient at the
    // gimbal singularity so far-from-feasible iterates keep a well-scaled QP.
    const double s_raw = 2.0 * (r.w * r.y - r.x * r.z);
    constexpr double s0 = 0.99;
    double asin_slope;
    if (std::abs(s_raw) <= s0) {
      t.theta = std::asin(s_raw);
      asin_slope = 1.0 / std::sqrt(1.0 - s_raw * s_raw);
    } else {
      const double sgn = s_raw > 0.0 ? 1.0 : -1.0;
      asin_slope = 1.0 / std::sqrt(1.0 - s0 * s0);
      t.theta = sgn * std::asin(s0) + (s_raw - sgn * s0) * asin_slope;
    }
    const double inv_c = 2.0 * asin_slope;
    const Eigen::Vector4d ds_dr(inv_c * r.y, -inv_c * r.z, inv_c * r.w, -inv_c * r.x);
    t.dtheta = a.transpose() * ds_dr;
    const double nz = 2.0 * (r.w * r.z + r.x * r.y);
    const double dz = 1.0 - 2.0 * (r.y * r.y + r.z * r.z);
    t.psi = std::atan2(nz, dz);
    // Gradient denominator guarded away from the yaw singularity; the value
    // is exact everywhere and the gradient is exact once nz^2 + dz^2 > 0.1.
    const double denom = std::max(nz * nz + dz * dz, 0.1);
    const Eigen::Vector4d dn(2.0 * r.z, 2.0 * r.y, 2.0 * r.x, 2.0 * r.w);
    const Eigen::Vector4d dd(0.0, 0.0, -4.0 * r.y, -4.0 * r.z);
    const Eigen::Vector4d dpsi_dr = (dz * dn - nz * dd) / denom;
    t.dpsi = a.transpose() * dpsi_dr;
    return t;
  }

  // Gauss-Newton columns of the objective's quadratic terms: Hessian = U U^T.
  // The time term is linear and contributes nothing.
  [[nodiscard]] Eigen::MatrixXd objective_curvature(const Eigen::VectorXd& z) const {
    const TerminalAttitude t = terminal_attitude(z);
    const int r = kind_ == OcpKind::mpc ? 5 : 2;
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(num_vars(), r);
    const double cb = std::sqrt(2.0 * w_.beta);
    for (int i = 0; i < 4; ++i) {
      u(ix(opts_.nodes, 3 + i), 0) = cb * t.dtheta(i);
      u(ix(opts_.nodes, 3 + i), 1) = cb * t.dpsi(i);
    }
    if (kind_ == OcpKind::mpc) {
      const double cg = std::sqrt(2.0 * w_.gamma);
      for (int i = 0; i < 3; ++i) u(ix(opts_.nodes, i), 2 + i) = cg;
    }
    return u;
  }

  double objective(const Eigen::VectorXd& z, Eigen::VectorXd* grad) const {
    const TerminalAttitude t = terminal_attitude(z);
    double f = z(itf()) + w_.beta * (t.theta * t.theta + t.psi * t.psi);
    if (grad) {
      grad->setZero();
      (*grad)(itf()) = 1.0;
      const Eigen::Vector4d dq =
          w_.beta * (2.0 * t.theta * t.dtheta + 2.0 * t.psi * t.dpsi);
      for (int i = 0; i < 4; ++i) (*grad)(ix(opts_.nodes, 3 + i)) += dq(i);
    }
    if (kind_ == OcpKind::mpc) {
      const Eigen::Vector3d dp = z.segment<3>(ix(opts_.nodes, 0)) - xf_.position;
      f += w_.gamma * dp.squaredNorm();
      if (grad) {
        for (int i = 0; i < 3; ++i) (*grad)(ix(opts_.nodes, i)) += 2.0 * w_.gamma * dp(i);
      }
    }
    return f;
  }

  void equalities(const Eigen::VectorXd& z, Eigen::VectorXd& h,
                  std::vector<Eigen::Triplet<double>>* jac) const {
    const int nsegs = opts_.nodes;
    const double tf = z(itf());
    const double hstep = tf / nsegs;

    std::vector<Pose> xs(n_nodes_);
    std::vector<AugmentedControls> cs(n_nodes_);
    std::vector<StateDerivative> fs(n_nodes_);
    for (int k = 0; k < n_nodes_; ++k) {
      xs[k] = node_pose(z, k);
      cs[k] = node_controls(z, k);
      fs[k] = ode_rhs(xs[k], cs[k].v, cs[k].omega);
    }

    int row = 0;
    // Initial state.
    for (int i = 0; i < 3; ++i) h(row + i) = xs[0].position(i) - x0_.position(i);
    h(row + 3) = xs[0].q.w - x0_.q.w;
    h(row + 4) = xs[0].q.x - x0_.q.x;
    h(row + 5) = xs[0].q.y - x0_.q.y;
    h(row + 6) = xs[0].q.z - x0_.q.z;
    if (jac) {
      for (int i = 0; i < 7; ++i) jac->emplace_back(row + i, ix(0, i), 1.0);
    }
    row += 7;

    // Dynamics defects mirror the integrator map exactly. The trapezoidal
    // quaternion sub-block is linear in q, so its raw endpoint carries norm
    // rho*|q_k| with rho = sqrt((1+(h|w_k|/4)^2)/(1+(h|w_k1|/4)^2)), and the
    // integrator renormalizes that endpoint. Writing the defect at the scaled
    // quaternion s = rho*q_{k+1} reproduces solve-then-renormalize, so solved
    // trajectories replay under forward integration to solver precision, |q|
    // propagates exactly, and the norm rows stay redundant but consistent.
    const auto quat_rate_dq = [](const Eigen::Vector3d& w) {
      Eigen::Matrix4d m;
      m << 0.0, -0.5 * w.x(), -0.5 * w.y(), -0.5 * w.z(),
           0.5 * w.x(), 0.0, 0.5 * w.z(), -0.5 * w.y(),
           0.5 * w.y(), -0.5 * w.z(), 0.0, 0.5 * w.x(),
           0.5 * w.z(), 0.5 * w.y(), -0.5 * w.x(), 0.0;
      return m;
    };
    const auto quat_rate_dw = [](const Eigen::Vector4d& a) {
      Eigen::Matrix<double, 4, 3> m;
      m << -0.5 * a(1), -0.5 * a(2), -0.5 * a(3),
           0.5 * a(0), -0.5 * a(3), 0.5 * a(2),
           0.5 * a(3), 0.5 * a(0), -0.5 * a(1),
           -0.5 * a(2), 0.5 * a(1), 0.5 * a(0);
      return m;
    };
    for (int k = 0; k < nsegs; ++k) {
      const Eigen::Matrix<double, 7, 1> sa = detail::pack_state(xs[k]);
      const Eigen::Matrix<double, 7, 1> sb = detail::pack_state(xs[k + 1]);
      const Eigen::Vector4d q1 = sb.segment<4>(3);
      const Eigen::Vector3d w0 = cs[k].omega;
      const Eigen::Vector3d w1 = cs[k + 1].omega;
      const double c16 = hstep * hstep / 16.0;
      const double g0 = 1.0 + c16 * w0.squaredNorm();
      const double g1 = 1.0 + c16 * w1.squaredNorm();
      const double rho = std::sqrt(g0 / g1);
      const Eigen::Vector4d s = rho * q1;
      Pose xsc = xs[k + 1];
      xsc.q = Quat{s(0), s(1), s(2), s(3)};
      const StateDerivative f1 = ode_rhs(xsc, cs[k + 1].v, w1);
      for (int i = 0; i < 3; ++i) {
        h(row + i) = sb(i) - sa(i) - 0.5 * hstep * (fs[k](i) + f1(i));
      }
      for (int i = 0; i < 4; ++i) {
        h(row + 3 + i) = s(i) - sa(3 + i) - 0.5 * hstep * (fs[k](3 + i) + f1(3 + i));
      }
      if (jac) {
        const Eigen::Vector3d drho_dw0 = (rho * c16 / g0) * w0;
        const Eigen::Vector3d drho_dw1 = (-rho * c16 / g1) * w1;
        const double drho_dh =
            (rho * hstep / 16.0) * (w0.squaredNorm() / g0 - w1.squaredNorm() / g1);
        const Eigen::Matrix<double, 7, 7> ja = ode_jacobian_state(xs[k], cs[k].v, w0);
        const Eigen::Matrix<double, 7, 7> jb = ode_jacobian_state(xsc, cs[k + 1].v, w1);
        const Eigen::Matrix<double, 7, 4> ca = ode_jacobian_rates(xs[k], cs[k].v, w0);
        const Eigen::Matrix<double, 7, 4> cb = ode_jacobian_rates(xsc, cs[k + 1].v, w1);
        // Chain through s: the quaternion rows see d(defect)/d(rho) = aw1*q1,
        // the position rows see m3 = d(position rate)/d(q) at s times q1.
        const Eigen::Matrix4d aw1 =
            Eigen::Matrix4d::Identity() - 0.5 * hstep * quat_rate_dq(w1);
        const Eigen::Vector4d u4 = aw1 * q1;
        const Eigen::Vector3d m3 = jb.block<3, 4>(0, 3) * q1;
        for (int i = 0; i < 3; ++i) {
          jac->emplace_back(row + i, ix(k, i), -1.0);
          jac->emplace_back(row + i, ix(k + 1, i), 1.0);
          for (int j = 0; j < 4; ++j) {
            jac->emplace_back(row + i, ix(k, 3 + j), -0.5 * hstep * ja(i, 3 + j));
            jac->emplace_back(row + i, ix(k + 1, 3 + j), -0.5 * hstep * rho * jb(i, 3 + j));
          }
          jac->emplace_back(row + i, ic(k, 0), -0.5 * hstep * ca(i, 0));
          jac->emplace_back(row + i, ic(k + 1, 0), -0.5 * hstep * cb(i, 0));
          for (int a = 0; a < 3; ++a) {
            jac->emplace_back(row + i, ic(k, 1 + a), -0.5 * hstep * m3(i) * drho_dw0(a));
            jac->emplace_back(row + i, ic(k + 1, 1 + a), -0.5 * hstep * m3(i) * drho_dw1(a));
          }
          jac->emplace_back(row + i, itf(),
                            (-0.5 * (fs[k](i) + f1(i)) - 0.5 * hstep * m3(i) * drho_dh) / nsegs);
        }
        const Eigen::Matrix4d mq0 = quat_rate_dq(w0);
        const Eigen::Matrix<double, 4, 3> mw0 = quat_rate_dw(sa.segment<4>(3));
        const Eigen::Matrix<double, 4, 3> mws = quat_rate_dw(s);
        for (int i = 0; i < 4; ++i) {
          for (int j = 0; j < 4; ++j) {
            jac->emplace_back(row + 3 + i, ix(k, 3 + j),
                              -0.5 * hstep * mq0(i, j) + (i == j ? -1.0 : 0.0));
            jac->emplace_back(row + 3 + i, ix(k + 1, 3 + j), rho * aw1(i, j));
          }
          for (int a = 0; a < 3; ++a) {
            jac->emplace_back(row + 3 + i, ic(k, 1 + a),
                              -0.5 * hstep * mw0(i, a) + u4(i) * drho_dw0(a));
            jac->emplace_back(row + 3 + i, ic(k + 1, 1 + a),
                              -0.5 * hstep * mws(i, a) + u4(i) * drho_dw1(a));
          }
          jac->emplace_back(row + 3 + i, itf(),
                            (u4(i) * drho_dh - 0.5 * (fs[k](3 + i) + f1(3 + i))) / nsegs);
        }
      }
      row += 7;
    }

    // Rate-consistency rows.
    const double va4 = p_.v_max / 4.0;
    for (int k = 0; k < n_nodes_; ++k) {
      const auto& u = cs[k].u.u;
      const double v = cs[k].v;
      const double cy = 0.5 * p_.alpha * (u[0] + u[3] - u[1] - u[2]) +
                        (1.0 - p_.alpha) * (u[4] - u[6]);
      const double cz = 0.5 * p_.alpha * (u[0] + u[1] - u[2] - u[3]) +
                        (1.0 - p_.alpha) * (u[5] - u[7]);
      h(row + 0) = v - va4 * (u[0] + u[1] + u[2] + u[3]);
      h(row + 1) = cs[k].omega.x() - p_.eta * v;
      h(row + 2) = cs[k].omega.y() - (v / p_.r_min) * cy;
      h(row + 3) = cs[k].omega.z() - (v / p_.r_min) * cz;
      if (jac) {
        jac->emplace_back(row + 0, ic(k, 0), 1.0);
        for (int g = 0; g < 4; ++g) jac->emplace_back(row + 0, ic(k, 4 + g), -va4);
        jac->emplace_back(row + 1, ic(k, 1), 1.0);
        jac->emplace_back(row + 1, ic(k, 0), -p_.eta);
        const double ha = 0.5 * p_.alpha / p_.r_min;
        const double wa = (1.0 - p_.alpha) / p_.r_min;
        jac->emplace_back(row + 2, ic(k, 2), 1.0);
        jac->emplace_back(row + 2, ic(k, 0), -cy / p_.r_min);
        jac->emplace_back(row + 2, ic(k, 4 + 0), -v * ha);
        jac->emplace_back(row + 2, ic(k, 4 + 3), -v * ha);
        jac->emplace_back(row + 2, ic(k, 4 + 1), v * ha);
        jac->emplace_back(row + 2, ic(k, 4 + 2), v * ha);
        jac->emplace_back(row + 2, ic(k, 4 + 4), -v * wa);
        jac->emplace_back(row + 2, ic(k, 4 + 6), v * wa);
        jac->emplace_back(row + 3, ic(k, 3), 1.0);
        jac->emplace_back(row + 3, ic(k, 0), -cz / p_.r_min);
        jac->emplace_back(row + 3, ic(k, 4 + 0), -v * ha);
        jac->emplace_back(row + 3, ic(k, 4 + 1), -v * ha);
        jac->emplace_back(row + 3, ic(k, 4 + 2), v * ha);
        jac->emplace_back(row + 3, ic(k, 4 + 3), v * ha);
        jac->emplace_back(row + 3, ic(k, 4 + 5), -v * wa);
        jac->emplace_back(row + 3, ic(k, 4 + 7), v * wa);
      }
      row += 4;
    }

    // Quaternion norm rows.
    for (int k = 0; k < n_nodes_; ++k) {
      const Quat& q = xs[k].q;
      h(row) = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z - 1.0;
      if (jac) {
        jac->emplace_back(row, ix(k, 3), 2.0 * q.w);
        jac->emplace_back(row, ix(k, 4), 2.0 * q.x);
        jac->emplace_back(row, ix(k, 5), 2.0 * q.y);
        jac->emplace_back(row, ix(k, 6), 2.0 * q.z);
      }
      row += 1;
    }

    // TPP terminal position.
    if (kind_ == OcpKind::tpp) {
      for (int i = 0; i < 3; ++i) {
        h(row + i) = xs[nsegs].position(i) - xf_.position(i);
        if (jac) jac->emplace_back(row + i, ix(nsegs, i), 1.0);
      }
      row += 3;
    }
  }

  void inequalities(const Eigen::VectorXd& z, Eigen::VectorXd& g,
                    std::vector<Eigen::Triplet<double>>* jac) const {
    const double bt = layout_.total_budget_free();
    const double bw = layout_.wall_budget_free();
    int row = 0;
    for (int k = 0; k < n_nodes_; ++k) {
      double total = 0.0, wall = 0.0;
      for (int gidx = 0; gidx < kNumFreeGroups; ++gidx) {
        const double pg = group_power_[gidx] * z(ic(k, 4 + gidx));
        total += pg;
        if (gidx >= 4) wall += pg;
      }
      g(row) = total / bt - 1.0;
      g(row + 1) = wall / bw - 1.0;
      if (jac) {
        for (int gidx = 0; gidx < kNumFreeGroups; ++gidx) {
          jac->emplace_back(row, ic(k, 4 + gidx), group_power_[gidx] / bt);
          if (gidx >= 4) jac->emplace_back(row + 1, ic(k, 4 + gidx), group_power_[gidx] / bw);
        }
      }
      row += 2;
    }
    const TerminalAttitude t = terminal_attitude(z);
    g(row + 0) = t.theta - w_.phi_max;
    g(row + 1) = -t.theta - w_.phi_max;
    g(row + 2) = t.psi - w_.phi_max;
    g(row + 3) = -t.psi - w_.phi_max;
    if (jac) {
      for (int i = 0; i < 4; ++i) {
        jac->emplace_back(row + 0, ix(opts_.nodes, 3 + i), t.dtheta(i));
        jac->emplace_back(row + 1, ix(opts_.nodes, 3 + i), -t.dtheta(i));
        jac->emplace_back(row + 2, ix(opts_.nodes, 3 + i), t.dpsi(i));
        jac->emplace_back(row + 3, ix(opts_.nodes, 3 + i), -t.dpsi(i));
      }
    }
  }

 private:
  OcpKind kind_;
  Pose x0_, xf_;
  ModelParams p_;
  HeaterLayout layout_;
  OcpWeights w_;
  OcpOptions opts_;
  int n_nodes_;
  Quat qf_conj_;
  std::array<double, kNumFreeGroups> group_power_{};
};

struct OcpProblem {
  std::shared_ptr<const OcpTranscription> transcription;
  NlpProblem nlp;
};

namespace detail {

inline OcpProblem build_ocp(OcpKind kind, const Pose& x0, const Pose& xf, const ModelParams& p,
                            const HeaterLayout& layout, const OcpWeights& w,
                            const OcpOptions& opts, const DiscretizedSolution* warm,
                            double warm_shift) {
  auto tr = std::make_shared<const OcpTranscription>(kind, x0, xf, p, layout, w, opts);
  OcpProblem prob;
  prob.transcription = tr;
  prob.nlp.num_vars = tr->num_vars();
  prob.nlp.num_eq = tr->num_eq();
  prob.nlp.num_ineq = tr->num_ineq();
  prob.nlp.lower = tr->lower_bounds();
  prob.nlp.upper = tr->upper_bounds();
  prob.nlp.initial_guess = warm ? tr->warm_guess(*warm, warm_shift) : tr->straight_guess();
  prob.nlp.objective = [tr](const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
    return tr->objective(z, grad);
  };
  prob.nlp.equalities = [tr](const Eigen::VectorXd& z, Eigen::VectorXd& h,
                             std::vector<Eigen::Triplet<double>>* jac) {
    tr->equalities(z, h, jac);
  };
  prob.nlp.inequalities = [tr](const Eigen::VectorXd& z, Eigen::VectorXd& g,
                               std::vector<Eigen::Triplet<double>>* jac) {
    tr->inequalities(z, g, jac);
  };
  return prob;
}

}  // namespace detail

inline OcpProblem build_tpp(const Pose& x0, const Pose& xf, const ModelParams& p,
                            const HeaterLayout& layout, const OcpWeights& w,
                            const OcpOptions& opts) {
  return detail::build_ocp(OcpKind::tpp, x0, xf, p, layout, w, opts, nullptr, 0.0);
}

inline OcpProblem build_mpc(const Pose& xk, const Pose& xf, const ModelParams& p,
                            const HeaterLayout& layout, const OcpWeights& w,
                            const OcpOptions& opts, const DiscretizedSolution* warm = nullptr,
                            double warm_shift = 0.0) {
  return detail::build_ocp(OcpKind::mpc, xk, xf, p, layout, w, opts, warm, warm_shift);
}

inline DiscretizedSolution solve_ocp(const OcpProblem& prob, const SolveOptions& opts) {
  const NlpSolution nsol = solve_nlp(prob.nlp, opts);
  DiscretizedSolution sol = prob.transcription->decode(nsol.z);
  sol.report = nsol.report;
  sol.objective = nsol.report.objective;
  return sol;
}

inline DiscretizedSolution solve_tpp(const Pose& x0, const Pose& xf, const ModelParams& p,
                                     const HeaterLayout& layout, const OcpWeights& w,
                                     const OcpOptions& opts) {
  return solve_ocp(build_tpp(x0, xf, p, layout, w, opts), opts.nlp);
}

inline DiscretizedSolution solve_mpc(const Pose& xk, const Pose& xf, const ModelParams& p,
                                     const HeaterLayout& layout, const OcpWeights& w,
                                     const OcpOptions& opts,
                                     const DiscretizedSolution* warm = nullptr,
                                     double warm_shift = 0.0) {
  return solve_ocp(build_mpc(xk, xf, p, layout, w, opts, warm, warm_shift), opts.nlp);
}

}  // namespace meltnav
