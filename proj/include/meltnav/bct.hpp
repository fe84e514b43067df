#pragma once

// Binary control transformation: fits 32 on/off heater schedules to the
// continuous unit-level samples of one replanning window by minimizing a
// windowed quadratic defect under per-step power knapsacks. The starred
// variant weights defects by unit power and rewards delivered power with a
// small linear bonus.
//
// Objective evaluation order is canonical (units ascending, steps ascending),
// and both solvers evaluate candidates through the same code path, so an
// exhausted branch-and-bound returns bit-identical objective values to the
// brute-force oracle.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "meltnav/errors.hpp"
#include "meltnav/model.hpp"

namespace meltnav {

struct QuadratureWeights {
  std::vector<double> a;  // outer weights, M values, sum T
  std::vector<double> b;  // inner weights, l+1 values, sum delta
};

// Uniform-grid chained trapezoidal weights over M points spanning T, with an
// inner window of l intervals on the same grid.
inline QuadratureWeights quadrature_weights(int m, double t, int l) {
  if (m < 2 || l < 1 || l > m - 1 || !(t > 0.0)) {
    throw config_error("quadrature_weights: need M >= 2, 1 <= l <= M-1, T > 0");
  }
  const double h = t / (m - 1);
  QuadratureWeights w;
  w.a.assign(m, h);
  w.a.front() = 0.5 * h;
  w.a.back() = 0.5 * h;
  w.b.assign(l + 1, h);
  w.b.front() = 0.5 * h;
  w.b.back() = 0.5 * h;
  return w;
}

struct BctWindow {
  double t_window = 0.0;     // T, hours
  int m = 0;                 // grid points
  double delta = 0.0;        // inner integral width, hours
  Eigen::MatrixXd u_samples; // m x 32, values in [0, 1]
  Eigen::MatrixXd history;   // rows of previously applied binaries, oldest first;
                             // last row is the step immediately before the window

  [[nodiscard]] int index_span() const {
    const int l = static_cast<int>(std::lround(delta * (m - 1) / t_window));
    return std::clamp(l, 1, m - 1);
  }

  void validate() const {
    if (m < 2 || !(t_window > 0.0) || !(delta > 0.0)) {
      throw config_error("BctWindow: need M >= 2, T > 0, delta > 0");
    }
    if (u_samples.rows() != m || u_samples.cols() != kNumUnits) {
      throw config_error("BctWindow: u_samples must be M x 32");
    }
    if ((u_samples.array() < -1e-12).any() || (u_samples.array() > 1.0 + 1e-12).any()) {
      throw config_error("BctWindow: samples must lie in [0, 1]");
    }
    if (history.size() > 0 && history.cols() != kNumUnits) {
      throw config_error("BctWindow: history must have 32 columns");
    }
  }
};

enum class BctVariant { bct, bct_star };

struct BctProblem {
  int m = 0;
  int l = 0;
  QuadratureWeights qw;
  Eigen::MatrixXd u;           // m x 32 continuous samples
  Eigen::MatrixXd pre_defect;  // m x 32 constants from history / extension
  HeaterLayout layout;
  std::array<double, kNumUnits> mu{};
  double zeta = 0.0;
  BctVariant variant = BctVariant::bct;

  // Canonical per-unit objective term; the total objective is the ascending-
  // unit sum of these. Every candidate evaluation goes through this function.
  [[nodiscard]] double unit_term(const Eigen::MatrixXd& v, int i) const {
    double defect_sum = 0.0;
    for (int j = 0; j < m; ++j) {
      double d = pre_defect(j, i);
      const int m0 = std::max(0, j - l);
      for (int mm = m0; mm <= j; ++mm) {
        d += qw.b[static_cast<std::size_t>(mm - (j - l))] * (u(mm, i) - v(mm, i));
      }
      defect_sum += qw.a[static_cast<std::size_t>(j)] * d * d;
    }
    double term = mu[static_cast<std::size_t>(i)] * mu[static_cast<std::size_t>(i)] * defect_sum;
    if (variant == BctVariant::bct_star) {
      double on_time = 0.0;
      for (int j = 0; j < m; ++j) on_time += qw.a[static_cast<std::size_t>(j)] * v(j, i);
      term -= zeta * layout.unit_power[static_cast<std::size_t>(i)] * on_time;
    }
    return term;
  }

  [[nodiscard]] double objective(const Eigen::MatrixXd& v) const {
    double total = 0.0;
    for (int i = 0; i < kNumUnits; ++i) total += unit_term(v, i);
    return total;
  }

  // Eq.-12 style unit-level feasibility of one schedule step.
  [[nodiscard]] bool step_feasible(const Eigen::MatrixXd& v, int j) const {
    BinaryControls b;
    for (int i = 0; i < kNumUnits; ++i) b.on[static_cast<std::size_t>(i)] = v(j, i) > 0.5;
    return power_check_units(b, layout).feasible;
  }

  [[nodiscard]] bool schedule_feasible(const Eigen::MatrixXd& v) const {
    for (int j = 0; j < m; ++j) {
      if (!step_feasible(v, j)) return false;
    }
    return true;
  }
};

namespace detail {

inline BctProblem make_bct_problem(const BctWindow& window, const HeaterLayout& layout,
                                   const std::array<double, kNumUnits>& mu, double zeta,
                                   BctVariant variant) {
  window.validate();
  layout.validate();
  BctProblem p;
  p.m = window.m;
  p.l = window.index_span();
  p.qw = quadrature_weights(window.m, window.t_window, p.l);
  p.u = window.u_samples;
  p.layout = layout;
  p.mu = mu;
  p.zeta = zeta;
  p.variant = variant;
  for (double mui : mu) {
    if (!(mui > 0.0)) throw config_error("bct: defect weights must be positive");
  }
  // Pre-window defect constants: window indices before the first step read
  // the applied history; u extends constantly; steps with no recorded
  // history contribute no defect.
  p.pre_defect = Eigen::MatrixXd::Zero(window.m, kNumUnits);
  const int hist_rows = static_cast<int>(window.history.rows());
  for (int i = 0; i < kNumUnits; ++i) {
    const double u_ext = window.u_samples(0, i);
    for (int j = 0; j < p.l; ++j) {  // rows whose window reaches before step 0
      double c = 0.0;
      for (int mm = j - p.l; mm < 0; ++mm) {
        const int hr = hist_rows + mm;  // mm = -1 -> last history row
        if (hr < 0) continue;
        c += p.qw.b[static_cast<std::size_t>(mm - (j - p.l))] *
             (u_ext - window.history(hr, i));
      }
      p.pre_defect(j, i) = c;
    }
  }
  return p;
}

}  // namespace detail

inline BctProblem build_bct(const BctWindow& window, const HeaterLayout& layout,
                            const std::array<double, kNumUnits>& mu) {
  return detail::make_bct_problem(window, layout, mu, 0.0, BctVariant::bct);
}

inline BctProblem build_bct_star(const BctWindow& window, const HeaterLayout& layout,
                                 double zeta) {
  if (zeta < 0.0) throw config_error("build_bct_star: zeta must be non-negative");
  std::array<double, kNumUnits> mu{};
  for (int i = 0; i < kNumUnits; ++i) mu[static_cast<std::size_t>(i)] = layout.unit_power[static_cast<std::size_t>(i)];
  return detail::make_bct_problem(window, layout, mu, zeta, BctVariant::bct_star);
}

struct BnbBudget {
  std::int64_t max_nodes = std::numeric_limits<std::int64_t>::max();
};

struct BinarySchedule {
  Eigen::MatrixXi v;  // m x 32 of {0, 1}
  double objective = std::numeric_limits<double>::infinity();
  bool optimal = false;
  double lower_bound = -std::numeric_limits<double>::infinity();
  std::int64_t nodes_explored = 0;
};

namespace detail {

// Deterministic preference among equal-objective schedules: at the first
// differing entry in unit-major, step-minor order, prefer the schedule that
// turns the unit on.
inline bool tie_prefers(const Eigen::MatrixXi& cand, const Eigen::MatrixXi& inc) {
  for (int i = 0; i < inc.cols(); ++i) {
    for (int j = 0; j < inc.rows(); ++j) {
      if (cand(j, i) != inc(j, i)) return cand(j, i) == 1;
    }
  }
  return false;
}

// Exact minimizer of a strictly convex quadratic x'Qx + lin'x over [0,1]^n
// with some coordinates fixed; primal active-set iteration.
struct BoxQp {
  Eigen::MatrixXd q;       // symmetric PD
  Eigen::VectorXd lin;
  // fixed[i]: -1 free, 0 or 1 pinned.
  [[nodiscard]] std::pair<double, Eigen::VectorXd> solve(const std::vector<int>& fixed,
                                                         const Eigen::VectorXd& start) const {
    const int n = static_cast<int>(q.rows());
    Eigen::VectorXd x = start;
    for (int i = 0; i < n; ++i) {
      if (fixed[static_cast<std::size_t>(i)] >= 0) x(i) = fixed[static_cast<std::size_t>(i)];
      else x(i) = std::clamp(x(i), 0.0, 1.0);
    }
    std::vector<int> at_bound(static_cast<std::size_t>(n), -1);  // -1 interior, 0 or 1
    for (int i = 0; i < n; ++i) {
      if (fixed[static_cast<std::size_t>(i)] >= 0) continue;
      if (x(i) <= 0.0) at_bound[static_cast<std::size_t>(i)] = 0;
      if (x(i) >= 1.0) at_bound[static_cast<std::size_t>(i)] = 1;
    }
    const auto value = [&](const Eigen::VectorXd& xx) {
      return xx.dot(q * xx) + lin.dot(xx);
    };
    for (int iter = 0; iter < 100 * n + 100; ++iter) {
      std::vector<int> free_idx;
      for (int i = 0; i < n; ++i) {
        if (fixed[static_cast<std::size_t>(i)] < 0 && at_bound[static_cast<std::size_t>(i)] < 0) {
          free_idx.push_back(i);
        }
      }
      bool moved = false;
      if (!free_idx.empty()) {
        const int nf = static_cast<int>(free_idx.size());
        Eigen::MatrixXd qff(nf, nf);
        Eigen::VectorXd rhs(nf);
        for (int a = 0; a < nf; ++a) {
          for (int bidx = 0; bidx < nf; ++bidx) qff(a, bidx) = q(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(bidx)]);
          double r = lin(free_idx[static_cast<std::size_t>(a)]);
          for (int i = 0; i < n; ++i) {
            const bool is_free = fixed[static_cast<std::size_t>(i)] < 0 && at_bound[static_cast<std::size_t>(i)] < 0;
            if (!is_free) r += 2.0 * q(free_idx[static_cast<std::size_t>(a)], i) * x(i);
          }
          rhs(a) = -0.5 * r;
        }
        const Eigen::VectorXd xf = qff.ldlt().solve(rhs);
        // Step toward the equality-constrained minimizer, stopping at the
        // first blocking bound.
        double alpha = 1.0;
        int blocker = -1, bval = 0;
        for (int a = 0; a < nf; ++a) {
          const int i = free_idx[static_cast<std::size_t>(a)];
          const double di = xf(a) - x(i);
          if (di > 1e-300 && x(i) + alpha * di > 1.0) {
            const double am = (1.0 - x(i)) / di;
            if (am < alpha) { alpha = am; blocker = i; bval = 1; }
          } else if (di < -1e-300 && x(i) + alpha * di < 0.0) {
            const double am = (0.0 - x(i)) / di;
            if (am < alpha) { alpha = am; blocker = i; bval = 0; }
          }
        }
        double max_move = 0.0;
        for (int a = 0; a < nf; ++a) {
          const int i = free_idx[static_cast<std::size_t>(a)];
          const double nx = x(i) + alpha * (xf(a) - x(i));
          max_move = std::max(max_move, std::abs(nx - x(i)));
          x(i) = std::clamp(nx, 0.0, 1.0);
        }
        if (blocker >= 0) {
          at_bound[static_cast<std::size_t>(blocker)] = bval;
          x(blocker) = bval;
          moved = true;
        } else if (max_move > 1e-14) {
          moved = true;
        }
      }
      if (!moved) {
        // KKT check at bound-active coordinates; release the worst violator.
        const Eigen::VectorXd grad = 2.0 * (q * x) + lin;
        int release = -1;
        double worst = -1e-11;
        for (int i = 0; i < n; ++i) {
          if (fixed[static_cast<std::size_t>(i)] >= 0 || at_bound[static_cast<std::size_t>(i)] < 0) continue;
          const double viol = at_bound[static_cast<std::size_t>(i)] == 0 ? -grad(i) : grad(i);
          if (viol > worst + 1e-18 && viol > 1e-12) {
            worst = viol;
            release = i;
          }
        }
        if (release < 0) return {value(x), x};
        at_bound[static_cast<std::size_t>(release)] = -1;
      }
    }
    // Iteration cap: fall back to the unconstrained minimum, which is always
    // a valid lower bound for the box problem.
    Eigen::VectorXd xs = q.ldlt().solve(-0.5 * lin);
    return {value(xs), x};
  }
};

struct BnbContext {
  const BctProblem& prob;
  Eigen::MatrixXd q0;                       // B' A B, shared across units
  std::vector<Eigen::VectorXd> lin;         // per-unit linear coefficients
  std::vector<double> cst;                  // per-unit constants
  std::vector<std::vector<int>> fixed;      // per-unit, per-step: -1 free, 0/1
  std::vector<char> corner;                 // per-unit flag
  std::vector<double> relax_value;          // cached per-unit relaxation minimum
  std::vector<Eigen::VectorXd> relax_x;
  std::vector<char> dirty;
  std::int64_t nodes = 0;
  std::int64_t budget = 0;
  Eigen::MatrixXi incumbent;
  double incumbent_obj = std::numeric_limits<double>::infinity();
  bool have_incumbent = false;
  double open_bound = std::numeric_limits<double>::infinity();

  explicit BnbContext(const BctProblem& p) : prob(p) {
    const int m = p.m;
    Eigen::MatrixXd bmat = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
      for (int mm = std::max(0, j - p.l); mm <= j; ++mm) {
        bmat(j, mm) = p.qw.b[static_cast<std::size_t>(mm - (j - p.l))];
      }
    }
    Eigen::MatrixXd amat = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) amat(j, j) = p.qw.a[static_cast<std::size_t>(j)];
    q0 = bmat.transpose() * amat * bmat;
    lin.resize(kNumUnits);
    cst.resize(kNumUnits);
    fixed.assign(kNumUnits, std::vector<int>(static_cast<std::size_t>(m), -1));
    corner.assign(kNumUnits, 0);
    relax_value.assign(kNumUnits, 0.0);
    relax_x.assign(kNumUnits, Eigen::VectorXd::Constant(m, 0.5));
    dirty.assign(kNumUnits, 1);
    Eigen::VectorXd avec(m);
    for (int j = 0; j < m; ++j) avec(j) = p.qw.a[static_cast<std::size_t>(j)];
    for (int i = 0; i < kNumUnits; ++i) {
      const double mui = p.mu[static_cast<std::size_t>(i)];
      const Eigen::VectorXd k = p.pre_defect.col(i) + bmat * p.u.col(i);
      lin[static_cast<std::size_t>(i)] = -2.0 * mui * mui * (bmat.transpose() * (avec.asDiagonal() * k));
      cst[static_cast<std::size_t>(i)] = mui * mui * k.dot(avec.asDiagonal() * k);
      if (p.variant == BctVariant::bct_star) {
        lin[static_cast<std::size_t>(i)] -= p.zeta * p.layout.unit_power[static_cast<std::size_t>(i)] * avec;
      }
      if (p.layout.is_corner(i)) {
        corner[static_cast<std::size_t>(i)] = 1;
        std::fill(fixed[static_cast<std::size_t>(i)].begin(), fixed[static_cast<std::size_t>(i)].end(), 1);
      }
    }
  }

  void refresh(int i) {
    if (!dirty[static_cast<std::size_t>(i)]) return;
    const double mui = prob.mu[static_cast<std::size_t>(i)];
    BoxQp qp{mui * mui * q0, lin[static_cast<std::size_t>(i)]};
    auto [val, x] = qp.solve(fixed[static_cast<std::size_t>(i)], relax_x[static_cast<std::size_t>(i)]);
    relax_value[static_cast<std::size_t>(i)] = val + cst[static_cast<std::size_t>(i)];
    relax_x[static_cast<std::size_t>(i)] = x;
    dirty[static_cast<std::size_t>(i)] = 0;
  }

  // Per-step load/feasibility of the variables pinned on (corners included).
  [[nodiscard]] bool fixed_feasible() const {
    for (int j = 0; j < prob.m; ++j) {
      double total = 0.0, wall = 0.0, back = 0.0;
      for (int i = 0; i < kNumUnits; ++i) {
        if (fixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == 1) {
          const double pw = prob.layout.unit_power[static_cast<std::size_t>(i)];
          total += pw;
          if (prob.layout.is_wall(i)) wall += pw;
          if (prob.layout.is_back(i)) back += pw;
        }
      }
      if (total > prob.layout.p_total_max || wall > prob.layout.p_wall_max ||
          back > prob.layout.p_back_max) {
        return false;
      }
    }
    return true;
  }

  void offer_incumbent(const Eigen::MatrixXi& cand) {
    Eigen::MatrixXd vd = cand.cast<double>();
    if (!prob.schedule_feasible(vd)) return;
    const double obj = prob.objective(vd);
    if (!have_incumbent || obj < incumbent_obj ||
        (obj == incumbent_obj && tie_prefers(cand, incumbent))) {
      incumbent = cand;
      incumbent_obj = obj;
      have_incumbent = true;
    }
  }

  // Rounding heuristic with greedy knapsack repair; respects pinned values.
  void rounding_heuristic() {
    Eigen::MatrixXi cand(prob.m, kNumUnits);
    for (int i = 0; i < kNumUnits; ++i) {
      for (int j = 0; j < prob.m; ++j) {
        const int f = fixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        cand(j, i) = f >= 0 ? f : (relax_x[static_cast<std::size_t>(i)](j) >= 0.5 ? 1 : 0);
      }
    }
    for (int j = 0; j < prob.m; ++j) {
      // Turn off the largest-power free unit in the most violated set until
      // the step fits the budgets; deterministic order.
      for (int guard = 0; guard < kNumUnits + 1; ++guard) {
        double total = 0.0, wall = 0.0, back = 0.0;
        for (int i = 0; i < kNumUnits; ++i) {
          if (cand(j, i) == 1) {
            const double pw = prob.layout.unit_power[static_cast<std::size_t>(i)];
            total += pw;
            if (prob.layout.is_wall(i)) wall += pw;
            if (prob.layout.is_back(i)) back += pw;
          }
        }
        const bool viol_total = total > prob.layout.p_total_max;
        const bool viol_wall = wall > prob.layout.p_wall_max;
        const bool viol_back = back > prob.layout.p_back_max;
        if (!viol_total && !viol_wall && !viol_back) break;
        int pick = -1;
        double pick_power = -1.0;
        for (int i = kNumUnits - 1; i >= 0; --i) {
          if (cand(j, i) != 1) continue;
          if (fixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] >= 0) continue;
          const bool helps = viol_total || (viol_wall && prob.layout.is_wall(i)) ||
                             (viol_back && prob.layout.is_back(i));
          if (!helps) continue;
          const double pw = prob.layout.unit_power[static_cast<std::size_t>(i)];
          if (pw > pick_power) {
            pick_power = pw;
            pick = i;
          }
        }
        if (pick < 0) return;  // cannot repair under current pins
        cand(j, pick) = 0;
      }
    }
    offer_incumbent(cand);
  }

  // A node is solved exactly when every variable's relaxed optimum sits
  // bitwise on a bound (0 or 1) and that point is knapsack-feasible: the
  // per-unit relaxation is then attained by an admissible schedule, so the
  // subtree's minimum is this candidate and no branching is needed. The
  // integrality test is exact equality on purpose; near-integral relaxations
  // fall through to branching, which preserves exactness.
  bool relaxation_closes_node() {
    Eigen::MatrixXi cand(prob.m, kNumUnits);
    for (int i = 0; i < kNumUnits; ++i) {
      for (int j = 0; j < prob.m; ++j) {
        const int f = fixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        const double x = f >= 0 ? static_cast<double>(f) : relax_x[static_cast<std::size_t>(i)](j);
        if (x != 0.0 && x != 1.0) return false;
        cand(j, i) = x == 1.0 ? 1 : 0;
      }
    }
    if (!prob.schedule_feasible(cand.cast<double>())) return false;
    offer_incumbent(cand);
    return true;
  }

  void dfs(double parent_bound) {
    if (nodes >= budget) {
      open_bound = std::min(open_bound, parent_bound);
      return;
    }
    ++nodes;
    if (!fixed_feasible()) return;
    for (int i = 0; i < kNumUnits; ++i) refresh(i);
    double bound = 0.0;
    for (int i = 0; i < kNumUnits; ++i) bound += relax_value[static_cast<std::size_t>(i)];
    bound -= 1e-9 * (1.0 + std::abs(bound));  // floating-point safety slack
    if (have_incumbent && bound > incumbent_obj) return;
    rounding_heuristic();
    if (relaxation_closes_node()) return;

    // Pick the most fractional free variable.
    int bi = -1, bj = -1;
    double best_frac = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kNumUnits; ++i) {
      if (corner[static_cast<std::size_t>(i)]) continue;
      for (int j = 0; j < prob.m; ++j) {
        if (fixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] >= 0) continue;
        const double f = std::abs(relax_x[static_cast<std::size_t>(i)](j) - 0.5);
        if (f < best_frac - 1e-15) {
          best_frac = f;
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) return;  // all pinned; the heuristic already evaluated this leaf

    const double xv = relax_x[static_cast<std::size_t>(bi)](bj);
    const int first = xv >= 0.5 ? 1 : 0;
    for (int child = 0; child < 2; ++child) {
      const int val = child == 0 ? first : 1 - first;
      fixed[static_cast<std::size_t>(bi)][static_cast<std::size_t>(bj)] = val;
      dirty[static_cast<std::size_t>(bi)] = 1;
      dfs(bound);
      fixed[static_cast<std::size_t>(bi)][static_cast<std::size_t>(bj)] = -1;
      dirty[static_cast<std::size_t>(bi)] = 1;
    }
  }
};

inline Eigen::MatrixXi corners_only_schedule(const BctProblem& p) {
  Eigen::MatrixXi v = Eigen::MatrixXi::Zero(p.m, kNumUnits);
  for (int i = 0; i < kNumUnits; ++i) {
    if (p.layout.is_corner(i)) v.col(i).setOnes();
  }
  return v;
}

}  // namespace detail

// Branch-and-bound solver. Anytime: with a node budget the incumbent best
// feasible schedule is returned; the optimality flag is set only when the
// tree was exhausted. A supplied warm start must be feasible and is never
// worsened.
inline BinarySchedule solve_bnb(const BctProblem& problem, const BnbBudget& budget = {},
                                const BinarySchedule* warm = nullptr) {
  const Eigen::MatrixXd corners = detail::corners_only_schedule(problem).cast<double>();
  if (!problem.schedule_feasible(corners)) {
    throw config_error("solve_bnb: corner units alone violate the power budgets");
  }
  detail::BnbContext ctx(problem);
  ctx.budget = budget.max_nodes;
  if (warm) {
    if (warm->v.rows() != problem.m || warm->v.cols() != kNumUnits) {
      throw config_error("solve_bnb: warm start has wrong dimensions");
    }
    if (!problem.schedule_feasible(warm->v.cast<double>())) {
      throw config_error("solve_bnb: warm start violates the power budgets");
    }
    ctx.incumbent = warm->v;
    ctx.incumbent_obj = problem.objective(warm->v.cast<double>());
    ctx.have_incumbent = true;
  }
  if (budget.max_nodes <= 0) {
    BinarySchedule out;
    out.v = ctx.have_incumbent ? ctx.incumbent : detail::corners_only_schedule(problem);
    out.objective = ctx.have_incumbent ? ctx.incumbent_obj
                                       : problem.objective(out.v.cast<double>());
    out.optimal = false;
    out.lower_bound = -std::numeric_limits<double>::infinity();
    out.nodes_explored = 0;
    return out;
  }
  if (!ctx.have_incumbent) {
    ctx.incumbent = detail::corners_only_schedule(problem);
    ctx.incumbent_obj = problem.objective(ctx.incumbent.cast<double>());
    ctx.have_incumbent = true;
  }
  ctx.dfs(-std::numeric_limits<double>::infinity());
  BinarySchedule out;
  out.v = ctx.incumbent;
  out.objective = ctx.incumbent_obj;
  out.optimal = ctx.open_bound == std::numeric_limits<double>::infinity();
  out.lower_bound = out.optimal ? ctx.incumbent_obj : std::min(ctx.open_bound, ctx.incumbent_obj);
  out.nodes_explored = ctx.nodes;
  return out;
}

namespace detail {

// Units whose value is forced in every optimal schedule, shrinking the
// enumeration space without affecting the optimum:
//  - power-forced off: the unit plus the always-on corners already exceed one
//    of the budgets covering it, so no feasible step can have it on;
//  - demand-forced off (plain BCT only): a unit with zero continuous demand
//    and non-positive carried-in defect strictly worsens the objective the
//    moment it turns on, and turning it off only loosens the knapsacks.
inline bool unit_forced_off(const BctProblem& p, int i) {
  const HeaterLayout& lo = p.layout;
  const double corner_power = lo.group_power(kNumGroups - 1);
  const double pw = lo.unit_power[static_cast<std::size_t>(i)];
  if (corner_power + pw > lo.p_total_max) return true;
  if (lo.is_wall(i) && pw > lo.p_wall_max) return true;
  if (lo.is_back(i) && corner_power + pw > lo.p_back_max) return true;
  if (p.variant == BctVariant::bct && (p.u.col(i).array() == 0.0).all() &&
      (p.pre_defect.col(i).array() <= 0.0).all()) {
    return true;
  }
  return false;
}

}  // namespace detail

// Exhaustive oracle over all feasible schedules; unit-major enumeration with
// the same canonical objective summation order as solve_bnb. Units that are
// provably off in every optimum are presolved out and do not count toward the
// size guard.
inline BinarySchedule brute_force(const BctProblem& problem) {
  std::vector<char> in_play(kNumUnits, 0);
  long long free_count = 0;
  for (int i = 0; i < kNumUnits; ++i) {
    if (problem.layout.is_corner(i) || detail::unit_forced_off(problem, i)) continue;
    in_play[static_cast<std::size_t>(i)] = 1;
    ++free_count;
  }
  const long long bits = static_cast<long long>(problem.m) * free_count;
  if (bits > 24) throw config_error("brute_force: instance too large (M x free units > 24)");
  Eigen::MatrixXd corners = detail::corners_only_schedule(problem).cast<double>();
  if (!problem.schedule_feasible(corners)) {
    throw config_error("brute_force: corner units alone violate the power budgets");
  }

  Eigen::MatrixXd v = corners;
  Eigen::MatrixXi best;
  double best_obj = std::numeric_limits<double>::infinity();
  bool have_best = false;

  // Ascending-unit DFS; the running sum reproduces objective()'s order.
  std::vector<double> term(kNumUnits, 0.0);
  const std::function<void(int, double)> rec = [&](int ui, double prefix) {
    if (ui == kNumUnits) {
      if (problem.schedule_feasible(v)) {
        Eigen::MatrixXi cand = v.cast<int>();
        if (!have_best || prefix < best_obj ||
            (prefix == best_obj && detail::tie_prefers(cand, best))) {
          best = cand;
          best_obj = prefix;
          have_best = true;
        }
      }
      return;
    }
    if (!in_play[static_cast<std::size_t>(ui)]) {
      // Corner columns stay all-ones, forced-off columns stay all-zeros.
      rec(ui + 1, prefix + problem.unit_term(v, ui));
      return;
    }
    const int patterns = 1 << problem.m;
    for (int pat = 0; pat < patterns; ++pat) {
      for (int j = 0; j < problem.m; ++j) v(j, ui) = (pat >> j) & 1;
      rec(ui + 1, prefix + problem.unit_term(v, ui));
    }
    for (int j = 0; j < problem.m; ++j) v(j, ui) = 0.0;
  };
  rec(0, 0.0);

  if (!have_best) throw config_error("brute_force: no feasible schedule exists");
  BinarySchedule out;
  out.v = best;
  out.objective = best_obj;
  out.optimal = true;
  out.lower_bound = best_obj;
  return out;
}

struct CoverageReport {
  std::optional<double> head;
  std::optional<double> wall;
  std::optional<double> back;
};

// Ratio of a-weighted delivered power (binary schedule) to requested power
// (continuous samples) per index set; undefined when the set requests none.
inline CoverageReport coverage_report(const BinarySchedule& schedule,
                                      const Eigen::MatrixXd& u_samples,
                                      const HeaterLayout& layout) {
  if (schedule.v.rows() != u_samples.rows() || u_samples.cols() != kNumUnits) {
    throw config_error("coverage_report: dimension mismatch");
  }
  const int m = static_cast<int>(u_samples.rows());
  const QuadratureWeights qw = quadrature_weights(m, 1.0, 1);  // shape of a only
  double num[3] = {0, 0, 0}, den[3] = {0, 0, 0};
  for (int j = 0; j < m; ++j) {
    const double aj = qw.a[static_cast<std::size_t>(j)];
    for (int i = 0; i < kNumUnits; ++i) {
      const int set = layout.is_head(i) ? 0 : layout.is_wall(i) ? 1 : 2;
      num[set] += aj * layout.unit_power[static_cast<std::size_t>(i)] * schedule.v(j, i);
      den[set] += aj * layout.unit_power[static_cast<std::size_t>(i)] * u_samples(j, i);
    }
  }
  CoverageReport r;
  if (den[0] > 0.0) r.head = num[0] / den[0];
  if (den[1] > 0.0) r.wall = num[1] / den[1];
  if (den[2] > 0.0) r.back = num[2] / den[2];
  return r;
}

}  // namespace meltnav
