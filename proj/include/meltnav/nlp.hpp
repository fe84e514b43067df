#pragma once

// General sparse nonlinear programming solver:
//
//   min f(z)  s.t.  h(z) = 0,  g(z) <= 0,  l <= z <= u.
//
// Architecture: SQP outer loop with a damped limited-memory BFGS Hessian in
// compact form; each QP subproblem is solved by a Mehrotra predictor-corrector
// interior-point method on a regularized quasi-definite KKT system. The
// low-rank Hessian part enters the KKT solve through the Woodbury identity, so
// the factored matrix keeps the constraint Jacobian sparsity. Line search uses
// an L1 exact-penalty merit function with a second-order correction retry.
//
// Deterministic: identical inputs and options give identical iterates.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace meltnav {

struct NlpProblem {
  int num_vars = 0;
  int num_eq = 0;
  int num_ineq = 0;
  Eigen::VectorXd lower;   // size num_vars; -inf where unbounded
  Eigen::VectorXd upper;   // size num_vars; +inf where unbounded
  Eigen::VectorXd initial_guess;

  // Returns f(z); fills *grad (size num_vars) when non-null.
  std::function<double(const Eigen::VectorXd& z, Eigen::VectorXd* grad)> objective;

  // Fills h(z) (size num_eq); appends Jacobian triplets when non-null. The
  // triplet structure must be identical on every call.
  std::function<void(const Eigen::VectorXd& z, Eigen::VectorXd& h,
                     std::vector<Eigen::Triplet<double>>* jac)>
      equalities;

  // Fills g(z) (size num_ineq, feasible when <= 0); same triplet contract.
  std::function<void(const Eigen::VectorXd& z, Eigen::VectorXd& g,
                     std::vector<Eigen::Triplet<double>>* jac)>
      inequalities;

  // Optional: exact curvature of the objective's least-squares part as a thin
  // matrix U (num_vars x r) with Hessian contribution U U^T. Supplying it
  // keeps stiff penalty directions out of the quasi-Newton scalar scaling, so
  // steps stay long along flat directions instead of crawling.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& z)> objective_curvature;
};

enum class SolveStatus { converged, iteration_limit, line_search_failure, nan_detected };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::iteration_limit: return "iteration_limit";
    case SolveStatus::line_search_failure: return "line_search_failure";
    case SolveStatus::nan_detected: return "nan_detected";
  }
  return "unknown";
}

struct SolveOptions {
  double kkt_tol = 1e-6;
  double feas_tol = 1e-6;
  int max_iterations = 300;
  int lbfgs_memory = 10;
  int qp_max_iterations = 50;
  int line_search_max = 30;
  double penalty_initial = 10.0;
  int verbosity = 0;  // > 0: per-iteration diagnostics on stderr
};

struct SolveReport {
  SolveStatus status = SolveStatus::iteration_limit;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double constraint_violation = std::numeric_limits<double>::infinity();
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::string message;
};

struct NlpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd lambda_eq;
  Eigen::VectorXd lambda_ineq;
  SolveReport report;
};

namespace detail {

// Damped limited-memory BFGS approximation B of the Lagrangian Hessian in
// compact form: B = sigma*I - Psi * Minv * Psi^T.
class LbfgsHessian {
 public:
  explicit LbfgsHessian(int n, int memory) : n_(n), memory_(memory) {}

  void reset() {
    pairs_s_.clear();
    pairs_y_.clear();
    sigma_ = 1.0;
    rebuild();
  }

  [[nodiscard]] int rank2() const { return 2 * static_cast<int>(pairs_s_.size()); }
  [[nodiscard]] double sigma() const { return sigma_; }
  [[nodiscard]] const Eigen::MatrixXd& psi() const { return psi_; }
  [[nodiscard]] const Eigen::MatrixXd& m_matrix() const { return m_; }

  [[nodiscard]] Eigen::VectorXd multiply(const Eigen::VectorXd& v) const {
    Eigen::VectorXd r = sigma_ * v;
    if (!pairs_s_.empty()) {
      r.noalias() -= psi_ * m_lu_.solve(psi_.transpose() * v);
    }
    return r;
  }

  // Powell-damped update with the curvature pair (s, y).
  void update(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    const Eigen::VectorXd bs = multiply(s);
    const double sbs = s.dot(bs);
    const double sy = s.dot(y);
    Eigen::VectorXd y_used = y;
    if (sy < 0.2 * sbs) {
      const double theta = 0.8 * sbs / (sbs - sy);
      y_used = theta * y + (1.0 - theta) * bs;
    }
    const double sy_used = s.dot(y_used);
    if (!(sy_used > 1e-12 * s.norm() * y_used.norm()) || !std::isfinite(sy_used)) {
      return;  // degenerate pair, skip
    }
    pairs_s_.push_back(s);
    pairs_y_.push_back(y_used);
    while (static_cast<int>(pairs_s_.size()) > memory_) {
      pairs_s_.pop_front();
      pairs_y_.pop_front();
    }
    sigma_ = std::clamp(y_used.squaredNorm() / sy_used, 1e-4, 1e8);
    rebuild();
  }

 private:
  void rebuild() {
    const int m = static_cast<int>(pairs_s_.size());
    if (m == 0) {
      psi_.resize(n_, 0);
      m_.resize(0, 0);
      return;
    }
    Eigen::MatrixXd s_mat(n_, m), y_mat(n_, m);
    for (int i = 0; i < m; ++i) {
      s_mat.col(i) = pairs_s_[i];
      y_mat.col(i) = pairs_y_[i];
    }
    const Eigen::MatrixXd sts = s_mat.transpose() * s_mat;
    const Eigen::MatrixXd sty = s_mat.transpose() * y_mat;
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd d(m);
    for (int i = 0; i < m; ++i) {
      d(i) = sty(i, i);
      for (int j = 0; j < i; ++j) l(i, j) = sty(i, j);
    }
    psi_.resize(n_, 2 * m);
    psi_.leftCols(m) = sigma_ * s_mat;
    psi_.rightCols(m) = y_mat;
    m_.resize(2 * m, 2 * m);
    m_.topLeftCorner(m, m) = sigma_ * sts;
    m_.topRightCorner(m, m) = l;
    m_.bottomLeftCorner(m, m) = l.transpose();
    m_.bottomRightCorner(m, m) = -d.asDiagonal().toDenseMatrix();
    m_lu_.compute(m_);
    if (!m_lu_.isInvertible()) {
      // Degenerate curvature memory; fall back to the scaled identity.
      pairs_s_.clear();
      pairs_y_.clear();
      psi_.resize(n_, 0);
      m_.resize(0, 0);
    }
  }

  int n_;
  int memory_;
  std::deque<Eigen::VectorXd> pairs_s_;
  std::deque<Eigen::VectorXd> pairs_y_;
  double sigma_ = 1.0;
  Eigen::MatrixXd psi_;
  Eigen::MatrixXd m_;
  Eigen::FullPivLU<Eigen::MatrixXd> m_lu_;
};

struct QpResult {
  Eigen::VectorXd d;     // primal step
  Eigen::VectorXd y;     // equality multipliers
  Eigen::VectorXd w;     // inequality multipliers (>= 0)
  Eigen::VectorXd zl;    // lower-bound multipliers (>= 0)
  Eigen::VectorXd zu;    // upper-bound multipliers (>= 0)
  bool converged = false;
  double mu = std::numeric_limits<double>::infinity();
};

// Interior-point solver for the SQP subproblem
//   min 1/2 d'Bd + g'd  s.t.  Je d = re,  Ji d <= ri,  dl <= d <= du,
// with B = sigma*I - Psi Minv Psi' supplied by the L-BFGS object, plus an
// optional exact low-rank term U U' from the objective's least-squares part.
class IpQpSolver {
 public:
  IpQpSolver(const LbfgsHessian& hess, const Eigen::SparseMatrix<double>& je,
             const Eigen::SparseMatrix<double>& ji, int n,
             Eigen::MatrixXd uobj = Eigen::MatrixXd())
      : hess_(hess), je_(je), ji_(ji), u_(std::move(uobj)), n_(n), me_(je.rows()),
        mi_(ji.rows()) {
    nk_ = n_ + me_ + mi_;
    static_triplets_.reserve(static_cast<std::size_t>(je_.nonZeros() + ji_.nonZeros()));
    for (int c = 0; c < je_.outerSize(); ++c) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(je_, c); it; ++it) {
        static_triplets_.emplace_back(n_ + static_cast<int>(it.row()), c, it.value());
      }
    }
    for (int c = 0; c < ji_.outerSize(); ++c) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(ji_, c); it; ++it) {
        static_triplets_.emplace_back(n_ + me_ + static_cast<int>(it.row()), c, it.value());
      }
    }
  }

  QpResult solve(const Eigen::VectorXd& grad, const Eigen::VectorXd& re,
                 const Eigen::VectorXd& ri, const Eigen::VectorXd& dl,
                 const Eigen::VectorXd& du, int max_iter, double delta0 = 1e-6) {
    const double kInf = std::numeric_limits<double>::infinity();
    QpResult res;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n_);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(me_);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(mi_);
    Eigen::VectorXd s(mi_);
    for (int i = 0; i < mi_; ++i) s(i) = std::max(ri(i), 1.0);
    Eigen::VectorXd sl(n_), su(n_), zl(n_), zu(n_);
    for (int i = 0; i < n_; ++i) {
      const bool lo = std::isfinite(dl(i)), up = std::isfinite(du(i));
      sl(i) = lo ? std::max(-dl(i), 1e-2) : 1.0;
      su(i) = up ? std::max(du(i), 1e-2) : 1.0;
      zl(i) = lo ? 1.0 : 0.0;
      zu(i) = up ? 1.0 : 0.0;
    }
    const int n_compl = mi_ + static_cast<int>((dl.array().isFinite()).count()) +
                        static_cast<int>((du.array().isFinite()).count());

    double delta = delta0;
    double prev_rnorm = std::numeric_limits<double>::infinity();
    double prev_mu = std::numeric_limits<double>::infinity();
    int stall_count = 0;
    bool analyzed = false;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt;
    Eigen::MatrixXd x0_cols;   // K0^-1 * P for the Woodbury correction
    Eigen::MatrixXd pmat;      // [Psi | U], the combined low-rank columns
    Eigen::FullPivLU<Eigen::MatrixXd> cap_lu;
    const int r2 = hess_.rank2();
    const int ru = static_cast<int>(u_.cols());
    const int rt = r2 + ru;

    auto bmul = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd r = hess_.multiply(v);
      if (ru > 0) r.noalias() += u_ * (u_.transpose() * v);
      return r;
    };

    auto kkt_solve = [&](const Eigen::VectorXd& rhs) -> Eigen::VectorXd {
      Eigen::VectorXd x = ldlt.solve(rhs);
      if (rt > 0) {
        const Eigen::VectorXd t = cap_lu.solve(pmat.transpose() * x.head(n_));
        x -= x0_cols * t;
      }
      return x;
    };

    for (int iter = 0; iter < max_iter; ++iter) {
      // Residuals of the perturbed KKT system.
      Eigen::VectorXd r1 = bmul(d) + grad - zl + zu;
      if (me_ > 0) r1.noalias() += je_.transpose() * y;
      if (mi_ > 0) r1.noalias() += ji_.transpose() * w;
      Eigen::VectorXd r2e = me_ > 0 ? (je_ * d - re).eval() : Eigen::VectorXd(0);
      Eigen::VectorXd r3 = mi_ > 0 ? (ji_ * d + s - ri).eval() : Eigen::VectorXd(0);
      Eigen::VectorXd rl(n_), ru(n_);
      for (int i = 0; i < n_; ++i) {
        rl(i) = std::isfinite(dl(i)) ? d(i) - sl(i) - dl(i) : 0.0;
        ru(i) = std::isfinite(du(i)) ? d(i) + su(i) - du(i) : 0.0;
      }
      // Infinite-bound entries keep zl/zu = 0, so they contribute nothing.
      double gap = mi_ > 0 ? s.dot(w) : 0.0;
      gap += sl.dot(zl) + su.dot(zu);
      const double mu = n_compl > 0 ? gap / n_compl : 0.0;
      res.mu = mu;

      const double rnorm = std::max({r1.lpNorm<Eigen::Infinity>(),
                                     me_ > 0 ? r2e.lpNorm<Eigen::Infinity>() : 0.0,
                                     mi_ > 0 ? r3.lpNorm<Eigen::Infinity>() : 0.0,
                                     rl.lpNorm<Eigen::Infinity>(), ru.lpNorm<Eigen::Infinity>()});
      // The dual regularization biases each constraint row by delta * |dual|,
      // so that is the honest primal-residual floor; below it the QP is solved
      // as accurately as the regularized KKT system allows.
      const double dual_scale =
          std::max({1.0, me_ > 0 ? y.lpNorm<Eigen::Infinity>() : 0.0,
                    mi_ > 0 ? w.lpNorm<Eigen::Infinity>() : 0.0});
      const double rfloor = std::max(1e-9 * (1.0 + grad.lpNorm<Eigen::Infinity>()),
                                     10.0 * delta * dual_scale);
      if (mu < 1e-11 && rnorm < rfloor) {
        res.converged = true;
        break;
      }
      if (mu < 1e-14) break;  // complementarity at the floor; no progress left
      // Inconsistent linearizations leave a primal residual floor; stop once
      // neither the residual nor the complementarity gap improves.
      if (rnorm > 0.99 * prev_rnorm && mu > 0.99 * prev_mu) {
        if (++stall_count >= 3) break;
      } else {
        stall_count = 0;
      }
      prev_rnorm = rnorm;
      prev_mu = mu;

      // Assemble and factor K0 (sparse part of the KKT matrix), lower triangle.
      std::vector<Eigen::Triplet<double>> trips = static_triplets_;
      trips.reserve(trips.size() + nk_);
      for (int i = 0; i < n_; ++i) {
        double diag = hess_.sigma() + delta;
        if (std::isfinite(dl(i))) diag += zl(i) / sl(i);
        if (std::isfinite(du(i))) diag += zu(i) / su(i);
        trips.emplace_back(i, i, diag);
      }
      for (int j = 0; j < me_; ++j) trips.emplace_back(n_ + j, n_ + j, -delta);
      for (int j = 0; j < mi_; ++j) {
        trips.emplace_back(n_ + me_ + j, n_ + me_ + j, -s(j) / w(j) - delta);
      }
      Eigen::SparseMatrix<double> k0(nk_, nk_);
      k0.setFromTriplets(trips.begin(), trips.end());
      if (!analyzed) {
        ldlt.analyzePattern(k0);
        analyzed = true;
      }
      ldlt.factorize(k0);
      if (ldlt.info() != Eigen::Success) {
        delta = std::min(delta * 100.0, 1e-2);
        continue;
      }
      if (rt > 0) {
        pmat.resize(n_, rt);
        if (r2 > 0) pmat.leftCols(r2) = hess_.psi();
        if (ru > 0) pmat.rightCols(ru) = u_;
        Eigen::MatrixXd u = Eigen::MatrixXd::Zero(nk_, rt);
        u.topRows(n_) = pmat;
        x0_cols = ldlt.solve(u);
        // B's low-rank part is P C P' with C = blkdiag(-Minv, I); the capacity
        // matrix is C^-1 + P' K0^-1 P.
        Eigen::MatrixXd cap = Eigen::MatrixXd::Zero(rt, rt);
        if (r2 > 0) cap.topLeftCorner(r2, r2) = -hess_.m_matrix();
        if (ru > 0) cap.bottomRightCorner(ru, ru).setIdentity();
        cap.noalias() += pmat.transpose() * x0_cols.topRows(n_);
        cap_lu.compute(cap);
        if (!cap_lu.isInvertible()) {
          delta = std::min(delta * 100.0, 1e-2);
          continue;
        }
      }

      auto newton_step = [&](const Eigen::VectorXd& compl_s, const Eigen::VectorXd& compl_l,
                             const Eigen::VectorXd& compl_u, Eigen::VectorXd& dd,
                             Eigen::VectorXd& dy, Eigen::VectorXd& dw, Eigen::VectorXd& ds,
                             Eigen::VectorXd& dsl, Eigen::VectorXd& dsu, Eigen::VectorXd& dzl,
                             Eigen::VectorXd& dzu) {
        Eigen::VectorXd rhs(nk_);
        Eigen::VectorXd top = -r1;
        for (int i = 0; i < n_; ++i) {
          if (std::isfinite(dl(i))) top(i) -= (compl_l(i) + zl(i) * rl(i)) / sl(i);
          if (std::isfinite(du(i))) top(i) += (compl_u(i) + zu(i) * ru(i)) / su(i);
        }
        rhs.head(n_) = top;
        rhs.segment(n_, me_) = -r2e;
        for (int j = 0; j < mi_; ++j) rhs(n_ + me_ + j) = -r3(j) + compl_s(j) / w(j);
        const Eigen::VectorXd sol = kkt_solve(rhs);
        dd = sol.head(n_);
        dy = sol.segment(n_, me_);
        dw = sol.tail(mi_);
        ds.resize(mi_);
        for (int j = 0; j < mi_; ++j) ds(j) = -(compl_s(j) + s(j) * dw(j)) / w(j);
        dsl.resize(n_);
        dsu.resize(n_);
        dzl.resize(n_);
        dzu.resize(n_);
        for (int i = 0; i < n_; ++i) {
          if (std::isfinite(dl(i))) {
            dsl(i) = dd(i) + rl(i);
            dzl(i) = -(compl_l(i) + zl(i) * dsl(i)) / sl(i);
          } else {
            dsl(i) = dzl(i) = 0.0;
          }
          if (std::isfinite(du(i))) {
            dsu(i) = -dd(i) - ru(i);
            dzu(i) = -(compl_u(i) + zu(i) * dsu(i)) / su(i);
          } else {
            dsu(i) = dzu(i) = 0.0;
          }
        }
      };

      auto max_step = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dv, double cap) {
        double a = cap;
        for (int i = 0; i < v.size(); ++i) {
          if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
        }
        return a;
      };

      // Predictor (affine scaling) step.
      Eigen::VectorXd cs(mi_), cl(n_), cu(n_);
      for (int j = 0; j < mi_; ++j) cs(j) = s(j) * w(j);
      for (int i = 0; i < n_; ++i) {
        cl(i) = std::isfinite(dl(i)) ? sl(i) * zl(i) : 0.0;
        cu(i) = std::isfinite(du(i)) ? su(i) * zu(i) : 0.0;
      }
      Eigen::VectorXd dd, dy, dw, ds, dsl, dsu, dzl, dzu;
      newton_step(cs, cl, cu, dd, dy, dw, ds, dsl, dsu, dzl, dzu);
      double ap = std::min({max_step(s, ds, 1.0), max_step(sl, dsl, 1.0), max_step(su, dsu, 1.0)});
      double ad = std::min({max_step(w, dw, 1.0), max_step(zl, dzl, 1.0), max_step(zu, dzu, 1.0)});
      double gap_aff = (s + ap * ds).dot(w + ad * dw);
      for (int i = 0; i < n_; ++i) {
        if (std::isfinite(dl(i))) gap_aff += (sl(i) + ap * dsl(i)) * (zl(i) + ad * dzl(i));
        if (std::isfinite(du(i))) gap_aff += (su(i) + ap * dsu(i)) * (zu(i) + ad * dzu(i));
      }
      const double mu_aff = n_compl > 0 ? gap_aff / n_compl : 0.0;
      const double sigma_c = mu > 0 ? std::pow(mu_aff / mu, 3.0) : 0.0;

      // Corrector step with centering.
      for (int j = 0; j < mi_; ++j) cs(j) = s(j) * w(j) + ds(j) * dw(j) - sigma_c * mu;
      for (int i = 0; i < n_; ++i) {
        if (std::isfinite(dl(i))) cl(i) = sl(i) * zl(i) + dsl(i) * dzl(i) - sigma_c * mu;
        if (std::isfinite(du(i))) cu(i) = su(i) * zu(i) + dsu(i) * dzu(i) - sigma_c * mu;
      }
      newton_step(cs, cl, cu, dd, dy, dw, ds, dsl, dsu, dzl, dzu);
      const double tau = 0.995;
      ap = tau * std::min({max_step(s, ds, 1.0 / tau), max_step(sl, dsl, 1.0 / tau),
                           max_step(su, dsu, 1.0 / tau)});
      ad = tau * std::min({max_step(w, dw, 1.0 / tau), max_step(zl, dzl, 1.0 / tau),
                           max_step(zu, dzu, 1.0 / tau)});
      ap = std::min(ap, 1.0);
      ad = std::min(ad, 1.0);

      d += ap * dd;
      s += ap * ds;
      sl += ap * dsl;
      su += ap * dsu;
      y += ad * dy;
      w += ad * dw;
      zl += ad * dzl;
      zu += ad * dzu;
      if (!d.allFinite()) break;
    }

    // Clip the step into the exact box so z + d never leaves [l, u].
    for (int i = 0; i < n_; ++i) {
      if (std::isfinite(dl(i))) d(i) = std::max(d(i), dl(i));
      if (std::isfinite(du(i))) d(i) = std::min(d(i), du(i));
    }
    res.d = d;
    res.y = y;
    res.w = w;
    res.zl = zl;
    res.zu = zu;
    return res;
  }

 private:
  const LbfgsHessian& hess_;
  const Eigen::SparseMatrix<double>& je_;
  const Eigen::SparseMatrix<double>& ji_;
  Eigen::MatrixXd u_;
  int n_, me_, mi_, nk_;
  std::vector<Eigen::Triplet<double>> static_triplets_;
};

struct NlpEval {
  double f = 0.0;
  Eigen::VectorXd grad;
  Eigen::VectorXd h;
  Eigen::VectorXd g;
  Eigen::SparseMatrix<double> je;
  Eigen::SparseMatrix<double> ji;
  bool finite = true;
};

}  // namespace detail

inline NlpSolution solve_nlp(const NlpProblem& problem, const SolveOptions& opts = {}) {
  using Eigen::VectorXd;
  const int n = problem.num_vars;
  const int me = problem.num_eq;
  const int mi = problem.num_ineq;

  // Internal objective scaling keeps the dual magnitudes O(1) for steeply
  // weighted objectives; reported objective values are unscaled at the exits.
  double obj_scale = 1.0;

  auto eval_full = [&](const VectorXd& z, detail::NlpEval& e) {
    e.grad.resize(n);
    e.f = obj_scale * problem.objective(z, &e.grad);
    e.grad *= obj_scale;
    std::vector<Eigen::Triplet<double>> te, ti;
    e.h.resize(me);
    if (me > 0) {
      problem.equalities(z, e.h, &te);
      e.je.resize(me, n);
      e.je.setFromTriplets(te.begin(), te.end());
    } else {
      e.je.resize(0, n);
    }
    e.g.resize(mi);
    if (mi > 0) {
      problem.inequalities(z, e.g, &ti);
      e.ji.resize(mi, n);
      e.ji.setFromTriplets(ti.begin(), ti.end());
    } else {
      e.ji.resize(0, n);
    }
    e.finite = std::isfinite(e.f) && e.grad.allFinite() && (me == 0 || e.h.allFinite()) &&
               (mi == 0 || e.g.allFinite());
  };

  // Value-only evaluation for the line search.
  auto eval_merit_parts = [&](const VectorXd& z, double& f, double& viol_l1) -> bool {
    f = obj_scale * problem.objective(z, nullptr);
    viol_l1 = 0.0;
    if (me > 0) {
      VectorXd h(me);
      problem.equalities(z, h, nullptr);
      if (!h.allFinite()) return false;
      viol_l1 += h.lpNorm<1>();
    }
    if (mi > 0) {
      VectorXd g(mi);
      problem.inequalities(z, g, nullptr);
      if (!g.allFinite()) return false;
      viol_l1 += g.cwiseMax(0.0).sum();
    }
    return std::isfinite(f);
  };

  auto viol_inf = [&](const VectorXd& h, const VectorXd& g) {
    double v = 0.0;
    if (h.size() > 0) v = h.lpNorm<Eigen::Infinity>();
    if (g.size() > 0) v = std::max(v, g.maxCoeff());
    return std::max(v, 0.0);
  };

  NlpSolution sol;
  VectorXd z = problem.initial_guess;
  for (int i = 0; i < n; ++i) z(i) = std::clamp(z(i), problem.lower(i), problem.upper(i));

  {
    // Probe the gradient at the guess and at a deterministic interior
    // perturbation; a quadratic objective term can vanish exactly at the
    // guess (e.g. a tracking penalty started on its target) and show its
    // true magnitude only once the iterates move.
    VectorXd g0(n), g1(n);
    problem.objective(z, &g0);
    VectorXd zp = z;
    for (int i = 0; i < n; ++i) {
      const double sign = ((static_cast<unsigned>(i) * 2654435761u) >> 16) & 1u ? 1.0 : -1.0;
      zp(i) = std::clamp(z(i) + sign * 1e-2 * (1.0 + std::abs(z(i))), problem.lower(i),
                         problem.upper(i));
    }
    problem.objective(zp, &g1);
    double gmax = 0.0;
    if (g0.allFinite()) gmax = std::max(gmax, g0.lpNorm<Eigen::Infinity>());
    if (g1.allFinite()) gmax = std::max(gmax, g1.lpNorm<Eigen::Infinity>());
    if (gmax > 100.0) obj_scale = 100.0 / gmax;
  }

  detail::LbfgsHessian hess(n, opts.lbfgs_memory);
  hess.reset();
  // True while B is the unit matrix: accumulated curvature can overestimate
  // the model along flat arcs, so the first-order exit below is only trusted
  // after it also holds under a fresh B.
  bool hess_fresh = true;

  detail::NlpEval cur;
  eval_full(z, cur);
  if (!cur.finite) {
    sol.z = z;
    sol.report.status = SolveStatus::nan_detected;
    sol.report.message = "objective or constraints not finite at the initial guess";
    return sol;
  }

  VectorXd lam_e = VectorXd::Zero(me), lam_i = VectorXd::Zero(mi);
  VectorXd zl = VectorXd::Zero(n), zu = VectorXd::Zero(n);
  double rho = opts.penalty_initial;

  VectorXd best_z = z;
  double best_viol = viol_inf(cur.h, cur.g);
  double best_f = cur.f;
  auto maybe_update_best = [&](const VectorXd& zz, double f, double viol) {
    const bool cur_ok = viol <= opts.feas_tol;
    const bool best_ok = best_viol <= opts.feas_tol;
    const bool better = (cur_ok && !best_ok) || (cur_ok == best_ok && (cur_ok ? f < best_f : viol < best_viol));
    if (better) {
      best_z = zz;
      best_viol = viol;
      best_f = f;
    }
  };

  SolveReport rep;
  bool reset_retry_used = false;

  // Honest multiplier estimates at the current point. QP duals are unreliable
  // along (near-)dependent equality rows, so the equality multipliers and the
  // duals of active inequality rows are refit jointly by damped least squares
  // over the bound-inactive columns; negative inequality duals are dropped and
  // the fit repeated once. Leftover stationarity at active bounds goes into
  // the bound multipliers (sign violations stay visible in the KKT residual).
  auto refit_multipliers = [&](const VectorXd& zz, const detail::NlpEval& e) {
    std::vector<bool> lo_act(n), up_act(n);
    VectorXd mask = VectorXd::Ones(n);
    for (int i = 0; i < n; ++i) {
      lo_act[i] = std::isfinite(problem.lower(i)) &&
                  zz(i) - problem.lower(i) <= 1e-9 * (1.0 + std::abs(problem.lower(i)));
      up_act[i] = std::isfinite(problem.upper(i)) &&
                  problem.upper(i) - zz(i) <= 1e-9 * (1.0 + std::abs(problem.upper(i)));
      if (lo_act[i] || up_act[i]) mask(i) = 0.0;
    }
    std::vector<int> act;
    for (int i = 0; i < mi; ++i) {
      if (e.g(i) > -1e-6) act.push_back(i);
    }
    lam_i.setZero();
    for (int pass = 0; pass < 2; ++pass) {
      const int ma = static_cast<int>(act.size());
      const int mt = me + ma;
      if (mt == 0) break;
      std::vector<Eigen::Triplet<double>> trips;
      trips.reserve(static_cast<std::size_t>(e.je.nonZeros() + e.ji.nonZeros()));
      for (int c = 0; c < e.je.outerSize(); ++c) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(e.je, c); it; ++it) {
          if (mask(c) != 0.0) trips.emplace_back(static_cast<int>(it.row()), c, it.value());
        }
      }
      std::vector<int> row_of(mi, -1);
      for (int a = 0; a < ma; ++a) row_of[act[a]] = me + a;
      for (int c = 0; c < e.ji.outerSize(); ++c) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(e.ji, c); it; ++it) {
          const int rr = row_of[it.row()];
          if (rr >= 0 && mask(c) != 0.0) trips.emplace_back(rr, c, it.value());
        }
      }
      Eigen::SparseMatrix<double> jm(mt, n);
      jm.setFromTriplets(trips.begin(), trips.end());
      Eigen::SparseMatrix<double> jjt = jm * Eigen::SparseMatrix<double>(jm.transpose());
      for (int i = 0; i < mt; ++i) jjt.coeffRef(i, i) += 1e-10;
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> fac(jjt);
      if (fac.info() != Eigen::Success) break;
      VectorXd rm = e.grad;
      for (int i = 0; i < n; ++i) {
        if (mask(i) == 0.0) rm(i) = 0.0;
      }
      const VectorXd cand = fac.solve(-(jm * rm));
      if (!cand.allFinite()) break;
      lam_e = cand.head(me);
      lam_i.setZero();
      bool clipped = false;
      std::vector<int> keep;
      for (int a = 0; a < ma; ++a) {
        if (cand(me + a) >= 0.0) {
          lam_i(act[a]) = cand(me + a);
          keep.push_back(act[a]);
        } else {
          clipped = true;
        }
      }
      if (!clipped) break;
      act = keep;
    }
    VectorXd r = e.grad;
    if (me > 0) r.noalias() += e.je.transpose() * lam_e;
    if (mi > 0) r.noalias() += e.ji.transpose() * lam_i;
    zl.setZero();
    zu.setZero();
    for (int i = 0; i < n; ++i) {
      if (lo_act[i] && r(i) > 0.0) zl(i) = r(i);
      else if (up_act[i] && r(i) < 0.0) zu(i) = -r(i);
    }
  };

  // Minimum-norm Gauss-Newton correction of the equality residual, applied at
  // a converged point so the returned iterate meets the constraints well below
  // feas_tol (the merit loop itself only needs to reach the tolerance).
  auto polish_feasibility = [&](VectorXd& zz) {
    for (int pass = 0; pass < 3; ++pass) {
      if (me == 0) return;
      detail::NlpEval e;
      eval_full(zz, e);
      if (!e.finite || viol_inf(e.h, e.g) <= 1e-10) return;
      Eigen::SparseMatrix<double> jjt =
          e.je * Eigen::SparseMatrix<double>(e.je.transpose());
      for (int i = 0; i < me; ++i) jjt.coeffRef(i, i) += 1e-12;
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> fac(jjt);
      if (fac.info() != Eigen::Success) return;
      const VectorXd lamc = fac.solve(-e.h);
      if (!lamc.allFinite()) return;
      VectorXd zt = zz + e.je.transpose() * lamc;
      for (int i = 0; i < n; ++i) zt(i) = std::clamp(zt(i), problem.lower(i), problem.upper(i));
      detail::NlpEval e2;
      eval_full(zt, e2);
      if (!e2.finite || viol_inf(e2.h, e2.g) >= viol_inf(e.h, e.g)) return;
      zz = zt;
    }
  };

  for (int iter = 0; iter <= opts.max_iterations; ++iter) {
    // If the scaled gradient still explodes mid-run, tighten the scaling and
    // restart the curvature memory; everything downstream is scale-consistent.
    const double gmax_cur = cur.grad.lpNorm<Eigen::Infinity>();
    if (gmax_cur > 1e4) {
      const double factor = 100.0 / gmax_cur;
      obj_scale *= factor;
      cur.f *= factor;
      cur.grad *= factor;
      best_f *= factor;
      hess.reset();
      hess_fresh = true;
      rho = opts.penalty_initial;
    }
    refit_multipliers(z, cur);
    // KKT residuals at the current iterate with the refit multipliers.
    VectorXd stat = cur.grad - zl + zu;
    if (me > 0) stat.noalias() += cur.je.transpose() * lam_e;
    if (mi > 0) stat.noalias() += cur.ji.transpose() * lam_i;
    double compl_res = 0.0;
    for (int i = 0; i < mi; ++i) compl_res = std::max(compl_res, std::abs(lam_i(i) * cur.g(i)));
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(problem.lower(i))) {
        compl_res = std::max(compl_res, std::abs(zl(i) * (z(i) - problem.lower(i))));
      }
      if (std::isfinite(problem.upper(i))) {
        compl_res = std::max(compl_res, std::abs(zu(i) * (problem.upper(i) - z(i))));
      }
    }
    const double kkt = std::max(stat.lpNorm<Eigen::Infinity>(), compl_res);
    const double viol = viol_inf(cur.h, cur.g);
    maybe_update_best(z, cur.f, viol);
    if (opts.verbosity > 2) {
      int arg_s = -1;
      double max_s = 0.0;
      for (int i = 0; i < n; ++i) {
        if (std::abs(stat(i)) > max_s) { max_s = std::abs(stat(i)); arg_s = i; }
      }
      std::fprintf(stderr, "  kkt parts: |stat|=%.3e at var %d, compl=%.3e\n", max_s, arg_s,
                   compl_res);
    }

    rep.iterations = iter;
    rep.kkt_residual = kkt;
    rep.constraint_violation = viol;
    rep.objective = cur.f / obj_scale;
    if (opts.verbosity > 0) {
      int arg_h = -1;
      double max_h = 0.0;
      for (int i = 0; i < me; ++i) {
        if (std::abs(cur.h(i)) > max_h) { max_h = std::abs(cur.h(i)); arg_h = i; }
      }
      std::fprintf(stderr, "nlp %4d f=%+.9e viol=%.3e(h row %d) kkt=%.3e rho=%.2e\n", iter,
                   cur.f, viol, arg_h, kkt, rho);
    }
    if (kkt <= opts.kkt_tol && viol <= opts.feas_tol) {
      polish_feasibility(z);
      eval_full(z, cur);
      rep.constraint_violation = viol_inf(cur.h, cur.g);
      rep.objective = cur.f / obj_scale;
      rep.status = SolveStatus::converged;
      sol.z = z;
      sol.lambda_eq = lam_e;
      sol.lambda_ineq = lam_i;
      sol.report = rep;
      return sol;
    }
    if (iter == opts.max_iterations) break;

    // QP subproblem. The exact least-squares curvature of the objective rides
    // along so the quasi-Newton part only has to model the remainder.
    Eigen::MatrixXd ucur;
    if (problem.objective_curvature) {
      ucur = problem.objective_curvature(z);
      if (ucur.size() > 0) ucur *= std::sqrt(obj_scale);
    }
    detail::IpQpSolver qp(hess, cur.je, cur.ji, n, ucur);
    VectorXd dl(n), du(n);
    for (int i = 0; i < n; ++i) {
      dl(i) = problem.lower(i) - z(i);
      du(i) = problem.upper(i) - z(i);
    }
    // The dual regularization leaves a violation floor proportional to delta,
    // so track the current infeasibility downward (clamped away from the
    // ill-conditioned regime) to let the outer loop converge below feas_tol.
    const double qp_delta = std::clamp(0.1 * viol, 1e-9, 1e-6);
    detail::QpResult q =
        qp.solve(cur.grad, -cur.h, -cur.g, dl, du, opts.qp_max_iterations, qp_delta);
    if (!q.d.allFinite()) {
      if (!reset_retry_used) {
        reset_retry_used = true;
        hess.reset();
        hess_fresh = true;
        continue;
      }
      rep.status = SolveStatus::line_search_failure;
      rep.message = "QP subproblem produced a non-finite step";
      break;
    }

    if (opts.verbosity > 1) {
      int iy = 0, iw = 0;
      const double my = me > 0 ? q.y.cwiseAbs().maxCoeff(&iy) : 0.0;
      const double mw = mi > 0 ? q.w.cwiseAbs().maxCoeff(&iw) : 0.0;
      const VectorXd qre = me > 0 ? VectorXd(cur.h + cur.je * q.d) : VectorXd();
      int ir = 0;
      const double mr = me > 0 ? qre.cwiseAbs().maxCoeff(&ir) : 0.0;
      std::fprintf(stderr,
                   "  qp conv=%d mu=%.2e |d|=%.2e max|y|=%.2e@%d max|w|=%.2e@%d "
                   "lin_h=%.2e@%d\n",
                   q.converged ? 1 : 0, q.mu, q.d.norm(), my, iy, mw, iw, mr, ir);
      if (opts.verbosity > 3) {
        const double eps_fd = 1e-7 / std::max(q.d.norm(), 1e-12);
        const double fp = obj_scale * problem.objective(z + eps_fd * q.d, nullptr);
        const double fm = obj_scale * problem.objective(z - eps_fd * q.d, nullptr);
        std::fprintf(stderr, "  gdotd model=%+.6e fd=%+.6e\n", cur.grad.dot(q.d),
                     (fp - fm) / (2.0 * eps_fd));
      }
    }

    const double f0 = cur.f;
    const double v0 = (me > 0 ? cur.h.lpNorm<1>() : 0.0) +
                      (mi > 0 ? cur.g.cwiseMax(0.0).sum() : 0.0);
    double quad = q.d.dot(hess.multiply(q.d));
    if (ucur.cols() > 0) quad += (ucur.transpose() * q.d).squaredNorm();

    // Multiplier-free first-order certificate: at a feasible point where the
    // fully solved QP's own optimum cannot improve the objective model, no
    // linearized feasible descent direction exists. This is the honest exit
    // when redundant rows plus saturated bounds leave the active constraint
    // gradients rank-deficient and no finite multiplier set exists.
    if (viol <= opts.feas_tol && q.converged) {
      const double model_df = cur.grad.dot(q.d) + 0.5 * std::max(quad, 0.0);
      if (model_df >= -opts.kkt_tol * (1.0 + std::abs(cur.f))) {
        if (!hess_fresh) {
          // Confirm under B = I before exiting: a stiff curvature estimate
          // can hide a long flat descent direction behind a short QP step.
          hess.reset();
          hess_fresh = true;
          continue;
        }
        polish_feasibility(z);
        eval_full(z, cur);
        rep.constraint_violation = viol_inf(cur.h, cur.g);
        rep.objective = cur.f / obj_scale;
        rep.status = SolveStatus::converged;
        sol.z = z;
        sol.lambda_eq = lam_e;
        sol.lambda_ineq = lam_i;
        sol.report = rep;
        return sol;
      }
    }

    // Penalty large enough that d is a merit descent direction, tracking the
    // refit multipliers; decay toward the current requirement so a transient
    // spike cannot poison later line searches. Below feas_tol the violation
    // term no longer needs to dominate, so the descent requirement is waived.
    double lam_max = 0.0;
    if (me > 0) lam_max = lam_e.lpNorm<Eigen::Infinity>();
    if (mi > 0) lam_max = std::max(lam_max, lam_i.lpNorm<Eigen::Infinity>());
    const double rho_descent =
        v0 > opts.feas_tol
            ? (cur.grad.dot(q.d) + 0.5 * std::max(quad, 0.0)) / (0.5 * v0)
            : 0.0;
    const double rho_req = std::max({1.1 * lam_max + 1e-3, rho_descent, opts.penalty_initial});
    rho = rho >= rho_req ? std::max(rho_req, 0.1 * rho) : rho_req;

    const double merit0 = f0 + rho * v0;
    const double ddir = cur.grad.dot(q.d) - rho * v0;

    double alpha = 1.0;
    bool accepted = false;
    VectorXd z_new;
    bool soc_tried = false;
    for (int ls = 0; ls < opts.line_search_max; ++ls) {
      z_new = z + alpha * q.d;
      double f1, v1;
      if (eval_merit_parts(z_new, f1, v1)) {
        if (opts.verbosity > 3) {
          std::fprintf(stderr, "    ls try a=%.2e df=%+.3e dv=%+.3e dmerit=%+.3e need<=%.3e\n",
                       alpha, f1 - f0, v1 - v0, f1 + rho * v1 - merit0, 1e-4 * alpha * ddir);
        }
        if (f1 + rho * v1 <= merit0 + 1e-4 * alpha * ddir) {
          accepted = true;
          break;
        }
        // Second-order correction: retry the full step with the equality
        // residual at z + d removed through the same KKT factors.
        if (!soc_tried && ls == 0 && me > 0 && v1 > v0) {
          soc_tried = true;
          VectorXd h1(me);
          problem.equalities(z_new, h1, nullptr);
          if (h1.allFinite()) {
            detail::QpResult qs =
                qp.solve(VectorXd::Zero(n), -h1, -cur.g, dl, du, 8, qp_delta);
            VectorXd z_soc = z + q.d + qs.d;
            for (int i = 0; i < n; ++i) {
              z_soc(i) = std::clamp(z_soc(i), problem.lower(i), problem.upper(i));
            }
            double fs, vs;
            if (eval_merit_parts(z_soc, fs, vs) && fs + rho * vs <= merit0 + 1e-4 * ddir) {
              z_new = z_soc;
              accepted = true;
              break;
            }
          }
        }
      }
      alpha *= 0.5;
    }
    if (opts.verbosity > 1) {
      std::fprintf(stderr, "  ls accepted=%d alpha=%.3e ddir=%+.3e\n", accepted ? 1 : 0, alpha,
                   ddir);
    }
    if (!accepted) {
      if (!reset_retry_used) {
        reset_retry_used = true;
        hess.reset();
        hess_fresh = true;
        continue;
      }
      rep.status = SolveStatus::line_search_failure;
      rep.message = "merit line search failed";
      break;
    }
    reset_retry_used = false;

    // Curvature pair: gradient of the Lagrangian at old and new point with the
    // new multipliers.
    detail::NlpEval next;
    eval_full(z_new, next);
    if (!next.finite) {
      rep.status = SolveStatus::nan_detected;
      rep.message = "objective or constraints not finite at an accepted iterate";
      break;
    }
    VectorXd grad_l_old = cur.grad;
    VectorXd grad_l_new = next.grad;
    if (me > 0) {
      grad_l_old.noalias() += cur.je.transpose() * lam_e;
      grad_l_new.noalias() += next.je.transpose() * lam_e;
    }
    if (mi > 0) {
      grad_l_old.noalias() += cur.ji.transpose() * q.w;
      grad_l_new.noalias() += next.ji.transpose() * q.w;
    }
    const VectorXd step = z_new - z;
    if (step.norm() > 0) {
      // The exact objective curvature is carried separately, so the secant
      // pair only feeds the quasi-Newton model the remainder.
      VectorXd ydiff = grad_l_new - grad_l_old;
      if (ucur.cols() > 0) ydiff.noalias() -= ucur * (ucur.transpose() * step);
      hess.update(step, ydiff);
      hess_fresh = false;
    }

    z = z_new;
    cur = std::move(next);
    lam_i = q.w;
  }

  sol.z = best_z;
  sol.lambda_eq = lam_e;
  sol.lambda_ineq = lam_i;
  if (rep.message.empty()) rep.message = "stopped before reaching tolerances";
  sol.report = rep;
  sol.report.objective = best_f / obj_scale;
  sol.report.constraint_violation = best_viol;
  return sol;
}

}  // namespace meltnav
