#pragma once

// Parameter identification: fits the four kinematic model parameters to an
// observed trajectory by minimizing the squared y/z residuals between the
// forward-integrated applied-controls path and the fused estimates. The
// observation grid is authoritative: the simulation is resampled onto it.
//
// Optimization runs in a smooth reparameterization (log for v_max, eta,
// r_min; logit for alpha) so the parameters stay in their physical ranges
// without explicit constraints: Nelder-Mead first, then a finite-difference
// BFGS refinement pass. Deterministic; no randomness.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "meltnav/errors.hpp"
#include "meltnav/integrate.hpp"
#include "meltnav/model.hpp"

namespace meltnav {

struct IdentificationDataset {
  ControlSchedule applied_schedule;  // applied group duties, usually piecewise-constant
  Trajectory fused;                  // fused pose estimates
  Pose x_0;                          // initial pose the plant started from
  int substeps = 1;                  // integration refinement used when simulating

  void validate() const {
    applied_schedule.validate();
    fused.validate();
    if (fused.times.size() < 2) throw config_error("IdentificationDataset: need >= 2 samples");
    if (substeps < 1) throw config_error("IdentificationDataset: substeps must be >= 1");
  }
};

// Sum of squared y/z residuals on the fused grid; x residuals are excluded.
inline double pi_objective(const ModelParams& p, const IdentificationDataset& data) {
  p.validate();
  const Trajectory sim = forward_integrate(data.x_0, data.applied_schedule, p, data.substeps);
  const Trajectory on_grid = resample(sim, data.fused.times);
  double f = 0.0;
  for (std::size_t k = 0; k < data.fused.times.size(); ++k) {
    const double dy = on_grid.states[k].position.y() - data.fused.states[k].position.y();
    const double dz = on_grid.states[k].position.z() - data.fused.states[k].position.z();
    f += dy * dy + dz * dz;
  }
  return f;
}

struct IdentifyOptions {
  double tol = 1e-6;                    // gradient inf-norm target, transformed space
  int nm_max_iterations = 400;
  int refine_max_iterations = 80;
  double fd_step = 1e-6;                // central-difference step, transformed space
  double sensitivity_threshold = 1e-10; // curvature below this flags a flat direction
  double f_abs_tol = 1e-18;             // objective already zero: stop immediately
};

struct IdentifyReport {
  double objective_initial = 0.0;
  double objective_final = 0.0;
  int nm_iterations = 0;
  int refine_iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  // Probes and flags ordered (v_max, eta, r_min, alpha).
  std::array<double, 4> sensitivity{};
  std::array<bool, 4> identifiable{};
  std::vector<double> objective_history;
};

struct IdentifyResult {
  ModelParams params;
  IdentifyReport report;
};

namespace detail {

inline Eigen::Vector4d pack_params(const ModelParams& p) {
  const double a = std::clamp(p.alpha, 1e-9, 1.0 - 1e-9);
  return {std::log(p.v_max), std::log(p.eta), std::log(p.r_min), std::log(a / (1.0 - a))};
}

inline ModelParams unpack_params(const Eigen::Vector4d& xi) {
  ModelParams p;
  p.v_max = std::exp(xi(0));
  p.eta = std::exp(xi(1));
  p.r_min = std::exp(xi(2));
  p.alpha = 1.0 / (1.0 + std::exp(-xi(3)));
  return p;
}

}  // namespace detail

inline IdentifyResult identify(const ModelParams& p_init, const IdentificationDataset& data,
                               const IdentifyOptions& opts = {}) {
  p_init.validate();
  data.validate();

  Eigen::Vector4d best_x = detail::pack_params(p_init);
  IdentifyReport rep;

  const auto eval = [&](const Eigen::Vector4d& xi) {
    return pi_objective(detail::unpack_params(xi), data);
  };
  double best_f = eval(best_x);
  rep.objective_initial = best_f;
  rep.objective_history.push_back(best_f);

  const auto fd_grad = [&](const Eigen::Vector4d& xi) {
    Eigen::Vector4d g;
    for (int k = 0; k < 4; ++k) {
      Eigen::Vector4d xp = xi, xm = xi;
      xp(k) += opts.fd_step;
      xm(k) -= opts.fd_step;
      g(k) = (eval(xp) - eval(xm)) / (2.0 * opts.fd_step);
    }
    return g;
  };

  if (best_f > opts.f_abs_tol) {
    // --- Nelder-Mead over the transformed parameters ---
    constexpr int n = 4;
    std::array<Eigen::Vector4d, n + 1> xs;
    std::array<double, n + 1> fs;
    xs[0] = best_x;
    fs[0] = best_f;
    for (int k = 0; k < n; ++k) {
      xs[static_cast<std::size_t>(k + 1)] = best_x + 0.1 * Eigen::Vector4d::Unit(k);
      fs[static_cast<std::size_t>(k + 1)] = eval(xs[static_cast<std::size_t>(k + 1)]);
    }
    const auto order = [&] {
      std::array<int, n + 1> idx{};
      for (int k = 0; k <= n; ++k) idx[static_cast<std::size_t>(k)] = k;
      std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return fs[static_cast<std::size_t>(a)] < fs[static_cast<std::size_t>(b)];
      });
      std::array<Eigen::Vector4d, n + 1> xs2;
      std::array<double, n + 1> fs2;
      for (int k = 0; k <= n; ++k) {
        xs2[static_cast<std::size_t>(k)] = xs[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
        fs2[static_cast<std::size_t>(k)] = fs[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
      }
      xs = xs2;
      fs = fs2;
    };
    order();
    for (rep.nm_iterations = 0; rep.nm_iterations < opts.nm_max_iterations; ++rep.nm_iterations) {
      double fspread = 0.0, xspread = 0.0;
      for (int k = 1; k <= n; ++k) {
        fspread = std::max(fspread, std::abs(fs[static_cast<std::size_t>(k)] - fs[0]));
        xspread = std::max(xspread, (xs[static_cast<std::size_t>(k)] - xs[0]).lpNorm<Eigen::Infinity>());
      }
      if (fspread <= 1e-15 * (1.0 + std::abs(fs[0])) && xspread <= 1e-9) break;

      Eigen::Vector4d centroid = Eigen::Vector4d::Zero();
      for (int k = 0; k < n; ++k) centroid += xs[static_cast<std::size_t>(k)];
      centroid /= n;
      const Eigen::Vector4d xr = centroid + (centroid - xs[n]);
      const double fr = eval(xr);
      if (fr < fs[0]) {
        const Eigen::Vector4d xe = centroid + 2.0 * (centroid - xs[n]);
        const double fe = eval(xe);
        if (fe < fr) { xs[n] = xe; fs[n] = fe; } else { xs[n] = xr; fs[n] = fr; }
      } else if (fr < fs[n - 1]) {
        xs[n] = xr;
        fs[n] = fr;
      } else {
        const bool outside = fr < fs[n];
        const Eigen::Vector4d xc = outside ? Eigen::Vector4d(centroid + 0.5 * (xr - centroid))
                                           : Eigen::Vector4d(centroid - 0.5 * (centroid - xs[n]));
        const double fc = eval(xc);
        if (fc < std::min(fr, fs[n])) {
          xs[n] = xc;
          fs[n] = fc;
        } else {
          for (int k = 1; k <= n; ++k) {
            xs[static_cast<std::size_t>(k)] = xs[0] + 0.5 * (xs[static_cast<std::size_t>(k)] - xs[0]);
            fs[static_cast<std::size_t>(k)] = eval(xs[static_cast<std::size_t>(k)]);
          }
        }
      }
      order();
      if (fs[0] < best_f) { best_f = fs[0]; best_x = xs[0]; }
      rep.objective_history.push_back(best_f);
      if (best_f <= opts.f_abs_tol) break;
    }

    // --- finite-difference BFGS refinement ---
    if (best_f > opts.f_abs_tol) {
      Eigen::Vector4d x = best_x;
      double fx = best_f;
      Eigen::Matrix4d hinv = Eigen::Matrix4d::Identity();
      Eigen::Vector4d g = fd_grad(x);
      for (rep.refine_iterations = 0; rep.refine_iterations < opts.refine_max_iterations;
           ++rep.refine_iterations) {
        if (g.lpNorm<Eigen::Infinity>() <= opts.tol) break;
        Eigen::Vector4d d = -hinv * g;
        if (d.dot(g) >= 0.0) {  // not a descent direction: reset curvature
          hinv.setIdentity();
          d = -g;
        }
        double alpha = 1.0;
        bool accepted = false;
        double fn = fx;
        Eigen::Vector4d xn = x;
        for (int ls = 0; ls < 30; ++ls) {
          xn = x + alpha * d;
          fn = eval(xn);
          if (fn <= fx + 1e-4 * alpha * g.dot(d)) { accepted = true; break; }
          alpha *= 0.5;
        }
        if (!accepted) break;
        const Eigen::Vector4d gn = fd_grad(xn);
        const Eigen::Vector4d s = xn - x, y = gn - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
          const Eigen::Matrix4d eye = Eigen::Matrix4d::Identity();
          const Eigen::Matrix4d v = eye - (s * y.transpose()) / sy;
          hinv = v * hinv * v.transpose() + (s * s.transpose()) / sy;
        }
        x = xn;
        fx = fn;
        g = gn;
        if (fx < best_f) { best_f = fx; best_x = x; }
        rep.objective_history.push_back(best_f);
        if (best_f <= opts.f_abs_tol) break;
      }
    }
  }

  rep.objective_final = best_f;
  const Eigen::Vector4d g_final = fd_grad(best_x);
  rep.gradient_norm = g_final.lpNorm<Eigen::Infinity>();
  rep.converged = rep.gradient_norm <= opts.tol || best_f <= opts.f_abs_tol;

  // Curvature probes per physical parameter: scale-aware +-1% perturbations.
  const ModelParams p_star = detail::unpack_params(best_x);
  const auto probe = [&](int k) {
    ModelParams pp = p_star, pm = p_star;
    switch (k) {
      case 0: pp.v_max *= 1.01; pm.v_max *= 0.99; break;
      case 1: pp.eta *= 1.01; pm.eta *= 0.99; break;
      case 2: pp.r_min *= 1.01; pm.r_min *= 0.99; break;
      default:
        pp.alpha = std::min(1.0, p_star.alpha + 0.01);
        pm.alpha = std::max(0.0, p_star.alpha - 0.01);
        break;
    }
    const double fp = pi_objective(pp, data), fm = pi_objective(pm, data);
    return std::max(0.0, fp + fm - 2.0 * best_f);
  };
  for (int k = 0; k < 4; ++k) {
    rep.sensitivity[static_cast<std::size_t>(k)] = probe(k);
    rep.identifiable[static_cast<std::size_t>(k)] =
        rep.sensitivity[static_cast<std::size_t>(k)] > opts.sensitivity_threshold;
  }

  return {p_star, rep};
}

}  // namespace meltnav
