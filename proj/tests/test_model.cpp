#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "meltnav/errors.hpp"
#include "meltnav/model.hpp"
#include "meltnav/rng.hpp"

using namespace meltnav;

namespace {

ModelParams reference_params() { return ModelParams{1.0, 0.1, 6.0, 0.3}; }

GroupControls make_u(std::array<double, 8> a) {
  GroupControls u;
  u.u = a;
  return u;
}

}  // namespace

TEST_CASE("derived_rates: all head groups on gives pure forward roll") {
  const auto r = derived_rates(make_u({1, 1, 1, 1, 0, 0, 0, 0}), reference_params());
  REQUIRE(r.v == Catch::Approx(1.0));
  REQUIRE(r.omega.x() == Catch::Approx(0.1));
  REQUIRE(r.omega.y() == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(r.omega.z() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("derived_rates: zero head duties lock every rate") {
  for (double lateral : {0.0, 0.5, 1.0}) {
    const auto r = derived_rates(
        make_u({0, 0, 0, 0, lateral, lateral, lateral, lateral}),
        reference_params());
    REQUIRE(r.v == 0.0);
    REQUIRE(r.omega.x() == 0.0);
    REQUIRE(r.omega.y() == 0.0);
    REQUIRE(r.omega.z() == 0.0);
  }
}

TEST_CASE("derived_rates: mixed head pair plus one wall group") {
  // Half speed; yaw authority = alpha/2*(1+1) + (1-alpha)*1 = alpha + 1 - alpha = 1.
  const auto r = derived_rates(make_u({1, 1, 0, 0, 0, 1, 0, 0}), reference_params());
  REQUIRE(r.v == Catch::Approx(0.5));
  REQUIRE(r.omega.x() == Catch::Approx(0.05));
  REQUIRE(r.omega.y() == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(r.omega.z() == Catch::Approx(0.5 / 6.0));
}

TEST_CASE("derived_rates is linear in the duties") {
  CounterRng rng(101);
  const ModelParams p = reference_params();
  for (int trial = 0; trial < 20; ++trial) {
    GroupControls a, b;
    for (int i = 0; i < 8; ++i) {
      a.u[i] = rng.next_double();
      b.u[i] = rng.next_double();
    }
    const double lam = rng.next_double();
    GroupControls mix;
    for (int i = 0; i < 8; ++i) mix.u[i] = lam * a.u[i] + (1 - lam) * b.u[i];

    const auto ra = derived_rates(a, p);
    const auto rb = derived_rates(b, p);
    const auto rm = derived_rates(mix, p);
    REQUIRE(rm.v == Catch::Approx(lam * ra.v + (1 - lam) * rb.v).margin(1e-12));
    // The omega map is bilinear (v times authority), so check the authority
    // ratio instead: omega/v is linear whenever v > 0.
    if (ra.v > 1e-9 && rb.v > 1e-9 && rm.v > 1e-9) {
      const Eigen::Vector3d authority_mix = rm.omega / rm.v;
      const Eigen::Vector3d expected =
          lam * (ra.omega / ra.v) + (1 - lam) * (rb.omega / rb.v);
      REQUIRE((authority_mix - expected).norm() < 1e-12);
    }
  }
}

TEST_CASE("derived_rates mirror symmetry negates yaw and keeps pitch") {
  CounterRng rng(102);
  const ModelParams p = reference_params();
  for (int trial = 0; trial < 20; ++trial) {
    GroupControls u;
    for (int i = 0; i < 8; ++i) u.u[i] = rng.next_double();
    GroupControls m;
    m.u = {u.u[3], u.u[2], u.u[1], u.u[0], u.u[4], u.u[7], u.u[6], u.u[5]};
    const auto r = derived_rates(u, p);
    const auto rm = derived_rates(m, p);
    REQUIRE(rm.v == Catch::Approx(r.v).margin(1e-12));
    REQUIRE(rm.omega.y() == Catch::Approx(r.omega.y()).margin(1e-12));
    REQUIRE(rm.omega.z() == Catch::Approx(-r.omega.z()).margin(1e-12));
  }
}

TEST_CASE("ode_rhs: straight motion from identity attitude") {
  Pose x;
  const StateDerivative f = ode_rhs(x, 1.0, Eigen::Vector3d::Zero());
  REQUIRE(f(0) == Catch::Approx(1.0));
  for (int i = 1; i < 7; ++i) REQUIRE(f(i) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("ode_rhs: roll rate drives q_x at half rate") {
  Pose x;
  const StateDerivative f = ode_rhs(x, 1.0, {0.1, 0.0, 0.0});
  REQUIRE(f(0) == Catch::Approx(1.0));
  REQUIRE(f(3) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(f(4) == Catch::Approx(0.05));
  REQUIRE(f(5) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(f(6) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("ode_rhs: stationary input gives the zero vector") {
  CounterRng rng(103);
  Pose x;
  x.position = {rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()};
  x.q = Quat{rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian(),
             rng.next_gaussian()}
            .normalized();
  const StateDerivative f = ode_rhs(x, 0.0, Eigen::Vector3d::Zero());
  REQUIRE(f.norm() == 0.0);
}

TEST_CASE("ode_rhs quaternion block is orthogonal to q") {
  CounterRng rng(104);
  for (int trial = 0; trial < 20; ++trial) {
    Pose x;
    x.q = Quat{rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian(),
               rng.next_gaussian()}
              .normalized();
    const Eigen::Vector3d omega{rng.next_gaussian(), rng.next_gaussian(),
                                rng.next_gaussian()};
    const StateDerivative f = ode_rhs(x, rng.next_double(), omega);
    const double dot =
        x.q.w * f(3) + x.q.x * f(4) + x.q.y * f(5) + x.q.z * f(6);
    REQUIRE(std::abs(dot) < 1e-15);
  }
}

TEST_CASE("ode jacobians match finite differences") {
  CounterRng rng(105);
  Pose x;
  x.q = Quat{0.9, 0.2, -0.3, 0.1}.normalized();
  x.position = {0.3, -0.2, 1.1};
  const double v = 0.7;
  const Eigen::Vector3d omega{0.05, -0.03, 0.08};
  const double h = 1e-7;

  const auto jx = ode_jacobian_state(x, v, omega);
  for (int col = 0; col < 7; ++col) {
    Pose xp = x, xm = x;
    double* fields_p[7] = {&xp.position.x(), &xp.position.y(), &xp.position.z(),
                           &xp.q.w, &xp.q.x, &xp.q.y, &xp.q.z};
    double* fields_m[7] = {&xm.position.x(), &xm.position.y(), &xm.position.z(),
                           &xm.q.w, &xm.q.x, &xm.q.y, &xm.q.z};
    *fields_p[col] += h;
    *fields_m[col] -= h;
    const StateDerivative fd = (ode_rhs(xp, v, omega) - ode_rhs(xm, v, omega)) / (2 * h);
    REQUIRE((jx.col(col) - fd).norm() < 1e-6);
  }

  const auto jc = ode_jacobian_rates(x, v, omega);
  const StateDerivative f_vp = ode_rhs(x, v + h, omega);
  const StateDerivative f_vm = ode_rhs(x, v - h, omega);
  REQUIRE((jc.col(0) - (f_vp - f_vm) / (2 * h)).norm() < 1e-6);
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d wp = omega, wm = omega;
    wp(k) += h;
    wm(k) -= h;
    const StateDerivative fd = (ode_rhs(x, v, wp) - ode_rhs(x, v, wm)) / (2 * h);
    REQUIRE((jc.col(k + 1) - fd).norm() < 1e-6);
  }
}

TEST_CASE("ungroup: all ones and all zeros") {
  const HeaterLayout layout = default_layout();

  auto w1 = ungroup(make_u({1, 1, 1, 1, 1, 1, 1, 1}), layout);
  for (double x : w1) REQUIRE(x == 1.0);

  auto w0 = ungroup(make_u({0, 0, 0, 0, 0, 0, 0, 0}), layout);
  for (int i = 0; i < kNumUnits; ++i) {
    REQUIRE(w0[i] == (layout.is_corner(i) ? 1.0 : 0.0));
  }
}

TEST_CASE("ungroup: a single group's duty lands on exactly its members") {
  const HeaterLayout layout = default_layout();
  auto w = ungroup(make_u({0.5, 0, 0, 0, 0, 0, 0, 0}), layout);
  for (int i = 0; i < kNumUnits; ++i) {
    if (layout.group_of[i] == 0) {
      REQUIRE(w[i] == 0.5);
    } else if (layout.is_corner(i)) {
      REQUIRE(w[i] == 1.0);
    } else {
      REQUIRE(w[i] == 0.0);
    }
  }
}

TEST_CASE("regroup: all-on inputs give unit group values") {
  const HeaterLayout layout = default_layout();
  std::array<double, kNumUnits> w;
  w.fill(1.0);
  const auto g = regroup(w, layout);
  for (double x : g) REQUIRE(x == Catch::Approx(1.0));
}

TEST_CASE("regroup: half of an equal-power group on gives 0.5") {
  const HeaterLayout layout = default_layout();
  std::array<double, kNumUnits> w{};
  // Group 0 holds units 0..3, each 100 W; turn on two of four.
  w[0] = 1.0;
  w[1] = 1.0;
  const auto g = regroup(w, layout);
  REQUIRE(g[0] == Catch::Approx(0.5));
}

TEST_CASE("regroup: power-weighted mean on unequal ratings") {
  HeaterLayout layout = default_layout();
  // Re-rate group 0 so units 0..3 carry (100, 50, 0, 0) effective weight by
  // moving two units to group 1 and rating the remaining pair 100 and 50 W.
  layout.unit_power[0] = 100.0;
  layout.unit_power[1] = 50.0;
  layout.group_of[2] = 1;
  layout.group_of[3] = 1;
  layout.validate();
  std::array<double, kNumUnits> w{};
  w[0] = 1.0;  // only the 100 W unit on
  const auto g = regroup(w, layout);
  REQUIRE(g[0] == Catch::Approx(100.0 / 150.0));
}

TEST_CASE("regroup rejects a layout with a zero-power group") {
  HeaterLayout layout = default_layout();
  for (int i : layout.group_members(0)) layout.unit_power[i] = 0.0;
  std::array<double, kNumUnits> w{};
  REQUIRE_THROWS_AS(regroup(w, layout), config_error);
}

TEST_CASE("ungroup then regroup recovers group duties exactly") {
  const HeaterLayout layout = default_layout();
  CounterRng rng(106);
  for (int trial = 0; trial < 10; ++trial) {
    GroupControls u;
    for (int i = 0; i < 8; ++i) u.u[i] = rng.next_double();
    const auto g = regroup(ungroup(u, layout), layout);
    for (int i = 0; i < 8; ++i) REQUIRE(g[i] == Catch::Approx(u.u[i]).margin(1e-14));
    REQUIRE(g[8] == Catch::Approx(1.0));
  }
}

TEST_CASE("regroup of a binary pattern with uniform powers is the mean") {
  const HeaterLayout layout = default_layout();
  std::array<double, kNumUnits> w{};
  // Group 4 = units 16, 17, 24, all 75 W; turn on one of three.
  w[16] = 1.0;
  const auto g = regroup(w, layout);
  REQUIRE(g[4] == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("power_check_group: zero duties leave the full budgets") {
  const HeaterLayout layout = default_layout();
  const auto r = power_check_group(GroupControls{}, layout);
  REQUIRE(r.total_load == 0.0);
  REQUIRE(r.wall_load == 0.0);
  REQUIRE(r.total_margin == Catch::Approx(layout.total_budget_free()));
  REQUIRE(r.wall_margin == Catch::Approx(layout.wall_budget_free()));
  REQUIRE(r.feasible);
}

TEST_CASE("power_check_group: head groups beyond the derived budget") {
  // Four 400 W head groups against a 1200 W effective budget.
  HeaterLayout layout = default_layout();
  for (int i = 0; i < 16; ++i) layout.unit_power[i] = 100.0;  // P_1..P_4 = 400 W
  layout.p_total_max = 1200.0 + layout.group_power(8);
  layout.validate();
  const auto r = power_check_group(make_u({1, 1, 1, 1, 0, 0, 0, 0}), layout);
  REQUIRE(r.total_load == Catch::Approx(1600.0));
  REQUIRE(r.total_margin == Catch::Approx(-400.0));
  REQUIRE_FALSE(r.feasible);
}

TEST_CASE("power_check_group: exact wall budget is feasible with zero margin") {
  HeaterLayout layout = default_layout();
  // Group 5 (index 4) draws 225 W in the default layout; set the derived wall
  // budget to exactly that.
  const double p5 = layout.group_power(4);
  layout.p_wall_max = p5 - (layout.p_back_max - layout.group_power(8));
  layout.validate();
  REQUIRE(layout.wall_budget_free() == Catch::Approx(p5));
  const auto r = power_check_group(make_u({0, 0, 0, 0, 1, 0, 0, 0}), layout);
  REQUIRE(r.wall_load == Catch::Approx(p5));
  REQUIRE(r.wall_margin == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(r.feasible);
}

TEST_CASE("power_check_units: corners only") {
  const HeaterLayout layout = default_layout();
  BinaryControls v;
  for (int i = 0; i < kNumUnits; ++i) v.on[i] = layout.is_corner(i);
  const auto r = power_check_units(v, layout);
  const double p9 = layout.group_power(8);
  REQUIRE(r.total_margin == Catch::Approx(layout.p_total_max - p9));
  REQUIRE(r.wall_margin == Catch::Approx(layout.p_wall_max));
  REQUIRE(r.back_margin == Catch::Approx(layout.p_back_max - p9));
  REQUIRE(r.feasible);
}

TEST_CASE("power_check_units: everything on exceeds the total budget") {
  const HeaterLayout layout = default_layout();
  BinaryControls v;
  v.on.fill(true);
  double total = 0.0;
  for (double p : layout.unit_power) total += p;
  REQUIRE(total > layout.p_total_max);  // precondition of the scenario
  const auto r = power_check_units(v, layout);
  REQUIRE_FALSE(r.feasible);
  REQUIRE(r.total_margin < 0.0);
}

TEST_CASE("power_check_units: wall budget boundary is feasible") {
  HeaterLayout layout = default_layout();
  double wall_power = 0.0;
  for (int i = HeaterLayout::wall_begin; i < HeaterLayout::wall_end; ++i) {
    wall_power += layout.unit_power[i];
  }
  layout.p_wall_max = wall_power;
  layout.validate();
  BinaryControls v;
  for (int i = 0; i < kNumUnits; ++i) {
    v.on[i] = layout.is_corner(i) || layout.is_wall(i);
  }
  const auto r = power_check_units(v, layout);
  REQUIRE(r.wall_margin == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(r.feasible);
}

TEST_CASE("default layout satisfies its own structural invariants") {
  const HeaterLayout layout = default_layout();
  REQUIRE_NOTHROW(layout.validate());
  REQUIRE(layout.group_power(8) == Catch::Approx(300.0));
  REQUIRE(layout.total_budget_free() == Catch::Approx(1500.0));
  REQUIRE(layout.wall_budget_free() == Catch::Approx(600.0));
  // Groups 1-4 are head-only, group 9 is back-only corners.
  for (int i = 0; i < kNumUnits; ++i) {
    if (layout.group_of[i] < 4) REQUIRE(layout.is_head(i));
    if (layout.group_of[i] == 8) REQUIRE(layout.is_back(i));
  }
}

TEST_CASE("parameter and control validation rejects out-of-range values") {
  ModelParams p = reference_params();
  p.v_max = 0.0;
  REQUIRE_THROWS_AS(p.validate(), config_error);
  p = reference_params();
  p.alpha = 1.5;
  REQUIRE_THROWS_AS(p.validate(), config_error);

  GroupControls u;
  u.u[3] = 1.2;
  REQUIRE_THROWS_AS(u.validate(), config_error);
}
