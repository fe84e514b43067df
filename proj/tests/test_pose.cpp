#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "meltnav/errors.hpp"
#include "meltnav/pose.hpp"
#include "meltnav/rng.hpp"

using meltnav::AttitudeError;
using meltnav::boxminus;
using meltnav::CounterRng;
using meltnav::Quat;
using meltnav::slerp;

namespace {

Quat random_unit_quat(CounterRng& rng) {
  Quat q{rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian(),
         rng.next_gaussian()};
  return q.normalized();
}

}  // namespace

TEST_CASE("hamilton product matches the basis table") {
  const Quat i{0, 1, 0, 0};
  const Quat j{0, 0, 1, 0};
  const Quat k{0, 0, 0, 1};

  // i*j = k, j*k = i, k*i = j, i*i = -1.
  Quat ij = i * j;
  REQUIRE(ij.w == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(ij.z == Catch::Approx(1.0));
  Quat jk = j * k;
  REQUIRE(jk.x == Catch::Approx(1.0));
  Quat ki = k * i;
  REQUIRE(ki.y == Catch::Approx(1.0));
  Quat ii = i * i;
  REQUIRE(ii.w == Catch::Approx(-1.0));
}

TEST_CASE("rotation matrix agrees with quaternion sandwich product") {
  CounterRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Quat q = random_unit_quat(rng);
    const Eigen::Vector3d v{rng.next_gaussian(), rng.next_gaussian(),
                            rng.next_gaussian()};
    // Sandwich q * (0,v) * q^-1.
    const Quat pv{0.0, v.x(), v.y(), v.z()};
    const Quat rq = q * pv * q.conjugate();
    const Eigen::Vector3d rv = q.rotate(v);
    REQUIRE(rv.x() == Catch::Approx(rq.x).margin(1e-12));
    REQUIRE(rv.y() == Catch::Approx(rq.y).margin(1e-12));
    REQUIRE(rv.z() == Catch::Approx(rq.z).margin(1e-12));
  }
}

TEST_CASE("body_x_axis equals first rotation matrix column") {
  CounterRng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Quat q = random_unit_quat(rng);
    const Eigen::Vector3d a = q.body_x_axis();
    const Eigen::Vector3d c = q.rotation_matrix().col(0);
    REQUIRE((a - c).norm() < 1e-14);
  }
}

TEST_CASE("from_axis_angle produces the expected elementary rotations") {
  // 90 degrees about z maps x to y.
  const Quat qz = Quat::from_axis_angle({0, 0, 1}, std::numbers::pi / 2);
  const Eigen::Vector3d y = qz.rotate({1, 0, 0});
  REQUIRE(y.x() == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(y.y() == Catch::Approx(1.0));
  REQUIRE(y.z() == Catch::Approx(0.0).margin(1e-15));

  // Zero axis yields identity.
  const Quat qid = Quat::from_axis_angle({0, 0, 0}, 1.0);
  REQUIRE(qid.w == 1.0);
  REQUIRE(qid.x == 0.0);
}

TEST_CASE("exp_rotation of a rotation vector matches axis-angle") {
  const Eigen::Vector3d w{0.3, -0.1, 0.2};
  const Quat a = Quat::exp_rotation(w);
  const Quat b = Quat::from_axis_angle(w, w.norm());
  REQUIRE(a.w == Catch::Approx(b.w));
  REQUIRE(a.x == Catch::Approx(b.x));
  REQUIRE(a.y == Catch::Approx(b.y));
  REQUIRE(a.z == Catch::Approx(b.z));
}

TEST_CASE("slerp endpoints and midpoint") {
  const Quat a{};  // identity
  const Quat b = Quat::from_axis_angle({0, 0, 1}, std::numbers::pi / 2);

  const Quat s0 = slerp(a, b, 0.0);
  REQUIRE(s0.w == Catch::Approx(1.0));

  const Quat s1 = slerp(a, b, 1.0);
  REQUIRE(s1.w == Catch::Approx(b.w));
  REQUIRE(s1.z == Catch::Approx(b.z));

  // Midpoint of a 90 degree z rotation is the 45 degree z rotation.
  const Quat sm = slerp(a, b, 0.5);
  const Quat expect = Quat::from_axis_angle({0, 0, 1}, std::numbers::pi / 4);
  REQUIRE(sm.w == Catch::Approx(expect.w));
  REQUIRE(sm.z == Catch::Approx(expect.z));
}

TEST_CASE("slerp takes the short way around") {
  const Quat a{};
  const Quat b = Quat::from_axis_angle({0, 0, 1}, 0.4);
  const Quat minus_b{-b.w, -b.x, -b.y, -b.z};  // same rotation, far hemisphere
  const Quat s = slerp(a, minus_b, 0.5);
  const Quat expect = Quat::from_axis_angle({0, 0, 1}, 0.2);
  REQUIRE(std::abs(std::abs(s.w) - expect.w) < 1e-12);
  REQUIRE(std::abs(std::abs(s.z) - std::abs(expect.z)) < 1e-12);
}

TEST_CASE("boxminus recovers a pure yaw offset") {
  const Quat q_b{};
  const Quat q_a = Quat::from_axis_angle({0, 0, 1}, 0.2);
  const AttitudeError e = boxminus(q_a, q_b);
  REQUIRE(e.d_phi == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(e.d_theta == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(e.d_psi == Catch::Approx(0.2));
}

TEST_CASE("boxminus measures the difference in the reference frame") {
  // Reference rolled by 0.3 about its own x; target is identity. The relative
  // rotation q_b^-1 * q_a is then a roll by -0.3.
  const Quat q_b = Quat::from_axis_angle({1, 0, 0}, 0.3);
  const Quat q_a{};
  const AttitudeError e = boxminus(q_a, q_b);
  REQUIRE(e.d_phi == Catch::Approx(-0.3));
  REQUIRE(e.d_theta == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(e.d_psi == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("boxminus of equal attitudes is zero") {
  CounterRng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const Quat q = random_unit_quat(rng);
    const AttitudeError e = boxminus(q, q);
    REQUIRE(std::abs(e.d_phi) < 1e-12);
    REQUIRE(std::abs(e.d_theta) < 1e-12);
    REQUIRE(std::abs(e.d_psi) < 1e-12);
  }
}

TEST_CASE("boxminus round-trips a ZYX Euler composition") {
  // Compose yaw(0.5) * pitch(0.3) * roll(-0.2) relative to a random base and
  // check the operator reports exactly those angles.
  CounterRng rng(78);
  for (int trial = 0; trial < 10; ++trial) {
    const Quat q_b = random_unit_quat(rng);
    const double roll = -0.2, pitch = 0.3, yaw = 0.5;
    const Quat rel = Quat::from_axis_angle({0, 0, 1}, yaw) *
                     Quat::from_axis_angle({0, 1, 0}, pitch) *
                     Quat::from_axis_angle({1, 0, 0}, roll);
    const Quat q_a = q_b * rel;
    const AttitudeError e = boxminus(q_a.normalized(), q_b);
    REQUIRE(e.d_phi == Catch::Approx(roll).margin(1e-9));
    REQUIRE(e.d_theta == Catch::Approx(pitch).margin(1e-9));
    REQUIRE(e.d_psi == Catch::Approx(yaw).margin(1e-9));
  }
}

TEST_CASE("boxminus is antisymmetric for yaw-only differences") {
  const Quat q_b = Quat::from_axis_angle({0, 0, 1}, 0.1);
  const Quat q_a = Quat::from_axis_angle({0, 0, 1}, 0.35);
  const AttitudeError fwd = boxminus(q_a, q_b);
  const AttitudeError rev = boxminus(q_b, q_a);
  REQUIRE(fwd.d_psi == Catch::Approx(-rev.d_psi));
}

TEST_CASE("boxminus ignores double-cover sign flips") {
  CounterRng rng(79);
  const Quat q_b = random_unit_quat(rng);
  const Quat q_a = q_b * Quat::from_axis_angle({0, 0, 1}, 0.25);
  const Quat q_a_flipped{-q_a.w, -q_a.x, -q_a.y, -q_a.z};
  const AttitudeError e1 = boxminus(q_a.normalized(), q_b);
  const AttitudeError e2 = boxminus(q_a_flipped.normalized(), q_b);
  REQUIRE(e1.d_psi == Catch::Approx(e2.d_psi));
  REQUIRE(e1.d_phi == Catch::Approx(e2.d_phi).margin(1e-12));
  REQUIRE(e1.d_theta == Catch::Approx(e2.d_theta).margin(1e-12));
}

TEST_CASE("boxminus throws at the pitch singularity") {
  const Quat q_b{};
  const Quat q_a = Quat::from_axis_angle({0, 1, 0}, std::numbers::pi / 2);
  REQUIRE_THROWS_AS(boxminus(q_a, q_b), meltnav::degenerate_attitude_error);
}

TEST_CASE("boxminus rejects non-unit quaternions") {
  const Quat bad{2.0, 0.0, 0.0, 0.0};
  REQUIRE_THROWS_AS(boxminus(bad, Quat{}), std::invalid_argument);
  REQUIRE_THROWS_AS(boxminus(Quat{}, bad), std::invalid_argument);
}

TEST_CASE("boxminus is continuous near but outside the singular band") {
  // Pitch at pi/2 - 1e-6 is well outside the 1e-9 guard and must evaluate.
  const Quat q_a =
      Quat::from_axis_angle({0, 1, 0}, std::numbers::pi / 2 - 1e-6);
  const AttitudeError e = boxminus(q_a, Quat{});
  REQUIRE(e.d_theta == Catch::Approx(std::numbers::pi / 2 - 1e-6));
}
