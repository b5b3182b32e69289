#include "doctest.h"
#include "test_util.hpp"

#include <sstream>

#include "rvc/errors.hpp"
#include "rvc/kinematics.hpp"

using namespace rvc;

namespace {

Vec5 random_q(test::Rand& rnd, const RobotModel& m, double frac = 0.9) {
  Vec5 q;
  for (int i = 0; i < kJoints; ++i) q(i) = frac * rnd.uniform(m.q_min(i), m.q_max(i));
  return q;
}

// Homogeneous chain from translations and axis-angle rotations about points,
// sharing nothing with the twist exponential.
Mat4 chain_oracle(const RobotModel& m, const Vec5& q, const std::array<Vec3, 5>& axis,
                  const std::array<Vec3, 5>& point, const std::array<bool, 5>& prismatic) {
  Mat4 T = Mat4::Identity();
  for (int i = 0; i < kJoints; ++i) {
    Mat4 A = Mat4::Identity();
    if (prismatic[i]) {
      A.block<3, 1>(0, 3) = axis[i] * q(i);
    } else {
      const Mat3 Rq = Eigen::AngleAxisd(q(i), axis[i]).toRotationMatrix();
      A.block<3, 3>(0, 0) = Rq;
      A.block<3, 1>(0, 3) = point[i] - Rq * point[i];
    }
    T = T * A;
  }
  return T * m.g0.matrix();
}

}  // namespace

TEST_CASE("standard model is valid and fk(0) = g0 exactly") {
  const RobotModel m = RobotModel::standard();
  CHECK_NOTHROW(m.validate());
  const Pose g = forward_kinematics(m, Vec5::Zero());
  CHECK(g.p == m.g0.p);
  CHECK(g.R == m.g0.R);
  for (int i = 0; i < 3; ++i) CHECK(m.is_prismatic(i));
  CHECK_FALSE(m.is_prismatic(3));
  CHECK_FALSE(m.is_prismatic(4));
}

TEST_CASE("single prismatic joint translates g0") {
  const RobotModel m = RobotModel::standard();
  Vec5 q = Vec5::Zero();
  q(0) = 0.01;
  const Pose g = forward_kinematics(m, q);
  CHECK((g.p - (m.g0.p + Vec3(0.01, 0, 0))).norm() < 1e-15);
  CHECK((g.R - m.g0.R).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fk agrees with an independent homogeneous chain") {
  const RobotModel m = RobotModel::standard();
  const Mat3 R0 = m.g0.R;
  const Vec3 wrist = m.g0.p + 0.1 * R0.col(2);
  const std::array<Vec3, 5> axis = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ(), Vec3::UnitX(), Vec3::UnitZ()};
  const std::array<Vec3, 5> point = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), wrist, wrist};
  const std::array<bool, 5> prismatic = {true, true, true, false, false};
  test::Rand rnd(41);
  for (int t = 0; t < 200; ++t) {
    const Vec5 q = random_q(rnd, m);
    const Mat4 a = forward_kinematics(m, q).matrix();
    const Mat4 b = chain_oracle(m, q, axis, point, prismatic);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("fk rejects configurations outside the joint box") {
  const RobotModel m = RobotModel::standard();
  Vec5 q = Vec5::Zero();
  q(3) = 0.6;
  CHECK_THROWS_AS(forward_kinematics(m, q), JointLimitError);
  q(3) = 0.0;
  q(1) = -0.05;
  try {
    forward_kinematics(m, q);
    FAIL("expected JointLimitError");
  } catch (const JointLimitError& e) {
    CHECK(e.joint == 1);
  }
}

TEST_CASE("body Jacobian matches forward differences of fk") {
  const RobotModel m = RobotModel::standard();
  test::Rand rnd(42);
  const double delta = 1e-7;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Vec5 q = random_q(rnd, m);
    const Mat6x5 J = body_jacobian(m, q);
    const Pose g = forward_kinematics(m, q);
    for (int i = 0; i < kJoints; ++i) {
      Vec5 qp = q;
      qp(i) += delta;
      const Vec6 fd = pose_error(g, forward_kinematics(m, qp)) / delta;
      worst = std::max(worst, (fd - J.col(i)).cwiseAbs().maxCoeff());
    }
    for (int i = 0; i < 3; ++i) CHECK(J.col(i).tail<3>().isZero(0.0));
  }
  CHECK(worst < 1e-5);
  MESSAGE("worst Jacobian column deviation: " << worst);
}

TEST_CASE("two-joint slider-pivot Jacobian by hand") {
  // Joint 1 slides along x, joint 2 pivots about z through the origin, tool at
  // (L, 0, 0). The remaining joints stay at zero.
  const double L = 0.05;
  RobotModel m = RobotModel::standard();
  m.twists = {prismatic_twist(Vec3::UnitX()), revolute_twist(Vec3::UnitZ(), Vec3::Zero()),
              prismatic_twist(Vec3::UnitZ()), revolute_twist(Vec3::UnitX(), Vec3::Zero()),
              revolute_twist(Vec3::UnitY(), Vec3::Zero())};
  m.g0 = {Vec3(L, 0, 0), Mat3::Identity()};
  for (double th : {0.0, 0.3, -0.45}) {
    Vec5 q = Vec5::Zero();
    q(0) = 0.004;
    q(1) = th;
    const Mat6x5 J = body_jacobian(m, q);
    Vec6 c1, c2;
    c1 << std::cos(th), -std::sin(th), 0, 0, 0, 0;
    c2 << 0, L, 0, 0, 0, 1;
    CHECK((J.col(0) - c1).norm() < 1e-15);
    CHECK((J.col(1) - c2).norm() < 1e-15);
  }
}

TEST_CASE("Jacobian rank and the unactuated roll direction") {
  const RobotModel m = RobotModel::standard();
  test::Rand rnd(43);
  for (int t = 0; t < 20; ++t) {
    const Mat6x5 J = body_jacobian(m, random_q(rnd, m));
    Eigen::FullPivLU<Mat6x5> lu(J);
    CHECK(lu.rank() == 5);
  }
  // At q = 0 the revolute axes are world x and z, so rotation about world y is unreachable.
  const Mat6x5 J0 = body_jacobian(m, Vec5::Zero());
  Vec6 spin = Vec6::Zero();
  spin.tail<3>() = m.g0.R.transpose() * Vec3::UnitY();
  CHECK((J0.transpose() * spin).norm() < 1e-15);
}

TEST_CASE("resolve_joint_rates") {
  const RobotModel m = RobotModel::standard();
  test::Rand rnd(44);
  CHECK(resolve_joint_rates(m, Vec5::Zero(), BodyVelocity::zero()).isZero(0.0));

  for (int t = 0; t < 50; ++t) {
    const Vec5 q = random_q(rnd, m);
    const Mat6x5 J = body_jacobian(m, q);
    Vec5 r;
    for (int i = 0; i < kJoints; ++i) r(i) = 0.5 * m.qdot_max(i) * rnd.uniform();
    const Vec6 V = J * r;
    const Vec5 qd = resolve_joint_rates(m, q, BodyVelocity::from_vector(V));
    CHECK((J * qd - V).norm() < 1e-6);

    // Add a component orthogonal to the column space; the residual must equal it.
    const Eigen::HouseholderQR<Mat6x5> qr(J);
    const Mat6 Q = qr.householderQ() * Mat6::Identity();
    const Vec6 n = Q.col(5) * 1e-3;
    const Vec5 qd2 = resolve_joint_rates(m, q, BodyVelocity::from_vector(V + n));
    CHECK((J * qd2 - (V + n) + n).norm() < 1e-9);
  }
}

TEST_CASE("joint-rate clamp scales uniformly") {
  const RobotModel m = RobotModel::standard();
  Vec5 qd;
  qd << 4e-3, 1e-3, 0, 0.1, 0;
  const Vec5 c = clamp_joint_rates(m, qd);
  CHECK(std::abs(c(0) - 2e-3) < 1e-18);
  CHECK(std::abs(c(1) - 0.5e-3) < 1e-18);
  CHECK(std::abs(c(3) - 0.05) < 1e-15);
  CHECK(clamp_joint_rates(m, qd * 0.1) == qd * 0.1);
}

TEST_CASE("robot model text loading") {
  std::istringstream in(
      "; reduced geometry\n"
      "g0_p = 0 0 0.001\n"
      "qdot_max = 1e-3 1e-3 1e-3 0.1 0.1\n"
      "twist4 = 0 0 0 1 0 0\n");
  const RobotModel m = load_robot_model(in);
  CHECK(m.g0.p == Vec3(0, 0, 0.001));
  CHECK(m.qdot_max(4) == 0.1);
  CHECK(m.twists[3](3) == 1.0);
  CHECK(m.twists[0] == RobotModel::standard().twists[0]);

  std::istringstream bad_key("g0_q = 1 2 3\n");
  CHECK_THROWS_AS(load_robot_model(bad_key), ConfigError);
  std::istringstream short_list("q_min = 1 2\n");
  CHECK_THROWS_AS(load_robot_model(short_list), ConfigError);
  std::istringstream bad_axis("twist5 = 0 0 0 2 0 0\n");
  CHECK_THROWS_AS(load_robot_model(bad_axis), ConfigError);
}

TEST_CASE("tracker: at the terminal state the command vanishes") {
  const RobotModel m = RobotModel::standard();
  Trajectory tr;
  tr.dt = 1.0 / 30.0;
  RigidBodyState s;
  s.g = m.g0;
  tr.states = {s, s, s};
  tr.controls = {ControlInput::Zero(), ControlInput::Zero()};
  TrajectoryTracker trk(m);
  const TrackCommand c = trk.step(Vec5::Zero(), tr, tr.dt);
  CHECK(c.qdot.norm() < 1e-12);
  CHECK(c.index == 2);
}

TEST_CASE("tracker: straight 1 mm descent at 0.1 mm/s") {
  const RobotModel m = RobotModel::standard();
  const double dt = 1.0 / 30.0, speed = 1e-4;
  const int N = 300;
  Trajectory tr;
  tr.dt = dt;
  for (int k = 0; k <= N; ++k) {
    RigidBodyState s;
    s.g = {m.g0.p - Vec3(0, 0, speed * dt * k), m.g0.R};
    s.V.v = m.g0.R.transpose() * Vec3(0, 0, k < N ? -speed : 0.0);
    tr.states.push_back(s);
    if (k < N) tr.controls.push_back(ControlInput::Zero());
  }
  TrajectoryTracker trk(m);
  Vec5 q = Vec5::Zero();
  for (int k = 0; k < N + 60; ++k) q += trk.step(q, tr, dt).qdot * dt;
  const double err = (forward_kinematics(m, q).p - tr.states.back().g.p).norm();
  CHECK(err < 2e-6);
  MESSAGE("descent final error [m]: " << err);
}

TEST_CASE("tracker: zero gains give pure feedforward") {
  const RobotModel m = RobotModel::standard();
  Trajectory tr;
  tr.dt = 0.1;
  RigidBodyState s;
  s.g = m.g0;
  s.V.v = Vec3(1e-4, -2e-4, 0.5e-4);
  s.V.w = Vec3(0.01, -0.02, 0.0);
  RigidBodyState later = s;
  later.g.p += Vec3(1e-4, 0, 0);
  tr.states = {s, later};
  tr.controls = {ControlInput::Zero()};
  TrajectoryTracker trk(m, PidGains{0.0, 0.0, 0.0}, 0);
  const TrackCommand c = trk.step(Vec5::Zero(), tr, tr.dt);
  CHECK((c.qdot - resolve_joint_rates(m, Vec5::Zero(), s.V)).norm() < 1e-15);
}

TEST_CASE("tracker follows a planned RCM-constrained move") {
  const RobotModel m = RobotModel::standard();
  Vec5 q = Vec5::Zero();
  const Pose g = forward_kinematics(m, q);
  PlanProblem pb;
  pb.x0.g = g;
  pb.p_rcm = g.p + 0.02 * g.R.col(2);
  pb.p_goal = g.p + Vec3(1.5e-4, -1e-4, -4e-5);
  const Vec3 z = (pb.p_rcm - pb.p_goal).normalized();
  // Minimal rotation taking the current axis onto z.
  pb.R_goal = Eigen::Quaterniond::FromTwoVectors(g.R.col(2), z).toRotationMatrix() * g.R;
  const auto res = solve(pb, CostWeights{});
  REQUIRE(res.status != SolveStatus::NonFiniteCost);

  // Roll about the shaft is neither reachable nor relevant to the RCM.
  TrajectoryTracker trk(m, PidGains{}, 3, roll_free_weights());
  const double dt = pb.dt();
  double worst_after = 0.0, worst_rcm = 0.0;
  for (int k = 0; k < pb.steps + 30; ++k) {
    const TrackCommand c = trk.step(q, res.trajectory, dt);
    q += c.qdot * dt;
    const Pose now = forward_kinematics(m, q);
    // The lookahead pick runs ahead of the time schedule, so measure deviation from the path.
    double path_dist = 1.0;
    for (const auto& s : res.trajectory.states) path_dist = std::min(path_dist, (now.p - s.g.p).norm());
    if (k > 10) worst_after = std::max(worst_after, path_dist);
    worst_rcm = std::max(worst_rcm, rcm_error(now.p, now.R, pb.p_rcm));
  }
  CHECK(worst_after < 10e-6);
  CHECK(worst_rcm < 25e-6);
  CHECK((forward_kinematics(m, q).p - pb.p_goal).norm() < 2e-6);
  MESSAGE("tracking error after transient " << worst_after * 1e6 << " um, rcm " << worst_rcm * 1e6
                                            << " um");
}
