#include "doctest.h"
#include "test_util.hpp"

#include "rvc/dynamics.hpp"

using namespace rvc;

TEST_CASE("state_derivative") {
  InertiaParams in;
  RigidBodyState x;
  auto d = state_derivative(x, ControlInput::Zero(), in);
  CHECK(d.pose_rate.isZero(0.0));
  CHECK(d.accel.isZero(0.0));

  in.mass = 2.0;
  ControlInput u = ControlInput::Zero();
  u(0) = 1.0;
  d = state_derivative(x, u, in);
  CHECK(d.accel.head<3>() == Vec3(0.5, 0, 0));
  CHECK(d.accel.tail<3>().isZero(0.0));

  InertiaParams top{1.0, Vec3(1, 2, 3)};
  x.V.w = Vec3(1, 1, 1);
  d = state_derivative(x, ControlInput::Zero(), top);
  CHECK((d.accel.tail<3>() - Vec3(-1.0, 1.0, -1.0 / 3.0)).norm() < 1e-15);

  test::Rand rnd(3);
  x.g = rnd.pose();
  x.V = BodyVelocity::from_vector(rnd.vec6());
  d = state_derivative(x, ControlInput::Zero(), top);
  CHECK((d.pose_rate - x.g.matrix() * hat6(x.V)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("inertia validation") {
  CHECK_THROWS(InertiaParams{0.0, Vec3::Ones()}.validate());
  CHECK_THROWS(InertiaParams{1.0, Vec3(1, 0, 1)}.validate());
  CHECK_NOTHROW(InertiaParams{}.validate());
}

TEST_CASE("step: rest stays at rest, straight line") {
  InertiaParams in;
  RigidBodyState x;
  x.g.p = Vec3(1, 2, 3);
  const auto y = step(x, ControlInput::Zero(), in, 0.1);
  CHECK(y.g.p == x.g.p);
  CHECK(y.g.R == x.g.R);

  RigidBodyState s;
  s.V.v = Vec3(0, 0, -1e-3);
  for (int i = 0; i < 10; ++i) s = step(s, ControlInput::Zero(), in, 0.1);
  CHECK(std::abs(s.g.p.z() + 1e-3) < 1e-15);
  CHECK(s.g.p.head<2>().norm() < 1e-18);
}

TEST_CASE("torque-free asymmetric top conserves energy and momentum magnitude") {
  const InertiaParams top{1.0, Vec3(1, 2, 3)};
  RigidBodyState x;
  x.V.w = Vec3(1, 1, 1);
  const double e0 = kinetic_energy(x.V, top);
  const double h0 = top.moments.cwiseProduct(x.V.w).norm();
  for (int i = 0; i < 10000; ++i) x = step(x, ControlInput::Zero(), top, 1e-4);
  const double e1 = kinetic_energy(x.V, top);
  const double h1 = top.moments.cwiseProduct(x.V.w).norm();
  CHECK(std::abs(e1 - e0) / e0 < 1e-6);
  CHECK(std::abs(h1 - h0) / h0 < 1e-6);
  CHECK(is_rotation(x.g.R, 1e-9));
}

TEST_CASE("symmetric body keeps angular velocity exactly") {
  const InertiaParams sym{1.0, Vec3(2, 2, 2)};
  RigidBodyState x;
  x.V.w = Vec3(0.3, -0.7, 1.1);
  for (int i = 0; i < 1000; ++i) x = step(x, ControlInput::Zero(), sym, 1e-2);
  CHECK(x.V.w == Vec3(0.3, -0.7, 1.1));
}

TEST_CASE("step is deterministic and group preserving") {
  test::Rand rnd(11);
  const InertiaParams in{1.3, Vec3(0.5, 1.0, 2.0)};
  RigidBodyState x;
  x.g = rnd.pose();
  x.V = BodyVelocity::from_vector(rnd.vec6());
  const ControlInput u = rnd.vec6();
  const auto a = step(x, u, in, 0.01);
  const auto b = step(x, u, in, 0.01);
  CHECK(a.g.p == b.g.p);
  CHECK(a.g.R == b.g.R);
  CHECK(a.V.vector() == b.V.vector());

  RigidBodyState y = x;
  for (int i = 0; i < 20000; ++i) y = step(y, u * 0.0, in, 0.01);
  CHECK(is_rotation(y.g.R, 1e-9));
}
