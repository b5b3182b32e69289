#include "doctest.h"
#include "test_util.hpp"

#include "rvc/se3.hpp"

using namespace rvc;

TEST_CASE("hat3 layout and cross product") {
  CHECK(hat3(Vec3::Zero()).isZero(0.0));
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 0;
  CHECK(hat3(Vec3(0, 0, 1)) == expected);

  test::Rand rnd(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 a = rnd.vec3(3.0), b = rnd.vec3(3.0);
    CHECK((hat3(a) * b - a.cross(b)).norm() < 1e-14);
    CHECK(hat3(a).transpose() == -hat3(a));
  }
}

TEST_CASE("hat6 block structure") {
  CHECK(hat6(BodyVelocity::zero()).isZero(0.0));
  const Mat4 m = hat6(BodyVelocity{Vec3(1, 0, 0), Vec3::Zero()});
  Mat4 e = Mat4::Zero();
  e(0, 3) = 1.0;
  CHECK(m == e);

  test::Rand rnd(2);
  for (int i = 0; i < 20; ++i) {
    const Vec6 x = rnd.vec6();
    const Mat4 h = hat6(x);
    Mat4 ref = Mat4::Zero();
    ref(0, 1) = -x(5);
    ref(0, 2) = x(4);
    ref(1, 0) = x(5);
    ref(1, 2) = -x(3);
    ref(2, 0) = -x(4);
    ref(2, 1) = x(3);
    ref(0, 3) = x(0);
    ref(1, 3) = x(1);
    ref(2, 3) = x(2);
    CHECK(h == ref);
  }
}

TEST_CASE("exp_twist") {
  test::Rand rnd(3);
  const Pose id = exp_twist(rnd.vec6(), 0.0);
  CHECK(id.p.isZero(0.0));
  CHECK(id.R.isIdentity(0.0));

  Twist z;
  z << 0, 0, 0, 0, 0, 1;
  const Pose rz = exp_twist(z, M_PI / 2);
  CHECK((rz.R * Vec3::UnitX() - Vec3::UnitY()).norm() < 1e-15);
  CHECK(rz.p.norm() < 1e-15);

  for (int i = 0; i < 200; ++i) {
    const Twist xi = rnd.vec6(1.5);
    const double theta = rnd.uniform(-2.0, 2.0);
    const Mat4 series = test::expm_series(hat6(xi) * theta, 40);
    const Mat4 closed = exp_twist(xi, theta).matrix();
    CHECK((series - closed).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("log_so3") {
  CHECK(log_so3(Mat3::Identity()).isZero(0.0));
  const Vec3 w = log_so3(exp_so3(Vec3(0, 0, 0.3)));
  CHECK((w - Vec3(0, 0, 0.3)).norm() < 1e-15);

  test::Rand rnd(4);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 axis = rnd.vec3().normalized();
    const double theta = rnd.uniform(1e-8, M_PI - 1e-3);
    const Vec3 phi = theta * axis;
    CHECK((log_so3(exp_so3(phi)) - phi).norm() < 1e-9);
  }

  SUBCASE("near pi") {
    for (int i = 0; i < 200; ++i) {
      const Vec3 axis = rnd.vec3().normalized();
      const double theta = M_PI - rnd.uniform(0.0, 1e-3);
      const Mat3 R = exp_so3(Vec3(theta * axis));
      const Vec3 phi = log_so3(R);
      CHECK(phi.norm() <= M_PI + 1e-12);
      CHECK((exp_so3(phi) - R).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SUBCASE("tiny angles") {
    for (int i = 0; i < 200; ++i) {
      const Vec3 phi = rnd.vec3(1e-7);
      CHECK((log_so3(exp_so3(phi)) - phi).norm() < 1e-15);
    }
  }
}

TEST_CASE("right Jacobian inverse matches finite differences of log") {
  test::Rand rnd(5);
  for (int i = 0; i < 50; ++i) {
    const Mat3 R = exp_so3(Vec3(rnd.vec3(1.5)));
    const Vec3 rho = log_so3(R);
    const Mat3 J = right_jacobian_inverse_so3(rho);
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      const Vec3 d = Vec3::Unit(c) * h;
      const Vec3 fd = (log_so3(R * exp_so3(d)) - log_so3(R * exp_so3(Vec3(-d)))) / (2 * h);
      CHECK((fd - J.col(c)).norm() < 1e-7);
    }
  }
}

TEST_CASE("adjoint_inverse") {
  CHECK(adjoint_inverse(Pose::identity()).isIdentity(0.0));

  const Pose tx{Vec3(1, 0, 0), Mat3::Identity()};
  const Mat6 a = adjoint_inverse(tx);
  CHECK(a.block<3, 3>(0, 3) == Mat3(-hat3(Vec3(1, 0, 0))));

  test::Rand rnd(6);
  for (int i = 0; i < 100; ++i) {
    const Pose g = rnd.pose(2.0), h = rnd.pose(2.0);
    CHECK((adjoint(g) * adjoint_inverse(g) - Mat6::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((adjoint_inverse(g) - adjoint(g.inverse())).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((adjoint_inverse(g * h) - adjoint_inverse(h) * adjoint_inverse(g)).cwiseAbs().maxCoeff() <
          1e-10);
    // Ad_g xi is the twist whose hat is g hat(xi) g^-1.
    const Twist xi = rnd.vec6();
    const Mat4 lhs = hat6(Twist(adjoint(g) * xi));
    const Mat4 rhs = g.matrix() * hat6(xi) * g.inverse().matrix();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("orthonormality survives long composition chains") {
  test::Rand rnd(7);
  Mat3 R = Mat3::Identity();
  for (int i = 0; i < 1000; ++i) R = R * rnd.rotation();
  CHECK(is_rotation(R, 1e-6));
  CHECK((orthonormalize(R) - R).cwiseAbs().maxCoeff() < 1e-6);
}
