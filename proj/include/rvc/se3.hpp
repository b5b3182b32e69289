#pragma once

// Minimal SO(3)/SE(3) toolkit: hat operators, exponential and logarithm maps,
// adjoints. Twists are ordered (v, w): translational part first.

#include <Eigen/Dense>
#include <cmath>

namespace rvc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Twist = Vec6;

/// Rigid transform g = (p, R). p in meters, expressed in the spatial frame.
struct Pose {
  Vec3 p = Vec3::Zero();
  Mat3 R = Mat3::Identity();

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat4& m);

  Mat4 matrix() const;
  Pose inverse() const { return {-R.transpose() * p, R.transpose()}; }
  Pose operator*(const Pose& o) const { return {p + R * o.p, R * o.R}; }
  Vec3 transform(const Vec3& x) const { return p + R * x; }
};

/// Body-frame velocity V = (v, w).
struct BodyVelocity {
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();

  static BodyVelocity zero() { return {}; }
  static BodyVelocity from_vector(const Vec6& x) { return {x.head<3>(), x.tail<3>()}; }
  Vec6 vector() const {
    Vec6 x;
    x << v, w;
    return x;
  }
};

template <typename S>
Eigen::Matrix<S, 3, 3> hat3(const Eigen::Matrix<S, 3, 1>& w) {
  Eigen::Matrix<S, 3, 3> m;
  // clang-format off
  m << S(0), -w(2),  w(1),
       w(2),  S(0), -w(0),
      -w(1),  w(0),  S(0);
  // clang-format on
  return m;
}

inline Mat3 hat3(const Vec3& w) { return hat3<double>(w); }

inline Vec3 vee3(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Mat4 hat6(const BodyVelocity& V);
Mat4 hat6(const Twist& xi);

namespace detail {

// sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3 as functions of t^2, with series
// branches near zero so the result stays smooth under automatic differentiation.
template <typename S>
void so3_coefficients(const S& theta_sq, S& a, S& b, S& c) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (theta_sq < S(1e-10)) {
    a = S(1) - theta_sq / S(6);
    b = S(0.5) - theta_sq / S(24);
    c = S(1.0 / 6.0) - theta_sq / S(120);
  } else {
    const S t = sqrt(theta_sq);
    const S s = sin(t);
    const S co = cos(t);
    a = s / t;
    b = (S(1) - co) / theta_sq;
    c = (t - s) / (theta_sq * t);
  }
}

}  // namespace detail

/// Rodrigues formula for exp(hat3(phi)).
template <typename S>
Eigen::Matrix<S, 3, 3> exp_so3(const Eigen::Matrix<S, 3, 1>& phi) {
  S a, b, c;
  detail::so3_coefficients<S>(phi.squaredNorm(), a, b, c);
  const Eigen::Matrix<S, 3, 3> K = hat3<S>(phi);
  return Eigen::Matrix<S, 3, 3>::Identity() + a * K + b * K * K;
}

inline Mat3 exp_so3(const Vec3& phi) { return exp_so3<double>(phi); }

/// Left Jacobian of SO(3); the translation of exp(hat6(v, phi)) is jl(phi) * v.
template <typename S>
Eigen::Matrix<S, 3, 3> left_jacobian_so3(const Eigen::Matrix<S, 3, 1>& phi) {
  S a, b, c;
  detail::so3_coefficients<S>(phi.squaredNorm(), a, b, c);
  const Eigen::Matrix<S, 3, 3> K = hat3<S>(phi);
  return Eigen::Matrix<S, 3, 3>::Identity() + b * K + c * K * K;
}

/// exp(hat6(xi) * theta) in closed form.
Pose exp_twist(const Twist& xi, double theta);

/// Principal logarithm; the returned angle lies in [0, pi].
Vec3 log_so3(const Mat3& R);

/// Inverse of the right Jacobian of SO(3) at phi.
Mat3 right_jacobian_inverse_so3(const Vec3& phi);

/// Acts on twists (v, w): Ad_g = [R, hat(p) R; 0, R].
Mat6 adjoint(const Pose& g);
Mat6 adjoint_inverse(const Pose& g);

bool is_rotation(const Mat3& R, double tol = 1e-9);
Mat3 orthonormalize(const Mat3& R);

/// Geodesic angle between two rotations.
double rotation_distance(const Mat3& a, const Mat3& b);

Eigen::Quaterniond to_quaternion(const Mat3& R);

}  // namespace rvc
