#include "rvc/se3.hpp"

#include <algorithm>

namespace rvc {

Pose Pose::from_matrix(const Mat4& m) { return {m.block<3, 1>(0, 3), m.block<3, 3>(0, 0)}; }

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = R;
  m.block<3, 1>(0, 3) = p;
  return m;
}

Mat4 hat6(const BodyVelocity& V) {
  Mat4 m = Mat4::Zero();
  m.block<3, 3>(0, 0) = hat3<double>(V.w);
  m.block<3, 1>(0, 3) = V.v;
  return m;
}

Mat4 hat6(const Twist& xi) { return hat6(BodyVelocity::from_vector(xi)); }

Pose exp_twist(const Twist& xi, double theta) {
  const Vec3 v = xi.head<3>() * theta;
  const Vec3 phi = xi.tail<3>() * theta;
  return {left_jacobian_so3<double>(phi) * v, exp_so3<double>(phi)};
}

Vec3 log_so3(const Mat3& R) {
  const Vec3 axis_sin = vee3(R - R.transpose());  // 2 sin(theta) n
  const double cos_t = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::atan2(0.5 * axis_sin.norm(), cos_t);

  if (theta < 1e-6) {
    return 0.5 * (1.0 + theta * theta / 6.0) * axis_sin;
  }
  if (M_PI - theta < 1e-3) {
    // sin(theta) is too small to recover the axis from the antisymmetric part.
    // Use n n^T = (sym(R) - cos I) / (1 - cos) and take the dominant column.
    const Mat3 nnt = (0.5 * (R + R.transpose()) - cos_t * Mat3::Identity()) / (1.0 - cos_t);
    Eigen::Index k = 0;
    nnt.diagonal().maxCoeff(&k);
    Vec3 n = nnt.col(k) / std::sqrt(std::max(nnt(k, k), 1e-300));
    n.normalize();
    if (n.dot(axis_sin) < 0.0) n = -n;
    return theta * n;
  }
  return theta / (2.0 * std::sin(theta)) * axis_sin;
}

Mat3 right_jacobian_inverse_so3(const Vec3& phi) {
  const double t2 = phi.squaredNorm();
  const Mat3 K = hat3<double>(phi);
  double c;
  if (t2 < 1e-8) {
    c = 1.0 / 12.0 + t2 / 720.0;
  } else {
    const double t = std::sqrt(t2);
    c = 1.0 / t2 - (1.0 + std::cos(t)) / (2.0 * t * std::sin(t));
  }
  return Mat3::Identity() + 0.5 * K + c * K * K;
}

Mat6 adjoint(const Pose& g) {
  Mat6 a = Mat6::Zero();
  a.block<3, 3>(0, 0) = g.R;
  a.block<3, 3>(0, 3) = hat3<double>(g.p) * g.R;
  a.block<3, 3>(3, 3) = g.R;
  return a;
}

Mat6 adjoint_inverse(const Pose& g) {
  const Mat3 Rt = g.R.transpose();
  Mat6 a = Mat6::Zero();
  a.block<3, 3>(0, 0) = Rt;
  a.block<3, 3>(0, 3) = -Rt * hat3<double>(g.p);
  a.block<3, 3>(3, 3) = Rt;
  return a;
}

bool is_rotation(const Mat3& R, double tol) {
  return (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(R.determinant() - 1.0) < tol;
}

Mat3 orthonormalize(const Mat3& R) {
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    out = U * svd.matrixV().transpose();
  }
  return out;
}

double rotation_distance(const Mat3& a, const Mat3& b) { return log_so3(a.transpose() * b).norm(); }

Eigen::Quaterniond to_quaternion(const Mat3& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

}  // namespace rvc
