#include "rvc/servoing.hpp"

#include <cmath>
#include <stdexcept>

#include "rvc/errors.hpp"

namespace rvc {

void ServoParams::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("servo: beta must lie in [0, 1]");
  if (!(eta > 0.0)) throw std::invalid_argument("servo: eta must be positive");
  if (!(alpha_px >= 0.0)) throw std::invalid_argument("servo: alpha must be >= 0");
  if (!(max_step > 0.0)) throw std::invalid_argument("servo: max_step must be positive");
  if (!(min_motion_px >= 0.0 && min_motion_m >= 0.0)) throw std::invalid_argument("servo: gates must be >= 0");
}

CalibJacobian CalibJacobian::seeded(const Mat2& J0, double det_min) {
  CalibJacobian c;
  c.J = J0;
  c.valid = std::abs(J0.determinant()) > det_min;
  c.has_last_valid = c.valid;
  c.last_valid = c.valid ? J0 : Mat2::Identity();
  return c;
}

Eigen::Matrix<double, 2, 3> selector_matrix() {
  Eigen::Matrix<double, 2, 3> S;
  S << 1, 0, 0, 0, 1, 0;
  return S;
}

Vec2 select_xy(const Vec3& p) { return p.head<2>(); }

CalibJacobian broyden_update(const CalibJacobian& Jc, const Vec2& dp, const Vec2& di, double beta,
                             double min_motion_m, double min_motion_px, double det_min) {
  if (!(dp.norm() > min_motion_m) || !(di.norm() > min_motion_px)) return Jc;
  CalibJacobian out = Jc;
  out.J = Jc.J + beta * (di - Jc.J * dp) * dp.transpose() / dp.squaredNorm();
  out.last_update_p = dp;
  out.last_update_i = di;
  out.updates = Jc.updates + 1;
  out.valid = std::abs(out.J.determinant()) > det_min;
  if (out.valid) {
    out.last_valid = out.J;
    out.has_last_valid = true;
  }
  return out;
}

const Mat2& usable_jacobian(const CalibJacobian& Jc) {
  if (Jc.valid) return Jc.J;
  if (Jc.has_last_valid) return Jc.last_valid;
  throw SingularJacobian("servo: no non-singular image Jacobian available");
}

Vec3 planar_waypoint(const Vec3& p, const CalibJacobian& Jc, const Vec2& i_tt, const Vec2& i_goal,
                     double max_step) {
  const Mat2& J = usable_jacobian(Jc);
  Vec2 step = J.inverse() * (i_goal - i_tt);
  const double n = step.norm();
  if (n > max_step) step *= max_step / n;
  return Vec3(p.x() + step.x(), p.y() + step.y(), p.z());
}

Vec3 lowering_waypoint(const Vec3& p, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("servo: eta must be positive");
  return Vec3(p.x(), p.y(), p.z() - eta);
}

double jacobian_direction_error_deg(const Mat2& J, const Mat2& K, int samples) {
  double worst = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double a = 2.0 * M_PI * k / samples;
    const Vec2 u(std::cos(a), std::sin(a));
    const Vec2 x = J * u, y = K * u;
    const double cross = x.x() * y.y() - x.y() * y.x();
    worst = std::max(worst, std::atan2(std::abs(cross), x.dot(y)) * 180.0 / M_PI);
  }
  return worst;
}

}  // namespace rvc
