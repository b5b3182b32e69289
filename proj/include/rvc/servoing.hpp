#pragma once

// Uncalibrated image-based servoing in the robot XY plane. The 2x2 Jacobian
// from tip XY displacement (m) to image displacement (px) is estimated online
// with rank-one Broyden updates.

#include "rvc/se3.hpp"

namespace rvc {

struct ServoParams {
  double alpha_px = 1.0;       // goal tolerance
  double beta = 0.5;           // Broyden step
  double eta = 40e-6;          // lowering distance per waypoint, m
  double min_motion_px = 0.8;  // update gates
  double min_motion_m = 5e-6;
  double max_step = 200e-6;    // planar step clamp, m
  double det_min = 1e-8;       // |det J| below this counts as singular

  void validate() const;
};

struct CalibJacobian {
  Mat2 J = Mat2::Identity();  // px per m
  Vec2 last_update_p = Vec2::Zero();
  Vec2 last_update_i = Vec2::Zero();
  bool valid = true;
  Mat2 last_valid = Mat2::Identity();
  bool has_last_valid = true;
  int updates = 0;

  static CalibJacobian seeded(const Mat2& J0, double det_min = 1e-8);
};

Eigen::Matrix<double, 2, 3> selector_matrix();
Vec2 select_xy(const Vec3& p);

/// J' = J + beta (di - J dp) dp^T / (dp^T dp), applied only when both
/// displacements clear the gates; otherwise Jc is returned unchanged.
CalibJacobian broyden_update(const CalibJacobian& Jc, const Vec2& dp, const Vec2& di, double beta,
                             double min_motion_m = 5e-6, double min_motion_px = 0.8,
                             double det_min = 1e-8);

/// Matrix used for inversion: J when valid, else the last valid one. Throws
/// SingularJacobian when neither exists.
const Mat2& usable_jacobian(const CalibJacobian& Jc);

/// p + [J^-1 (i_goal - i_tt); 0] with the XY step clamped to max_step.
Vec3 planar_waypoint(const Vec3& p, const CalibJacobian& Jc, const Vec2& i_tt, const Vec2& i_goal,
                     double max_step = 200e-6);

/// p - [0; 0; eta].
Vec3 lowering_waypoint(const Vec3& p, double eta);

/// Worst angle (degrees) between J u and K u over unit directions u.
double jacobian_direction_error_deg(const Mat2& J, const Mat2& K, int samples = 360);

}  // namespace rvc
