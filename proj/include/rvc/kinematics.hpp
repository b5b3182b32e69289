#pragma once

// Five-axis surgical arm: three base prismatic joints followed by two revolute
// joints whose axes meet at a wrist point up the tool shaft.
//
// Forward kinematics uses the product of exponentials
//   g(q) = exp(xi1 q1) ... exp(xi5 q5) g0
// with spatial-frame twists ordered (v, w).

#include <array>
#include <iosfwd>
#include <string>

#include "rvc/ddp.hpp"

namespace rvc {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using Mat6x5 = Eigen::Matrix<double, 6, 5>;

constexpr int kJoints = 5;

struct RobotModel {
  std::array<Twist, kJoints> twists;
  Pose g0;
  Vec5 q_min;
  Vec5 q_max;
  Vec5 qdot_max;

  bool is_prismatic(int i) const { return twists[i].tail<3>().squaredNorm() == 0.0; }
  void validate() const;

  /// Tip above the origin, shaft tilted 30 degrees about x, revolute axes
  /// through the point 100 mm up the shaft.
  static RobotModel standard();
};

/// Twist of a revolute joint about `axis` through `point`.
Twist revolute_twist(const Vec3& axis, const Vec3& point);
Twist prismatic_twist(const Vec3& direction);

/// INI-style text: keys twist1..twist5 (six numbers), g0_p (three), g0_R
/// (nine, row major), q_min, q_max, qdot_max (five each). Missing keys keep
/// the standard model's values; unknown keys throw ConfigError.
RobotModel load_robot_model(std::istream& is);
RobotModel load_robot_model_file(const std::string& path);

bool within_limits(const RobotModel& model, const Vec5& q, double tol = 1e-12);

/// Throws JointLimitError when q leaves the joint box.
Pose forward_kinematics(const RobotModel& model, const Vec5& q);

/// Body manipulator Jacobian, V = J(q) qdot.
Mat6x5 body_jacobian(const RobotModel& model, const Vec5& q);

/// Uniformly rescale qdot so that no joint exceeds its rate bound.
Vec5 clamp_joint_rates(const RobotModel& model, const Vec5& qdot);

/// Weighted damped least squares qdot = (J^T W J + lambda^2 I)^-1 J^T W V with
/// W = diag(task_weight), then rate clamped. A zero weight frees that body-twist
/// component; {1,1,1,1,1,0} leaves roll about the tool axis unconstrained.
Vec5 resolve_joint_rates(const RobotModel& model, const Vec5& q, const BodyVelocity& V,
                         double lambda = 1e-6, const Vec6& task_weight = Vec6::Ones());

/// Task weights that ignore roll about the tool z axis.
inline Vec6 roll_free_weights() { return (Vec6() << 1, 1, 1, 1, 1, 0).finished(); }

struct PidGains {
  double kp = 5.0;   // 1/s
  double ki = 0.0;   // 1/s^2
  double kd = 0.1;   // dimensionless
};

struct TrackCommand {
  Vec5 qdot = Vec5::Zero();
  int index = 0;
  BodyVelocity V;  // body twist requested before resolution
};

/// Body-frame pose error (position, rotation log) that takes `g` to `ref`.
Vec6 pose_error(const Pose& g, const Pose& ref);

/// Follows a planned trajectory: feedforward twist of the picked reference
/// state plus PID on the pose error to that state. Owns the PID memory.
class TrajectoryTracker {
 public:
  explicit TrajectoryTracker(const RobotModel& model, PidGains gains = {}, int lookahead = 3,
                             Vec6 task_weight = Vec6::Ones());

  void reset();
  TrackCommand step(const Vec5& q, const Trajectory& traj, double dt);

  const PidGains& gains() const { return gains_; }

 private:
  RobotModel model_;
  PidGains gains_;
  int lookahead_;
  Vec6 task_weight_;
  Vec6 integral_ = Vec6::Zero();
  Vec6 prev_error_ = Vec6::Zero();
  bool has_prev_ = false;
};

}  // namespace rvc
