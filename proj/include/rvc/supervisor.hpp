#pragma once

// Navigation state machine: planar alignment with the clicked goal, stepwise
// descent with contact monitoring, axial insertion, and stop on puncture.

#include <deque>
#include <memory>
#include <optional>
#include <string>

#include "rvc/kinematics.hpp"
#include "rvc/perception.hpp"
#include "rvc/scene.hpp"
#include "rvc/servoing.hpp"

namespace rvc {

enum class SupervisorPhase { Idle, PlanarServo, Lowering, ContactStopped, Inserting, PunctureStopped, Aborted };

std::string to_string(SupervisorPhase p);
SupervisorPhase supervisor_phase_from_string(const std::string& s);
bool legal_transition(SupervisorPhase from, SupervisorPhase to);
bool is_terminal(SupervisorPhase p);
/// Phases in which the robot must not move.
bool is_stopped(SupervisorPhase p);

struct SupervisorConfig {
  ServoParams servo;
  double gamma = 0.18;
  double insertion_speed = 100e-6;      // m/s along the captured tip axis
  double insertion_max_travel = 800e-6; // abort when no puncture is seen by then
  double insertion_gain = 2.0;          // 1/s, line and RCM correction while inserting
  double rcm_abort = 100e-6;
  double tip_lost_timeout = 1.0;
  double singular_timeout = 2.0;
  int tip_filter = 8;                   // detections averaged for decisions
  int template_size = 64;
  int ncc_search_radius = 8;
  bool mpc = false;
  int mpc_replan_ticks = 3;
  int lookahead = 3;
  int ntraj = 64;
  double dt = 1.0 / 30.0;
  double settle_tol = 2e-6;
  double settle_timeout = 1.0;
  double puncture_jump_um = 25.0;
  int puncture_stride = 4;
  double px_per_mm = 136.33;
  CostWeights weights;
  InertiaParams inertia;
  SolverOptions solver;
  PidGains pid;
  NeedleConfig needle;                  // tool geometry known to the controller

  void validate() const;
};

struct TickReport {
  SupervisorPhase phase = SupervisorPhase::Idle;
  Vec5 qdot = Vec5::Zero();
  std::optional<Vec2> tip;
  std::optional<Vec2> tip_filtered;
  std::optional<double> ncc_max;
  std::optional<double> contact_score;
  DetectorVerdict verdict;
  double rcm_error = 0.0;
  bool motion_done = false;
  std::optional<Vec3> waypoint;  // waypoint issued on this tick
  std::string note;              // abort reason or other event
};

class ServoSupervisor {
 public:
  ServoSupervisor(RobotModel model, SupervisorConfig cfg, std::unique_ptr<TipDetector> tips,
                  std::unique_ptr<PunctureDetector> puncture, CalibJacobian J0 = {});

  /// Idle -> PlanarServo with the operator's goal pixel and RCM point.
  void start(const Vec2& i_goal, const Vec3& p_rcm);
  /// Abort from outside (operator stop, joint limit in the plant).
  void abort(const std::string& reason);

  TickReport tick(double t, const Frame& frame, const Vec5& q);

  SupervisorPhase phase() const { return phase_; }
  const CalibJacobian& jacobian() const { return Jc_; }
  const SupervisorConfig& config() const { return cfg_; }
  const Vec2& goal() const { return i_goal_; }
  /// Pixel error the last servo decision acted on; held until the next decision.
  std::optional<double> decision_error() const;
  const Vec3& rcm() const { return p_rcm_; }
  const std::optional<Trajectory>& plan() const { return plan_; }
  int plans_solved() const { return plans_solved_; }
  const std::string& abort_reason() const { return abort_reason_; }

  /// Tool pose at the moment the robot was stopped on contact / puncture.
  const std::optional<Pose>& contact_stop_pose() const { return contact_stop_pose_; }
  const std::optional<Pose>& puncture_stop_pose() const { return puncture_stop_pose_; }
  const Vec3& insertion_axis() const { return insertion_axis_; }

 private:
  void enter(SupervisorPhase next, TickReport& rep);
  void decide(double t, const Frame& frame, const Pose& g, const BodyVelocity& V, TickReport& rep);
  void begin_motion(const Vec3& target, const Pose& g, const BodyVelocity& V, TickReport& rep);
  void follow_motion(const Vec5& q, const Pose& g, const BodyVelocity& V, TickReport& rep);
  Vec5 insertion_rates(double t, const Vec5& q, const Pose& g) const;
  Mat3 aim_at_rcm(const Mat3& R, const Vec3& p) const;
  std::optional<Vec2> filtered_tip() const;

  RobotModel model_;
  SupervisorConfig cfg_;
  std::unique_ptr<TipDetector> tips_;
  std::unique_ptr<PunctureDetector> puncture_;
  NccTipTracker ncc_;
  TrajectoryTracker tracker_;

  SupervisorPhase phase_ = SupervisorPhase::Idle;
  CalibJacobian Jc_;
  Vec2 i_goal_ = Vec2::Zero();
  Vec3 p_rcm_ = Vec3::Zero();
  std::string abort_reason_;

  std::deque<Vec2> tip_hist_;
  double tip_lost_ = 0.0;
  double singular_time_ = 0.0;
  Vec5 qdot_prev_ = Vec5::Zero();

  std::optional<std::pair<Vec2, Vec2>> last_sample_;  // (robot XY, tip px) at the last decision
  double ncc0_ = 1.0;

  bool moving_ = false;
  std::optional<Trajectory> plan_;
  Trajectory plan_at_solve_;
  int motion_tick_ = 0;
  int solve_tick_ = 0;
  Vec3 target_ = Vec3::Zero();
  int plans_solved_ = 0;

  bool insertion_started_ = false;
  Vec3 insertion_axis_ = Vec3::Zero();
  Vec3 insertion_start_ = Vec3::Zero();
  double insertion_t0_ = 0.0;

  std::optional<Pose> contact_stop_pose_;
  std::optional<Pose> puncture_stop_pose_;
};

}  // namespace rvc
