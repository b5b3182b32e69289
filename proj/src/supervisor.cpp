#include "rvc/supervisor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "rvc/errors.hpp"

namespace rvc {

namespace {

constexpr std::array<const char*, 7> kPhaseNames = {"idle",      "planar_servo",     "lowering", "contact_stopped",
                                                    "inserting", "puncture_stopped", "aborted"};

}  // namespace

std::string to_string(SupervisorPhase p) { return kPhaseNames[static_cast<std::size_t>(p)]; }

SupervisorPhase supervisor_phase_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i)
    if (s == kPhaseNames[i]) return static_cast<SupervisorPhase>(i);
  throw std::invalid_argument("unknown supervisor phase '" + s + "'");
}

bool legal_transition(SupervisorPhase from, SupervisorPhase to) {
  using P = SupervisorPhase;
  if (to == P::Aborted) return from != P::Aborted;
  switch (from) {
    case P::Idle: return to == P::PlanarServo;
    case P::PlanarServo: return to == P::Lowering;
    case P::Lowering: return to == P::PlanarServo || to == P::ContactStopped;
    case P::ContactStopped: return to == P::Inserting;
    case P::Inserting: return to == P::PunctureStopped;
    default: return false;
  }
}

bool is_terminal(SupervisorPhase p) { return p == SupervisorPhase::PunctureStopped || p == SupervisorPhase::Aborted; }

bool is_stopped(SupervisorPhase p) {
  return p == SupervisorPhase::Idle || p == SupervisorPhase::ContactStopped || is_terminal(p);
}

void SupervisorConfig::validate() const {
  servo.validate();
  weights.validate();
  inertia.validate();
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("supervisor: gamma must lie in (0, 1)");
  if (!(insertion_speed > 0.0)) throw std::invalid_argument("supervisor: insertion speed must be positive");
  if (!(insertion_max_travel > 0.0)) throw std::invalid_argument("supervisor: insertion travel must be positive");
  if (!(rcm_abort > 0.0)) throw std::invalid_argument("supervisor: rcm abort threshold must be positive");
  if (tip_filter < 1) throw std::invalid_argument("supervisor: tip filter needs at least one sample");
  if (template_size < 8) throw std::invalid_argument("supervisor: template too small");
  if (ncc_search_radius < 1) throw std::invalid_argument("supervisor: ncc search radius must be >= 1");
  if (ntraj < 2) throw std::invalid_argument("supervisor: ntraj must be >= 2");
  if (mpc_replan_ticks < 1) throw std::invalid_argument("supervisor: mpc replan period must be >= 1");
  if (lookahead < 0) throw std::invalid_argument("supervisor: lookahead must be >= 0");
  if (!(dt > 0.0)) throw std::invalid_argument("supervisor: dt must be positive");
  if (!(puncture_jump_um > 0.0) || puncture_stride < 1)
    throw std::invalid_argument("supervisor: bad puncture detector parameters");
}

ServoSupervisor::ServoSupervisor(RobotModel model, SupervisorConfig cfg, std::unique_ptr<TipDetector> tips,
                                 std::unique_ptr<PunctureDetector> puncture, CalibJacobian J0)
    : model_(std::move(model)),
      cfg_(std::move(cfg)),
      tips_(std::move(tips)),
      puncture_(std::move(puncture)),
      ncc_(cfg_.ncc_search_radius, -1.0),
      tracker_(model_, cfg_.pid, cfg_.lookahead, roll_free_weights()),
      Jc_(J0) {
  cfg_.validate();
  if (!tips_) throw std::invalid_argument("supervisor: tip detector required");
  if (!puncture_)
    puncture_ = std::make_unique<TipJumpDetector>(cfg_.puncture_jump_um * 1e-3 * cfg_.px_per_mm, cfg_.puncture_stride);
}

void ServoSupervisor::start(const Vec2& i_goal, const Vec3& p_rcm) {
  if (phase_ != SupervisorPhase::Idle) throw std::logic_error("supervisor: start requires the idle phase");
  i_goal_ = i_goal;
  p_rcm_ = p_rcm;
  phase_ = SupervisorPhase::PlanarServo;
}

void ServoSupervisor::abort(const std::string& reason) {
  if (phase_ == SupervisorPhase::Aborted) return;
  phase_ = SupervisorPhase::Aborted;
  abort_reason_ = reason;
  moving_ = false;
}

void ServoSupervisor::enter(SupervisorPhase next, TickReport& rep) {
  if (!legal_transition(phase_, next))
    throw std::logic_error("supervisor: illegal transition " + to_string(phase_) + " -> " + to_string(next));
  phase_ = next;
  rep.phase = next;
}

std::optional<Vec2> ServoSupervisor::filtered_tip() const {
  if (tip_hist_.empty()) return std::nullopt;
  Vec2 s = Vec2::Zero();
  for (const auto& v : tip_hist_) s += v;
  return s / static_cast<double>(tip_hist_.size());
}

std::optional<double> ServoSupervisor::decision_error() const {
  if (!last_sample_) return std::nullopt;
  return (last_sample_->second - i_goal_).norm();
}

Mat3 ServoSupervisor::aim_at_rcm(const Mat3& R, const Vec3& p) const {
  const Vec3 to_rcm = p_rcm_ - p;
  if (to_rcm.norm() < 1e-9) return R;
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(R.col(2), to_rcm.normalized());
  return q.toRotationMatrix() * R;
}

TickReport ServoSupervisor::tick(double t, const Frame& frame, const Vec5& q) {
  TickReport rep;
  rep.phase = phase_;
  if (phase_ == SupervisorPhase::Idle || is_terminal(phase_)) {
    qdot_prev_.setZero();
    rep.note = phase_ == SupervisorPhase::Aborted ? abort_reason_ : "";
    return rep;
  }

  Pose g;
  try {
    g = forward_kinematics(model_, q);
  } catch (const JointLimitError& e) {
    abort(e.what());
    rep.phase = phase_;
    rep.note = abort_reason_;
    qdot_prev_.setZero();
    return rep;
  }
  const BodyVelocity V = BodyVelocity::from_vector(body_jacobian(model_, q) * qdot_prev_);
  rep.rcm_error = rcm_error(g.p, g.R, p_rcm_);

  auto fail = [&](const std::string& why) {
    abort(why);
    rep.phase = phase_;
    rep.note = why;
    rep.qdot.setZero();
    qdot_prev_.setZero();
    return rep;
  };

  if (rep.rcm_error > cfg_.rcm_abort) return fail("rcm error above threshold");

  try {
    rep.tip = tips_->detect(frame);
    tip_lost_ = 0.0;
    tip_hist_.push_back(*rep.tip);
    while (static_cast<int>(tip_hist_.size()) > cfg_.tip_filter) tip_hist_.pop_front();
  } catch (const TipNotFound&) {
    tip_lost_ += cfg_.dt;
    if (tip_lost_ > cfg_.tip_lost_timeout) return fail("tip lost");
  }
  rep.tip_filtered = filtered_tip();

  switch (phase_) {
    case SupervisorPhase::PlanarServo:
    case SupervisorPhase::Lowering: {
      if (phase_ == SupervisorPhase::Lowering && ncc_.has_template()) {
        ncc_.detect(frame);
        rep.ncc_max = ncc_.last_result().max_score;
        rep.contact_score = contact_score(ncc0_, *rep.ncc_max);
        if (is_contact(*rep.contact_score, cfg_.gamma)) {
          enter(SupervisorPhase::ContactStopped, rep);
          contact_stop_pose_ = g;
          moving_ = false;
          rep.note = "contact";
          break;
        }
      }
      if (!moving_) {
        try {
          decide(t, frame, g, V, rep);
          singular_time_ = 0.0;
        } catch (const SingularJacobian&) {
          singular_time_ += cfg_.dt;
          if (singular_time_ > cfg_.singular_timeout) return fail("singular image jacobian");
        }
      }
      if (phase_ == SupervisorPhase::Aborted) return rep;
      if (moving_) follow_motion(q, g, V, rep);
      break;
    }
    case SupervisorPhase::ContactStopped: {
      insertion_axis_ = (g.R * tip_axis_in_tool(cfg_.needle)).normalized();
      insertion_start_ = g.p;
      insertion_t0_ = t;
      puncture_->activate();
      enter(SupervisorPhase::Inserting, rep);
      rep.qdot = insertion_rates(t, q, g);
      break;
    }
    case SupervisorPhase::Inserting: {
      rep.verdict = puncture_->step(frame, rep.tip);
      if (rep.verdict.triggered) {
        enter(SupervisorPhase::PunctureStopped, rep);
        puncture_stop_pose_ = g;
        rep.note = "puncture";
        break;
      }
      if ((g.p - insertion_start_).dot(insertion_axis_) > cfg_.insertion_max_travel)
        return fail("insertion travel exhausted");
      rep.qdot = insertion_rates(t, q, g);
      break;
    }
    default: break;
  }
  qdot_prev_ = rep.qdot;
  return rep;
}

void ServoSupervisor::decide(double, const Frame& frame, const Pose& g, const BodyVelocity& V, TickReport& rep) {
  const auto tip = filtered_tip();
  if (!tip) return;
  const Vec2 pxy = select_xy(g.p);
  if (last_sample_)
    Jc_ = broyden_update(Jc_, pxy - last_sample_->first, *tip - last_sample_->second, cfg_.servo.beta,
                         cfg_.servo.min_motion_m, cfg_.servo.min_motion_px, cfg_.servo.det_min);
  last_sample_ = std::make_pair(pxy, *tip);

  const bool on_goal = (*tip - i_goal_).norm() <= cfg_.servo.alpha_px;
  if (phase_ == SupervisorPhase::PlanarServo && on_goal) {
    enter(SupervisorPhase::Lowering, rep);
    const Vec2 anchor = rep.tip.value_or(*tip);
    ncc_.set_template(capture_template(frame, anchor, cfg_.template_size, cfg_.template_size), anchor);
    ncc_.detect(frame);
    ncc0_ = ncc_.last_result().max_score;
    if (!(ncc0_ > 0.0)) ncc0_ = 1.0;
  } else if (phase_ == SupervisorPhase::Lowering && !on_goal) {
    enter(SupervisorPhase::PlanarServo, rep);
    ncc_.reset();
  }

  const Vec3 target = phase_ == SupervisorPhase::Lowering
                          ? lowering_waypoint(g.p, cfg_.servo.eta)
                          : planar_waypoint(g.p, Jc_, *tip, i_goal_, cfg_.servo.max_step);
  begin_motion(target, g, V, rep);
}

void ServoSupervisor::begin_motion(const Vec3& target, const Pose& g, const BodyVelocity& V, TickReport& rep) {
  PlanProblem prob;
  prob.x0 = {g, V};
  prob.p_goal = target;
  prob.R_goal = aim_at_rcm(g.R, target);
  prob.p_rcm = p_rcm_;
  prob.steps = cfg_.ntraj;
  prob.horizon = cfg_.ntraj * cfg_.dt;
  prob.inertia = cfg_.inertia;
  SolveResult res = solve(prob, cfg_.weights, std::nullopt, cfg_.solver);
  ++plans_solved_;
  if (res.status == SolveStatus::NonFiniteCost) {
    abort("planner diverged");
    rep.phase = phase_;
    rep.note = abort_reason_;
    return;
  }
  plan_ = res.trajectory;
  plan_at_solve_ = res.trajectory;
  target_ = target;
  motion_tick_ = 0;
  solve_tick_ = 0;
  moving_ = true;
  tracker_.reset();
  rep.waypoint = target;
}

void ServoSupervisor::follow_motion(const Vec5& q, const Pose& g, const BodyVelocity& V, TickReport& rep) {
  const int remaining = cfg_.ntraj - motion_tick_;
  if (cfg_.mpc && motion_tick_ > 0 && motion_tick_ % cfg_.mpc_replan_ticks == 0 &&
      remaining >= std::max(2, cfg_.ntraj / 4)) {
    Trajectory warm = shift_trajectory(plan_at_solve_, motion_tick_ - solve_tick_);
    warm.controls.resize(remaining);
    PlanProblem prob;
    prob.x0 = {g, V};
    prob.p_goal = target_;
    // Re-aim from the current attitude: roll about the shaft drifts freely and
    // must not be pulled back toward the first plan's goal.
    prob.R_goal = aim_at_rcm(g.R, target_);
    prob.p_rcm = p_rcm_;
    prob.steps = remaining;
    prob.horizon = remaining * cfg_.dt;
    prob.inertia = cfg_.inertia;
    warm = rollout(prob.x0, warm.controls, prob.inertia, prob.dt());
    SolveResult res = solve(prob, cfg_.weights, warm, cfg_.solver);
    ++plans_solved_;
    if (res.status != SolveStatus::NonFiniteCost) {
      plan_ = res.trajectory;
      plan_at_solve_ = res.trajectory;
      solve_tick_ = motion_tick_;
    }
  }
  const TrackCommand cmd = tracker_.step(q, *plan_, cfg_.dt);
  rep.qdot = cmd.qdot;
  ++motion_tick_;
  const bool settled = (g.p - target_).norm() < cfg_.settle_tol;
  const int timeout_ticks = cfg_.ntraj + static_cast<int>(std::ceil(cfg_.settle_timeout / cfg_.dt));
  if ((motion_tick_ > cfg_.ntraj && settled) || motion_tick_ >= timeout_ticks) {
    moving_ = false;
    rep.motion_done = true;
    rep.qdot.setZero();
  }
}

Vec5 ServoSupervisor::insertion_rates(double t, const Vec5& q, const Pose& g) const {
  const double k = cfg_.insertion_gain;
  const Vec3& d = insertion_axis_;
  const Vec3 p_line = insertion_start_ + cfg_.insertion_speed * (t - insertion_t0_) * d;
  const Vec3 pdot = cfg_.insertion_speed * d + k * (p_line - g.p);

  const Vec3 rz = g.R.col(2);
  const Mat3 P = Mat3::Identity() - rz * rz.transpose();
  const double lambda = std::max((p_rcm_ - g.p).dot(rz), 1e-6);
  const Vec3 rz_dot = (-P * pdot + k * P * (p_rcm_ - g.p)) / lambda;
  const Vec3 w = rz.cross(rz_dot);

  BodyVelocity V;
  V.v = g.R.transpose() * pdot;
  V.w = g.R.transpose() * w;
  return resolve_joint_rates(model_, q, V, 1e-6, roll_free_weights());
}

}  // namespace rvc
