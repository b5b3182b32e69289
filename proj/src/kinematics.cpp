#include "rvc/kinematics.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rvc/errors.hpp"

namespace rvc {

Twist revolute_twist(const Vec3& axis, const Vec3& point) {
  const Vec3 w = axis.normalized();
  Twist xi;
  xi << -w.cross(point), w;
  return xi;
}

Twist prismatic_twist(const Vec3& direction) {
  Twist xi;
  xi << direction.normalized(), Vec3::Zero();
  return xi;
}

void RobotModel::validate() const {
  for (int i = 0; i < kJoints; ++i) {
    const double wn = twists[i].tail<3>().norm();
    if (wn == 0.0) {
      if (std::abs(twists[i].head<3>().norm() - 1.0) > 1e-9)
        throw ConfigError("robot: prismatic twist " + std::to_string(i + 1) + " must be a unit direction");
    } else if (std::abs(wn - 1.0) > 1e-9) {
      throw ConfigError("robot: revolute twist " + std::to_string(i + 1) + " needs a unit axis");
    }
    if (!(q_min(i) < q_max(i))) throw ConfigError("robot: empty joint range");
    if (!(qdot_max(i) > 0.0)) throw ConfigError("robot: rate bounds must be positive");
  }
  if (!is_rotation(g0.R, 1e-9)) throw ConfigError("robot: g0 rotation is not orthonormal");
}

RobotModel RobotModel::standard() {
  RobotModel m;
  const Mat3 R0 = exp_so3(Vec3(M_PI / 6.0, 0.0, 0.0));
  m.g0 = {Vec3(0.0, 0.0, 0.5e-3), R0};
  const Vec3 wrist = m.g0.p + 0.1 * R0.col(2);
  m.twists = {prismatic_twist(Vec3::UnitX()), prismatic_twist(Vec3::UnitY()),
              prismatic_twist(Vec3::UnitZ()), revolute_twist(Vec3::UnitX(), wrist),
              revolute_twist(Vec3::UnitZ(), wrist)};
  m.q_min << -40e-3, -40e-3, -40e-3, -0.5, -0.5;
  m.q_max = -m.q_min;
  m.qdot_max << 2e-3, 2e-3, 2e-3, 0.2, 0.2;
  return m;
}

namespace {

template <int N>
Eigen::Matrix<double, N, 1> parse_numbers(const std::string& key, const std::string& text) {
  std::istringstream ss(text);
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) {
    if (!(ss >> out(i))) throw ConfigError("robot: key '" + key + "' needs " + std::to_string(N) + " numbers");
  }
  std::string rest;
  if (ss >> rest) throw ConfigError("robot: trailing text after '" + key + "'");
  return out;
}

}  // namespace

RobotModel load_robot_model(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("robot: ") + e.what());
  }
  RobotModel m = RobotModel::standard();
  for (const auto& [key, node] : tree) {
    if (!node.empty()) throw ConfigError("robot: sections are not supported ('" + key + "')");
    const std::string& val = node.data();
    if (key.size() == 6 && key.rfind("twist", 0) == 0 && key[5] >= '1' && key[5] <= '5') {
      m.twists[key[5] - '1'] = parse_numbers<6>(key, val);
    } else if (key == "g0_p") {
      m.g0.p = parse_numbers<3>(key, val);
    } else if (key == "g0_R") {
      const auto r = parse_numbers<9>(key, val);
      m.g0.R = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
    } else if (key == "q_min") {
      m.q_min = parse_numbers<5>(key, val);
    } else if (key == "q_max") {
      m.q_max = parse_numbers<5>(key, val);
    } else if (key == "qdot_max") {
      m.qdot_max = parse_numbers<5>(key, val);
    } else {
      throw ConfigError("robot: unknown key '" + key + "'");
    }
  }
  m.validate();
  return m;
}

RobotModel load_robot_model_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("robot: cannot open " + path);
  return load_robot_model(f);
}

bool within_limits(const RobotModel& model, const Vec5& q, double tol) {
  for (int i = 0; i < kJoints; ++i) {
    if (!(q(i) >= model.q_min(i) - tol && q(i) <= model.q_max(i) + tol)) return false;
  }
  return true;
}

Pose forward_kinematics(const RobotModel& model, const Vec5& q) {
  for (int i = 0; i < kJoints; ++i) {
    if (!(q(i) >= model.q_min(i) - 1e-12 && q(i) <= model.q_max(i) + 1e-12)) throw JointLimitError(i, q(i));
  }
  Pose g = Pose::identity();
  for (int i = 0; i < kJoints; ++i) g = g * exp_twist(model.twists[i], q(i));
  return g * model.g0;
}

Mat6x5 body_jacobian(const RobotModel& model, const Vec5& q) {
  Mat6x5 J;
  Pose suffix = model.g0;
  for (int i = kJoints - 1; i >= 0; --i) {
    suffix = exp_twist(model.twists[i], q(i)) * suffix;
    J.col(i) = adjoint_inverse(suffix) * model.twists[i];
  }
  return J;
}

Vec5 clamp_joint_rates(const RobotModel& model, const Vec5& qdot) {
  double scale = 1.0;
  for (int i = 0; i < kJoints; ++i) {
    const double r = std::abs(qdot(i)) / model.qdot_max(i);
    if (r > 1.0) scale = std::min(scale, 1.0 / r);
  }
  return qdot * scale;
}

Vec5 resolve_joint_rates(const RobotModel& model, const Vec5& q, const BodyVelocity& V, double lambda,
                         const Vec6& task_weight) {
  const Mat6x5 J = body_jacobian(model, q);
  const Mat6x5 WJ = task_weight.asDiagonal() * J;
  const Mat5 A = J.transpose() * WJ + lambda * lambda * Mat5::Identity();
  const Vec5 qdot = A.ldlt().solve(WJ.transpose() * V.vector());
  return clamp_joint_rates(model, qdot);
}

Vec6 pose_error(const Pose& g, const Pose& ref) {
  const Pose d = g.inverse() * ref;
  Vec6 e;
  e << d.p, log_so3(d.R);
  return e;
}

TrajectoryTracker::TrajectoryTracker(const RobotModel& model, PidGains gains, int lookahead, Vec6 task_weight)
    : model_(model), gains_(gains), lookahead_(lookahead), task_weight_(task_weight) {
  if (lookahead < 0) throw std::invalid_argument("tracker: lookahead must be >= 0");
}

void TrajectoryTracker::reset() {
  integral_.setZero();
  prev_error_.setZero();
  has_prev_ = false;
}

TrackCommand TrajectoryTracker::step(const Vec5& q, const Trajectory& traj, double dt) {
  RigidBodyState now;
  now.g = forward_kinematics(model_, q);
  TrackCommand cmd;
  cmd.index = pick_tracking_index(traj, now, lookahead_);
  const RigidBodyState& ref = traj.states[cmd.index];

  const Vec6 e = pose_error(now.g, ref.g);
  integral_ += e * dt;
  const Vec6 de = has_prev_ ? Vec6((e - prev_error_) / dt) : Vec6::Zero();
  prev_error_ = e;
  has_prev_ = true;

  // Reference twist re-expressed in the current body frame. The last state
  // holds still: the plan's terminal velocity is not penalized, so it is
  // generally nonzero and would otherwise bias the settled pose.
  const Vec6 ff = cmd.index == traj.steps()
                      ? Vec6::Zero()
                      : Vec6(adjoint(now.g.inverse() * ref.g) * ref.V.vector());
  const Vec6 V = ff + gains_.kp * e + gains_.ki * integral_ + gains_.kd * de;
  cmd.V = BodyVelocity::from_vector(V);
  cmd.qdot = resolve_joint_rates(model_, q, cmd.V, 1e-6, task_weight_);
  return cmd;
}

}  // namespace rvc
