#include "rvc/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rvc/errors.hpp"

namespace rvc {

std::string to_string(MpcMode m) {
  switch (m) {
    case MpcMode::Off: return "off";
    case MpcMode::On: return "on";
    case MpcMode::Split: return "split";
  }
  return "off";
}

MpcMode mpc_mode_from_string(const std::string& s) {
  if (s == "off" || s == "false" || s == "0") return MpcMode::Off;
  if (s == "on" || s == "true" || s == "1") return MpcMode::On;
  if (s == "split") return MpcMode::Split;
  throw ConfigError("config: mpc must be off, on or split (got '" + s + "')");
}

std::vector<ConfigField> config_fields(RunConfig& c) {
  return {
      {"run", "seed", &c.seed, "base seed for eyes, trials and noise"},
      {"run", "trials", &c.trials, "number of trials in the batch"},
      {"run", "eyes", &c.eyes, "number of eye geometries; trials are split evenly"},
      {"run", "mpc", &c.mpc, "model-predictive re-planning: off, on, or split (second half of the batch)"},
      {"run", "out", &c.out, "output directory"},
      {"run", "serve", &c.serve, "run the operator service instead of a batch"},
      {"run", "port", &c.port, "service port"},
      {"run", "dump_traj", &c.dump_traj, "write every planned trajectory as a text table"},
      {"run", "allow_abort", &c.allow_abort, "exit 0 even when a trial aborts"},
      {"run", "replay", &c.replay, "trial log to replay instead of running a batch"},
      {"run", "detect_dir", &c.detect_dir, "run the detectors over a directory of PGM frames"},
      {"run", "dump_frames", &c.dump_frames, "write every rendered frame as PGM"},
      {"run", "max_trial_time", &c.max_trial_time, "simulated seconds before a trial is aborted"},
      {"run", "hold_time", &c.hold_time, "simulated seconds kept after the terminal phase"},
      {"run", "tip_noise_px", &c.tip_noise_px, "tip detector noise sigma, px"},
      {"run", "robot", &c.robot, "robot model file (default built-in model)"},
      {"servo", "alpha", &c.alpha, "goal error tolerance, px"},
      {"servo", "beta", &c.beta, "Jacobian update step size"},
      {"servo", "eta", &c.eta, "needle lowering distance, um"},
      {"servo", "gamma", &c.gamma, "contact detection threshold"},
      {"servo", "max_step", &c.max_step, "planar step clamp, um"},
      {"servo", "min_motion_px", &c.min_motion_px, "image motion gate for Jacobian updates, px"},
      {"servo", "min_motion", &c.min_motion, "robot motion gate for Jacobian updates, um"},
      {"servo", "insertion_speed", &c.insertion_speed, "axial insertion speed, um/s"},
      {"servo", "insertion_max_travel", &c.insertion_max_travel, "insertion travel before abort, um"},
      {"servo", "rcm_abort", &c.rcm_abort, "RCM error abort limit, um"},
      {"servo", "tip_filter", &c.tip_filter, "tip detections averaged per decision"},
      {"servo", "ncc_radius", &c.ncc_radius, "NCC search radius around the last match, px"},
      {"servo", "puncture_jump", &c.puncture_jump, "tip jump counted as venipuncture, um"},
      {"servo", "puncture_stride", &c.puncture_stride, "frames between puncture detector samples"},
      {"planner", "ntraj", &c.ntraj, "trajectory waypoints per plan"},
      {"planner", "frame_rate", &c.frame_rate, "camera and control rate, Hz"},
      {"planner", "mpc_replan", &c.mpc_replan, "ticks between MPC re-solves"},
      {"planner", "lookahead", &c.lookahead, "tracker lookahead, waypoints"},
      {"planner", "kp", &c.kp, "tracker proportional gain, 1/s"},
      {"planner", "ki", &c.ki, "tracker integral gain, 1/s^2"},
      {"planner", "kd", &c.kd, "tracker derivative gain"},
      {"planner", "w_sclera", &c.w_sclera, "RCM penalty weight"},
      {"planner", "p_position", &c.p_position, "terminal position weight"},
      {"planner", "p_rotation", &c.p_rotation, "terminal rotation weight"},
      {"planner", "r_control", &c.r_control, "control effort weight"},
      {"scene", "kappa", &c.kappa, "tip deflection per unit indentation"},
      {"scene", "vein_radius", &c.vein_radius, "vein radius, um"},
      {"scene", "puncture_depth", &c.puncture_depth, "mean indentation at which the vein wall gives, um"},
      {"scene", "puncture_sigma", &c.puncture_sigma, "puncture depth spread, um"},
      {"scene", "tilt", &c.tilt, "camera tilt, deg"},
      {"scene", "px_per_mm", &c.px_per_mm, "image scale at the retina"},
      {"scene", "breathing_amp", &c.breathing_amp, "retina vertical oscillation amplitude, um"},
  };
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& name, const std::string& s) {
  std::istringstream ss(s);
  T v{};
  std::string rest;
  if (!(ss >> v) || (ss >> rest)) throw ConfigError("config: '" + name + "' has bad value '" + s + "'");
  return v;
}

bool parse_bool(const std::string& name, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config: '" + name + "' expects a boolean, got '" + s + "'");
}

struct Assign {
  const std::string& name;
  const std::string& value;
  void operator()(int* p) const { *p = parse_number<int>(name, value); }
  void operator()(double* p) const { *p = parse_number<double>(name, value); }
  void operator()(std::uint64_t* p) const { *p = parse_number<std::uint64_t>(name, value); }
  void operator()(bool* p) const { *p = parse_bool(name, value); }
  void operator()(std::string* p) const { *p = value; }
  void operator()(MpcMode* p) const { *p = mpc_mode_from_string(value); }
};

struct Format {
  std::string operator()(const int* p) const { return std::to_string(*p); }
  std::string operator()(const double* p) const { return format_double(*p); }
  std::string operator()(const std::uint64_t* p) const { return std::to_string(*p); }
  std::string operator()(const bool* p) const { return *p ? "true" : "false"; }
  std::string operator()(const std::string* p) const { return *p; }
  std::string operator()(const MpcMode* p) const { return to_string(*p); }
};

}  // namespace

void RunConfig::validate() const {
  if (trials < 1) throw ConfigError("config: trials must be >= 1");
  if (eyes < 1 || eyes > trials) throw ConfigError("config: eyes must lie in [1, trials]");
  if (port < 0 || port > 65535) throw ConfigError("config: port out of range");
  if (!(frame_rate > 0.0)) throw ConfigError("config: frame_rate must be positive");
  if (!(max_trial_time > 0.0) || !(hold_time >= 0.0)) throw ConfigError("config: bad trial timing");
  if (!(tip_noise_px >= 0.0)) throw ConfigError("config: tip_noise_px must be >= 0");
  if (!(px_per_mm > 0.0)) throw ConfigError("config: px_per_mm must be positive");
  if (!(vein_radius > 0.0)) throw ConfigError("config: vein_radius must be positive");
  try {
    supervisor_config(true).validate();
    scene_config(seed).validate();
    camera().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

SupervisorConfig RunConfig::supervisor_config(bool mpc_enabled) const {
  SupervisorConfig s;
  s.servo.alpha_px = alpha;
  s.servo.beta = beta;
  s.servo.eta = eta * 1e-6;
  s.servo.max_step = max_step * 1e-6;
  s.servo.min_motion_px = min_motion_px;
  s.servo.min_motion_m = min_motion * 1e-6;
  s.gamma = gamma;
  s.insertion_speed = insertion_speed * 1e-6;
  s.insertion_max_travel = insertion_max_travel * 1e-6;
  s.rcm_abort = rcm_abort * 1e-6;
  s.tip_filter = tip_filter;
  s.ncc_search_radius = ncc_radius;
  s.puncture_jump_um = puncture_jump;
  s.puncture_stride = puncture_stride;
  s.px_per_mm = px_per_mm;
  s.mpc = mpc_enabled;
  s.mpc_replan_ticks = mpc_replan;
  s.lookahead = lookahead;
  s.ntraj = ntraj;
  s.dt = dt();
  s.pid = {kp, ki, kd};
  s.weights.w_sclera = w_sclera;
  s.weights.P_position = p_position * Mat3::Identity();
  s.weights.P_rotation = p_rotation * Mat3::Identity();
  s.weights.R_control = r_control * Mat6::Identity();
  return s;
}

SceneConfig RunConfig::scene_config(std::uint64_t eye_seed) const {
  SceneConfig s = SceneConfig::random_eye(eye_seed);
  s.kappa = kappa;
  s.vein_radius = vein_radius * 1e-6;
  s.puncture_depth_mean = puncture_depth * 1e-6;
  s.puncture_depth_sigma = puncture_sigma * 1e-6;
  s.puncture_depth_min = 0.5 * s.puncture_depth_mean;
  s.puncture_depth_max = 1.5 * s.puncture_depth_mean;
  s.breathing_amp = breathing_amp * 1e-6;
  return s;
}

CameraModel RunConfig::camera() const {
  return CameraModel::standard(tilt * M_PI / 180.0, 0.05, px_per_mm);
}

RobotModel RunConfig::robot_model() const {
  return robot.empty() ? RobotModel::standard() : load_robot_model_file(robot);
}

bool RunConfig::trial_uses_mpc(int trial) const {
  switch (mpc) {
    case MpcMode::Off: return false;
    case MpcMode::On: return true;
    case MpcMode::Split: return trial >= trials / 2;
  }
  return false;
}

void apply_run_config(std::istream& is, RunConfig& cfg) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::string, ConfigField> by_name;
  for (auto& f : config_fields(cfg)) by_name.emplace(f.section + "." + f.key, f);
  for (const auto& [section, node] : tree) {
    if (node.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, leaf] : node) {
      const std::string name = section + "." + key;
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw ConfigError("config: unknown key '" + name + "'");
      std::visit(Assign{name, leaf.data()}, it->second.ref);
    }
  }
}

RunConfig load_run_config(std::istream& is) {
  RunConfig cfg;
  apply_run_config(is, cfg);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  return load_run_config(f);
}

void write_run_config(std::ostream& os, const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string section;
  for (const auto& f : config_fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << std::visit(Format{}, f.ref) << '\n';
  }
}

std::string run_config_text(const RunConfig& cfg) {
  std::ostringstream os;
  write_run_config(os, cfg);
  return os.str();
}

}  // namespace rvc
