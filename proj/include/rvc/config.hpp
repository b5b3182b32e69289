#pragma once

// Run configuration: a plain-text INI file with [run], [servo], [planner] and
// [scene] sections. Unknown sections or keys are rejected.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "rvc/camera.hpp"
#include "rvc/scene.hpp"
#include "rvc/supervisor.hpp"

namespace rvc {

enum class MpcMode { Off, On, Split };

std::string to_string(MpcMode m);
MpcMode mpc_mode_from_string(const std::string& s);

struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  int trials = 24;
  int eyes = 4;
  MpcMode mpc = MpcMode::Split;  // split: second half of the batch runs with MPC
  std::string out = "rvc_out";
  bool serve = false;
  int port = 8080;
  bool dump_traj = false;
  bool allow_abort = false;
  std::string replay;
  std::string detect_dir;
  bool dump_frames = false;
  double max_trial_time = 120.0;  // s of simulated time
  double hold_time = 0.5;         // s kept after the terminal phase
  double tip_noise_px = 0.5;
  std::string robot;              // optional robot model file

  // [servo]
  double alpha = 1.0;             // px
  double beta = 0.5;
  double eta = 40.0;              // um
  double gamma = 0.18;
  double max_step = 200.0;        // um
  double min_motion_px = 0.8;
  double min_motion = 5.0;        // um
  double insertion_speed = 100.0; // um/s
  double insertion_max_travel = 800.0;  // um
  double rcm_abort = 100.0;       // um
  int tip_filter = 8;
  int ncc_radius = 8;
  double puncture_jump = 25.0;    // um
  int puncture_stride = 4;

  // [planner]
  int ntraj = 64;
  double frame_rate = 30.0;       // Hz, camera and control rate
  int mpc_replan = 3;             // ticks between re-solves
  int lookahead = 3;
  double kp = 5.0;
  double ki = 0.0;
  double kd = 0.1;
  double w_sclera = 1e4;
  double p_position = 1e6;
  double p_rotation = 1e2;
  double r_control = 1.0;

  // [scene]
  double kappa = 0.8;
  double vein_radius = 50.0;      // um
  double puncture_depth = 60.0;   // um, mean
  double puncture_sigma = 15.0;   // um
  double tilt = 2.0;              // deg
  double px_per_mm = 136.33;
  double breathing_amp = 0.0;     // um

  void validate() const;

  double dt() const { return 1.0 / frame_rate; }
  SupervisorConfig supervisor_config(bool mpc_enabled) const;
  /// Random eye geometry with this run's tissue parameters applied.
  SceneConfig scene_config(std::uint64_t eye_seed) const;
  CameraModel camera() const;
  RobotModel robot_model() const;
  bool trial_uses_mpc(int trial) const;
};

/// Reference to one configuration field, used by the INI reader/writer and
/// by the CLI to bind one flag per field.
struct ConfigField {
  std::string section;
  std::string key;
  std::variant<int*, double*, bool*, std::string*, std::uint64_t*, MpcMode*> ref;
  std::string help;
};

std::vector<ConfigField> config_fields(RunConfig& cfg);

RunConfig load_run_config(std::istream& is);
RunConfig load_run_config_file(const std::string& path);
void apply_run_config(std::istream& is, RunConfig& cfg);
void write_run_config(std::ostream& os, const RunConfig& cfg);
std::string run_config_text(const RunConfig& cfg);

}  // namespace rvc
