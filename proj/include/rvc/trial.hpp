#pragma once

// Closed-loop simulated trials: plant integration, rendering, supervisor
// ticks, JSON-lines logging, metrics, batch aggregation and replay.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rvc/config.hpp"
#include "rvc/render.hpp"
#include "rvc/supervisor.hpp"

namespace rvc {

struct TrialSpec {
  int index = 0;
  int eye = 0;
  std::uint64_t eye_seed = 0;
  std::uint64_t trial_seed = 0;
  Vec2 i_goal = Vec2::Zero();
  Vec3 goal_point = Vec3::Zero();  // ground truth behind the clicked pixel
  Vec3 p_rcm = Vec3::Zero();
  Vec5 q0 = Vec5::Zero();
  bool mpc_enabled = false;
};

/// Trial layout for a batch: eyes are contiguous groups of trials.
TrialSpec make_trial_spec(const RunConfig& cfg, int index);
int trials_per_eye(const RunConfig& cfg);
/// Retina texture seed used when rendering an eye.
std::uint64_t texture_seed_for_eye(std::uint64_t eye_seed);

struct TrialMetrics {
  double final_xy_error = 0.0;      // um
  double max_rcm_error = 0.0;       // um
  double contact_overshoot = 0.0;   // um
  double puncture_dx = 0.0;         // um
  double puncture_dy = 0.0;
  double puncture_dz = 0.0;
  double puncture_travel = 0.0;     // um, full distance past ground-truth puncture
  double duration = 0.0;            // s
  bool reached_contact = false;
  bool pre_contact_trigger = false;
  bool punctured = false;
  bool success = false;
  std::string final_phase;
  std::string abort_reason;
  long contact_tick = -1;
  long puncture_tick = -1;
};

/// Inputs to the metric computation, all in robot tip coordinates.
struct MetricInputs {
  double px_per_mm = 136.33;
  Vec2 i_goal = Vec2::Zero();
  std::optional<Vec2> contact_stop_px;     // projection of the tip where the robot stopped
  std::optional<Vec3> contact_stop_p;
  std::optional<Vec3> gt_contact_p;
  std::optional<Vec3> puncture_stop_p;
  std::optional<Vec3> gt_puncture_p;
  double max_rcm_error = 0.0;              // m
  double duration = 0.0;
  std::string final_phase;
  std::string abort_reason;
};

TrialMetrics compute_metrics(const MetricInputs& in);

/// Per-tick callback for live viewers; receives the frame and the report.
struct TickView {
  long tick = 0;
  double t = 0.0;
  const Frame* frame = nullptr;
  const TickReport* report = nullptr;
  const SceneState* scene = nullptr;
  const ServoSupervisor* supervisor = nullptr;
};
using TickObserver = std::function<void(const TickView&)>;

struct TrialOptions {
  std::ostream* log = nullptr;      // JSON lines, one record per tick
  std::ostream* events = nullptr;   // ground-truth scene events
  std::string frame_dir;            // PGM dump directory when non-empty
  std::string traj_dir;             // planned trajectory tables when non-empty
  TickObserver observer;
  std::function<bool()> stop_requested;
  std::optional<Mat2> initial_jacobian;  // image Jacobian carried over from an earlier calibration
};

struct TrialResult {
  TrialSpec spec;
  TrialMetrics metrics;
  std::vector<std::pair<long, std::string>> transitions;  // (tick, phase entered)
  long ticks = 0;
};

TrialResult run_trial(const RunConfig& cfg, const TrialSpec& spec, const TrialOptions& opts = {});

struct BatchSummary {
  std::vector<TrialResult> trials;
  bool any_aborted = false;
};

/// Runs all trials and writes logs plus metrics.json and metrics.txt into cfg.out.
BatchSummary run_batch(const RunConfig& cfg, std::ostream* progress = nullptr);

std::string metrics_json(const RunConfig& cfg, const std::vector<TrialResult>& trials);
std::string metrics_table(const RunConfig& cfg, const std::vector<TrialResult>& trials);

// ---------------------------------------------------------------------------
// Replay.

struct ReplayOptions {
  std::optional<double> gamma;  // what-if threshold; disables command checking
};

struct ReplayResult {
  long ticks = 0;
  std::vector<std::pair<long, std::string>> recorded;
  std::vector<std::pair<long, std::string>> replayed;
};

/// Re-renders each logged frame from the logged scene state and re-runs the
/// supervisor. Without a what-if override every frame hash, phase and command
/// must match the log exactly; the first divergence raises MismatchError.
ReplayResult replay_log(std::istream& log, const ReplayOptions& opts = {});
ReplayResult replay_log_file(const std::string& path, const ReplayOptions& opts = {});

}  // namespace rvc
