#pragma once

// Ground-truth surgical scene: a gently undulating retina patch, a vein tube
// resting on it, and a bent needle whose tip deflects while pressed into
// tissue and springs forward when the vein wall gives way.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rvc/se3.hpp"

namespace rvc {

struct SurfaceWave {
  Vec2 k;         // rad/m
  double amp;     // m
  double phase;   // rad
};

struct NeedleConfig {
  double tip_length = 400e-6;    // elbow to tip
  double bend_deg = 45.0;        // tip segment bent toward the insertion direction
  double tip_diameter = 12e-6;
  double elbow_diameter = 40e-6;
  double shaft_diameter = 90e-6;
  double shaft_length = 3e-3;    // visible part above the elbow
};

struct SceneConfig {
  std::vector<SurfaceWave> retina;   // height field, sum of waves
  std::vector<Vec2> vein_centerline; // polyline in XY, at least two points
  double vein_radius = 50e-6;
  double wall_thickness = 8e-6;
  double puncture_depth_mean = 60e-6;
  double puncture_depth_sigma = 15e-6;
  double puncture_depth_min = 30e-6;
  double puncture_depth_max = 90e-6;
  double kappa = 0.8;                // deflection per unit indentation
  double insert_align_cos = 0.9;     // motion counts as insertion above this alignment
  double breathing_amp = 0.0;        // m, retina z oscillation, off by default
  double breathing_hz = 0.25;
  NeedleConfig needle;

  void validate() const;

  /// Retina undulation plus one vein running roughly along +y, drawn from `seed`.
  static SceneConfig random_eye(std::uint64_t seed);
};

/// Closest point on the vein centerline to (x, y).
struct VeinQuery {
  double distance;  // lateral, m
  Vec2 point;
  Vec2 tangent;
};
VeinQuery query_vein(const SceneConfig& cfg, const Vec2& xy);

double retina_height(const SceneConfig& cfg, const Vec2& xy, double t = 0.0);
/// Tissue top: the retina, or the upper half of the vein tube where it lies.
double surface_height(const SceneConfig& cfg, const Vec2& xy, double t = 0.0);
Vec3 surface_normal(const SceneConfig& cfg, const Vec2& xy, double t = 0.0);
/// Point on top of the vein at arclength fraction s in [0, 1] of the centerline.
Vec3 vein_top_point(const SceneConfig& cfg, double s);

/// Needle polyline pieces for a tool pose whose origin is the tip and whose
/// z axis runs up the shaft.
struct NeedleGeometry {
  Vec3 tip;
  Vec3 elbow;
  Vec3 shaft_top;
  Vec3 tip_axis;  // unit, elbow to tip
};
NeedleGeometry needle_geometry(const NeedleConfig& cfg, const Pose& tool);
/// Elbow-to-tip direction in tool coordinates.
Vec3 tip_axis_in_tool(const NeedleConfig& cfg);

enum class ScenePhase { Free, InContact, Inserting, Punctured };
std::string to_string(ScenePhase p);
ScenePhase scene_phase_from_string(const std::string& s);

struct SceneState {
  Pose needle_base_pose;               // commanded tool pose
  Vec3 tip_deflection = Vec3::Zero();
  ScenePhase phase = ScenePhase::Free;
  double indentation = 0.0;
  double time = 0.0;
  double puncture_depth = 0.0;         // indentation at which the wall gives, sampled at contact
  Vec3 contact_axis = Vec3::Zero();
  std::optional<Vec3> contact_p;
  std::optional<Vec3> puncture_p;

  /// Tip as it appears: the commanded tip plus the elastic deflection.
  Vec3 visible_tip() const { return needle_base_pose.p + tip_deflection; }
};

struct SceneEvent {
  double t;
  std::string event;  // "contact", "insertion", "liftoff", "puncture"
  Vec3 p;
};

SceneState initial_scene(const Pose& tool, double t = 0.0);

/// Advance the tissue model to the newly commanded tool pose at time t.
SceneState scene_step(const SceneState& state, const Pose& commanded_tip, const SceneConfig& cfg,
                      std::mt19937_64& rng, double t, std::vector<SceneEvent>* events = nullptr);

std::string event_to_json(const SceneEvent& e);

}  // namespace rvc
