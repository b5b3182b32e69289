#pragma once

#include "rvc/se3.hpp"

namespace rvc {

/// Pinhole microscope camera looking down at the retina. The controller never
/// sees these parameters; only the simulator does.
struct CameraModel {
  double fx = 6816.5;  // px
  double fy = 6816.5;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;
  Pose world_from_camera;  // camera z is the optical axis
  double tilt = 0.0;       // rad, recorded for validation

  void validate() const;

  /// Camera `working_distance` above `target`, optical axis along -z tilted
  /// by `tilt` about world x, focal length set to give `px_per_mm` at the target.
  static CameraModel standard(double tilt = 2.0 * M_PI / 180.0, double working_distance = 0.05,
                              double px_per_mm = 136.33, const Vec3& target = Vec3::Zero());

  /// Throws BehindCamera for points at or behind the image plane.
  Vec2 project(const Vec3& p_world) const;
  /// Depth along the optical axis.
  double depth(const Vec3& p_world) const;
  /// Unit ray direction in world coordinates through pixel (u, v).
  Vec3 ray(double u, double v) const;
  Vec3 center() const { return world_from_camera.p; }
};

}  // namespace rvc
