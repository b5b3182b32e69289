#include "rvc/camera.hpp"

#include <cmath>
#include <stdexcept>

#include "rvc/errors.hpp"

namespace rvc {

void CameraModel::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("camera: focal length must be positive");
  if (!(std::abs(tilt) < 10.0 * M_PI / 180.0)) throw std::invalid_argument("camera: tilt must stay below 10 degrees");
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: empty image");
  if (!is_rotation(world_from_camera.R, 1e-9)) throw std::invalid_argument("camera: rotation not orthonormal");
}

CameraModel CameraModel::standard(double tilt, double working_distance, double px_per_mm,
                                  const Vec3& target) {
  CameraModel c;
  const double f = px_per_mm * 1000.0 * working_distance;
  c.fx = c.fy = f;
  c.tilt = tilt;
  const Mat3 down = Vec3(1.0, -1.0, -1.0).asDiagonal();
  c.world_from_camera.R = exp_so3(Vec3(tilt, 0.0, 0.0)) * down;
  c.world_from_camera.p = target - working_distance * c.world_from_camera.R.col(2);
  c.validate();
  return c;
}

double CameraModel::depth(const Vec3& p_world) const {
  return world_from_camera.R.col(2).dot(p_world - world_from_camera.p);
}

Vec2 CameraModel::project(const Vec3& p_world) const {
  const Vec3 pc = world_from_camera.R.transpose() * (p_world - world_from_camera.p);
  if (!(pc.z() > 1e-9)) throw BehindCamera("camera: point is not in front of the camera");
  return Vec2(fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy);
}

Vec3 CameraModel::ray(double u, double v) const {
  const Vec3 dc((u - cx) / fx, (v - cy) / fy, 1.0);
  return world_from_camera.R * dc.normalized();
}

}  // namespace rvc
