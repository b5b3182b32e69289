#include "rvc/dynamics.hpp"

#include <stdexcept>

namespace rvc {

void InertiaParams::validate() const {
  if (!(mass > 0.0) || !(moments.minCoeff() > 0.0)) {
    throw std::invalid_argument("inertia: mass and principal moments must be positive");
  }
}

StateDerivative state_derivative(const RigidBodyState& x, const ControlInput& u,
                                 const InertiaParams& inertia) {
  return {x.g.matrix() * hat6(x.V), detail::body_accel<double>(x.V.vector(), u, inertia)};
}

RigidBodyState step(const RigidBodyState& x, const ControlInput& u, const InertiaParams& inertia,
                    double dt) {
  const Vec6 V = detail::rk4_velocity<double>(x.V.vector(), u, inertia, dt);
  Vec3 t;
  Mat3 Rinc;
  detail::pose_increment<double>(V, dt, t, Rinc);
  RigidBodyState out;
  out.g.p = x.g.p + x.g.R * t;
  out.g.R = x.g.R * Rinc;
  out.V = BodyVelocity::from_vector(V);
  return out;
}

double kinetic_energy(const BodyVelocity& V, const InertiaParams& inertia) {
  return 0.5 * inertia.mass * V.v.squaredNorm() + 0.5 * V.w.dot(inertia.moments.cwiseProduct(V.w));
}

}  // namespace rvc
