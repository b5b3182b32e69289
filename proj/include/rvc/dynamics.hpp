#pragma once

// Fully actuated rigid body on SE(3) with body-frame force/torque inputs.

#include "rvc/se3.hpp"

namespace rvc {

struct InertiaParams {
  double mass = 1.0;
  Vec3 moments = Vec3::Ones();  // principal moments J1, J2, J3

  void validate() const;
};

/// u(0..2): body-frame force, u(3..5): body-frame torque.
using ControlInput = Vec6;

struct RigidBodyState {
  Pose g;
  BodyVelocity V;
};

struct StateDerivative {
  Mat4 pose_rate;  // g * hat6(V)
  Vec6 accel;      // (v_dot, w_dot)
};

StateDerivative state_derivative(const RigidBodyState& x, const ControlInput& u,
                                 const InertiaParams& inertia);

/// One step: velocity advanced by RK4 on the Newton-Euler equations with u held
/// constant, then the pose advanced by the group exponential of the new velocity.
RigidBodyState step(const RigidBodyState& x, const ControlInput& u, const InertiaParams& inertia,
                    double dt);

double kinetic_energy(const BodyVelocity& V, const InertiaParams& inertia);

namespace detail {

template <typename S>
Eigen::Matrix<S, 6, 1> body_accel(const Eigen::Matrix<S, 6, 1>& V, const Eigen::Matrix<S, 6, 1>& u,
                                  const InertiaParams& in) {
  const double m = in.mass;
  const double J1 = in.moments(0), J2 = in.moments(1), J3 = in.moments(2);
  Eigen::Matrix<S, 6, 1> a;
  a(0) = u(0) / m;
  a(1) = u(1) / m;
  a(2) = u(2) / m;
  a(3) = ((J2 - J3) * V(4) * V(5) + u(3)) / J1;
  a(4) = ((J3 - J1) * V(3) * V(5) + u(4)) / J2;
  a(5) = ((J1 - J2) * V(3) * V(4) + u(5)) / J3;
  return a;
}

template <typename S>
Eigen::Matrix<S, 6, 1> rk4_velocity(const Eigen::Matrix<S, 6, 1>& V, const Eigen::Matrix<S, 6, 1>& u,
                                    const InertiaParams& in, double dt) {
  const Eigen::Matrix<S, 6, 1> k1 = body_accel<S>(V, u, in);
  const Eigen::Matrix<S, 6, 1> k2 = body_accel<S>((V + (0.5 * dt) * k1).eval(), u, in);
  const Eigen::Matrix<S, 6, 1> k3 = body_accel<S>((V + (0.5 * dt) * k2).eval(), u, in);
  const Eigen::Matrix<S, 6, 1> k4 = body_accel<S>((V + dt * k3).eval(), u, in);
  return V + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Pose increment exp(hat6(V) dt) as (translation, rotation).
template <typename S>
void pose_increment(const Eigen::Matrix<S, 6, 1>& V, double dt, Eigen::Matrix<S, 3, 1>& t,
                    Eigen::Matrix<S, 3, 3>& Rinc) {
  const Eigen::Matrix<S, 3, 1> phi = V.template tail<3>() * S(dt);
  const Eigen::Matrix<S, 3, 1> vdt = V.template head<3>() * S(dt);
  Rinc = exp_so3<S>(phi);
  t = left_jacobian_so3<S>(phi) * vdt;
}

}  // namespace detail

}  // namespace rvc
