#pragma once

// Differential dynamic programming for the tool-tip rigid body with a soft
// remote-center-of-motion penalty.
//
// Linearization uses local exponential coordinates around the nominal
// trajectory: dx = (dp, dtheta, dv, dw) with p = p0 + dp, R = R0 Exp(dtheta),
// V = V0 + (dv, dw).

#include <iosfwd>
#include <optional>
#include <vector>

#include "rvc/dynamics.hpp"

namespace rvc {

using StateTangent = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Mat12x6 = Eigen::Matrix<double, 12, 6>;

struct PlanProblem {
  RigidBodyState x0;
  Vec3 p_goal = Vec3::Zero();
  Mat3 R_goal = Mat3::Identity();
  Vec3 p_rcm = Vec3::Zero();
  double horizon = 64.0 / 30.0;  // seconds
  int steps = 64;
  InertiaParams inertia;

  double dt() const { return horizon / steps; }
  void validate() const;
};

struct CostWeights {
  Mat3 P_position = 1e6 * Mat3::Identity();
  Mat3 P_rotation = 1e2 * Mat3::Identity();
  Mat6 R_control = Mat6::Identity();
  double w_sclera = 1e4;

  void validate() const;
};

struct Trajectory {
  std::vector<RigidBodyState> states;  // steps + 1
  std::vector<ControlInput> controls;  // steps
  double dt = 0.0;

  int steps() const { return static_cast<int>(controls.size()); }
  bool empty() const { return states.empty(); }
};

struct SolverOptions {
  int max_iters = 100;
  double tol_rel = 1e-6;
  double mu_init = 1e-6;
  double mu_min = 1e-9;
  double mu_max = 1e10;
  int max_halvings = 10;  // step scales 1, 1/2, ..., 2^-10
};

enum class SolveStatus { Converged, NotConverged, NonFiniteCost };

struct SolveResult {
  Trajectory trajectory;  // best-so-far unless status == NonFiniteCost
  SolveStatus status = SolveStatus::NotConverged;
  int iterations = 0;
  double cost = 0.0;
  std::vector<double> cost_history;  // cost after each accepted iteration, initial first
};

/// Residual norm of the sclera constraint: distance from p_rcm to the tool axis line.
double rcm_error(const Vec3& p, const Mat3& R, const Vec3& p_rcm);

/// Integrand of the running cost (not yet multiplied by dt).
double running_cost(const RigidBodyState& x, const ControlInput& u, const CostWeights& w,
                    const Vec3& p_rcm);
double terminal_cost(const RigidBodyState& x, const PlanProblem& problem, const CostWeights& w);

/// sum_k dt * running_cost(x_k, u_k) + terminal_cost(x_N)
double total_cost(const PlanProblem& problem, const CostWeights& w, const Trajectory& traj);

Trajectory rollout(const RigidBodyState& x0, const std::vector<ControlInput>& controls,
                   const InertiaParams& inertia, double dt);

SolveResult solve(const PlanProblem& problem, const CostWeights& w,
                  const std::optional<Trajectory>& warm_start = std::nullopt,
                  const SolverOptions& opts = {});

/// Closest pose (position error + rotation_weight * geodesic angle) plus lookahead,
/// clamped to the final index. Ties resolve to the later index.
int pick_tracking_index(const Trajectory& traj, const RigidBodyState& x_now, int lookahead,
                        double rotation_weight = 0.02);

/// Warm start for a re-solve `shift` steps later: drop the first controls and
/// repeat the last one.
Trajectory shift_trajectory(const Trajectory& traj, int shift);

void write_trajectory_table(std::ostream& os, const Trajectory& traj, double t0 = 0.0);

// ---------------------------------------------------------------------------
// Derivative machinery, exposed for verification.

RigidBodyState retract(const RigidBodyState& nominal, const StateTangent& dx);
StateTangent local_difference(const RigidBodyState& x, const RigidBodyState& nominal);

struct StepLinearization {
  Mat12 A;
  Mat12x6 B;
};
StepLinearization linearize_step(const RigidBodyState& x, const ControlInput& u,
                                 const InertiaParams& inertia, double dt);

struct StageDerivatives {
  StateTangent lx = StateTangent::Zero();
  Mat12 lxx = Mat12::Zero();
  Vec6 lu = Vec6::Zero();
  Mat6 luu = Mat6::Zero();
};
/// Derivatives of dt * running_cost. Gradients are exact; the sclera Hessian is Gauss-Newton.
StageDerivatives running_cost_derivatives(const RigidBodyState& x, const ControlInput& u,
                                          const CostWeights& w, const Vec3& p_rcm, double dt);
StageDerivatives terminal_cost_derivatives(const RigidBodyState& x, const PlanProblem& problem,
                                           const CostWeights& w);

struct CostGradient {
  std::vector<Vec6> du;  // dJ/du_k
  StateTangent dx0;      // dJ/d(dx_0) with controls held fixed
};
/// First-order adjoint sweep over the same linearizations the backward pass uses.
CostGradient cost_gradient(const PlanProblem& problem, const CostWeights& w, const Trajectory& traj);

}  // namespace rvc
