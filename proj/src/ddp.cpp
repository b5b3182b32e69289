#include "rvc/ddp.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace rvc {

namespace {

const Vec3 kEz(0.0, 0.0, 1.0);

bool is_psd(const Mat3& P) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (P + P.transpose()));
  return es.eigenvalues().minCoeff() >= -1e-12;
}

}  // namespace

void PlanProblem::validate() const {
  if (steps < 2) throw std::invalid_argument("plan: steps must be >= 2");
  if (!(horizon > 0.0)) throw std::invalid_argument("plan: horizon must be positive");
  inertia.validate();
}

void CostWeights::validate() const {
  if (!is_psd(P_position) || !is_psd(P_rotation)) {
    throw std::invalid_argument("weights: terminal gains must be positive semidefinite");
  }
  Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (R_control + R_control.transpose()));
  if (!(es.eigenvalues().minCoeff() > 0.0)) {
    throw std::invalid_argument("weights: control gain must be positive definite");
  }
  if (!(w_sclera >= 0.0)) throw std::invalid_argument("weights: sclera weight must be >= 0");
}

double rcm_error(const Vec3& p, const Mat3& R, const Vec3& p_rcm) {
  const Vec3 r = R * kEz;
  const Vec3 d = p_rcm - p;
  return (d - r * r.dot(d)).norm();
}

double running_cost(const RigidBodyState& x, const ControlInput& u, const CostWeights& w,
                    const Vec3& p_rcm) {
  const double e = rcm_error(x.g.p, x.g.R, p_rcm);
  return 0.5 * u.dot(w.R_control * u) + w.w_sclera * e * e;
}

double terminal_cost(const RigidBodyState& x, const PlanProblem& problem, const CostWeights& w) {
  const Vec3 dp = problem.p_goal - x.g.p;
  const Vec3 rho = log_so3(problem.R_goal.transpose() * x.g.R);
  return 0.5 * (dp.dot(w.P_position * dp) + rho.dot(w.P_rotation * rho));
}

double total_cost(const PlanProblem& problem, const CostWeights& w, const Trajectory& traj) {
  double c = 0.0;
  for (int k = 0; k < traj.steps(); ++k) {
    c += traj.dt * running_cost(traj.states[k], traj.controls[k], w, problem.p_rcm);
  }
  return c + terminal_cost(traj.states.back(), problem, w);
}

Trajectory rollout(const RigidBodyState& x0, const std::vector<ControlInput>& controls,
                   const InertiaParams& inertia, double dt) {
  Trajectory t;
  t.dt = dt;
  t.controls = controls;
  t.states.reserve(controls.size() + 1);
  t.states.push_back(x0);
  for (const auto& u : controls) t.states.push_back(step(t.states.back(), u, inertia, dt));
  return t;
}

RigidBodyState retract(const RigidBodyState& nominal, const StateTangent& dx) {
  RigidBodyState x;
  x.g.p = nominal.g.p + dx.segment<3>(0);
  x.g.R = nominal.g.R * exp_so3(Vec3(dx.segment<3>(3)));
  x.V.v = nominal.V.v + dx.segment<3>(6);
  x.V.w = nominal.V.w + dx.segment<3>(9);
  return x;
}

StateTangent local_difference(const RigidBodyState& x, const RigidBodyState& nominal) {
  StateTangent d;
  d.segment<3>(0) = x.g.p - nominal.g.p;
  d.segment<3>(3) = log_so3(nominal.g.R.transpose() * x.g.R);
  d.segment<3>(6) = x.V.v - nominal.V.v;
  d.segment<3>(9) = x.V.w - nominal.V.w;
  return d;
}

StepLinearization linearize_step(const RigidBodyState& x, const ControlInput& u,
                                 const InertiaParams& inertia, double dt) {
  using Deriv = Eigen::Matrix<double, 18, 1>;
  using AD = Eigen::AutoDiffScalar<Deriv>;
  using V3 = Eigen::Matrix<AD, 3, 1>;
  using M3 = Eigen::Matrix<AD, 3, 3>;
  using V6 = Eigen::Matrix<AD, 6, 1>;

  auto seed = [](double value, int index) { return AD(value, Deriv::Unit(index)); };

  V3 dp, dth;
  V6 V, uu;
  for (int i = 0; i < 3; ++i) {
    dp(i) = seed(0.0, i);
    dth(i) = seed(0.0, 3 + i);
  }
  const Vec6 Vn = x.V.vector();
  for (int i = 0; i < 6; ++i) {
    V(i) = seed(Vn(i), 6 + i);
    uu(i) = seed(u(i), 12 + i);
  }

  const M3 R0 = x.g.R.cast<AD>();
  const M3 R = R0 * exp_so3<AD>(dth);

  const V6 Vnext = detail::rk4_velocity<AD>(V, uu, inertia, dt);
  V3 t;
  M3 Rinc;
  detail::pose_increment<AD>(Vnext, dt, t, Rinc);
  const V3 pnext_minus_p = dp + R * t;  // p' - p0, the nominal offset is constant
  const M3 Rnext = R * Rinc;

  // Nominal successor, evaluated in plain doubles.
  const RigidBodyState xn = step(x, u, inertia, dt);
  const M3 E = xn.g.R.transpose().cast<AD>() * Rnext;  // identity at the nominal
  const M3 skew = 0.5 * (E - E.transpose());
  V3 dth_next;
  dth_next << skew(2, 1), skew(0, 2), skew(1, 0);

  Eigen::Matrix<AD, 12, 1> out;
  out.segment<3>(0) = pnext_minus_p;
  out.segment<3>(3) = dth_next;
  out.segment<6>(6) = Vnext;

  StepLinearization lin;
  for (int r = 0; r < 12; ++r) {
    const Deriv& d = out(r).derivatives();
    lin.A.row(r) = d.head<12>().transpose();
    lin.B.row(r) = d.tail<6>().transpose();
  }
  return lin;
}

StageDerivatives running_cost_derivatives(const RigidBodyState& x, const ControlInput& u,
                                          const CostWeights& w, const Vec3& p_rcm, double dt) {
  StageDerivatives s;
  s.lu = dt * (w.R_control * u);
  s.luu = dt * 0.5 * (w.R_control + w.R_control.transpose());

  if (w.w_sclera > 0.0) {
    const Vec3 r = x.g.R * kEz;
    const Vec3 d = p_rcm - x.g.p;
    const Vec3 e = d - r * r.dot(d);
    const Mat3 proj = Mat3::Identity() - r * r.transpose();
    Eigen::Matrix<double, 3, 6> Je;
    Je.leftCols<3>() = -proj;
    const Mat3 de_dr = -r.dot(d) * Mat3::Identity() - r * d.transpose();
    Je.rightCols<3>() = de_dr * (-x.g.R * hat3(kEz));
    s.lx.head<6>() = dt * 2.0 * w.w_sclera * Je.transpose() * e;
    s.lxx.topLeftCorner<6, 6>() = dt * 2.0 * w.w_sclera * Je.transpose() * Je;
  }
  return s;
}

StageDerivatives terminal_cost_derivatives(const RigidBodyState& x, const PlanProblem& problem,
                                           const CostWeights& w) {
  StageDerivatives s;
  const Mat3 Pp = 0.5 * (w.P_position + w.P_position.transpose());
  const Mat3 Pr = 0.5 * (w.P_rotation + w.P_rotation.transpose());
  s.lx.segment<3>(0) = Pp * (x.g.p - problem.p_goal);
  s.lxx.block<3, 3>(0, 0) = Pp;
  const Vec3 rho = log_so3(problem.R_goal.transpose() * x.g.R);
  const Mat3 Jinv = right_jacobian_inverse_so3(rho);
  s.lx.segment<3>(3) = Jinv.transpose() * Pr * rho;
  s.lxx.block<3, 3>(3, 3) = Jinv.transpose() * Pr * Jinv;
  return s;
}

CostGradient cost_gradient(const PlanProblem& problem, const CostWeights& w, const Trajectory& traj) {
  const int N = traj.steps();
  CostGradient g;
  g.du.resize(N);
  StateTangent lambda = terminal_cost_derivatives(traj.states[N], problem, w).lx;
  for (int k = N - 1; k >= 0; --k) {
    const auto lin = linearize_step(traj.states[k], traj.controls[k], problem.inertia, traj.dt);
    const auto c = running_cost_derivatives(traj.states[k], traj.controls[k], w, problem.p_rcm, traj.dt);
    g.du[k] = c.lu + lin.B.transpose() * lambda;
    lambda = c.lx + lin.A.transpose() * lambda;
  }
  g.dx0 = lambda;
  return g;
}

namespace {

struct Gains {
  std::vector<Vec6> k;
  std::vector<Eigen::Matrix<double, 6, 12>> K;
};

bool backward_pass(const PlanProblem& problem, const CostWeights& w, const Trajectory& nom, double mu,
                   Gains& gains) {
  const int N = nom.steps();
  gains.k.resize(N);
  gains.K.resize(N);

  const auto term = terminal_cost_derivatives(nom.states[N], problem, w);
  StateTangent Vx = term.lx;
  Mat12 Vxx = term.lxx;

  for (int k = N - 1; k >= 0; --k) {
    const auto lin = linearize_step(nom.states[k], nom.controls[k], problem.inertia, nom.dt);
    const auto c = running_cost_derivatives(nom.states[k], nom.controls[k], w, problem.p_rcm, nom.dt);
    const Mat12& A = lin.A;
    const Mat12x6& B = lin.B;

    const StateTangent Qx = c.lx + A.transpose() * Vx;
    const Vec6 Qu = c.lu + B.transpose() * Vx;
    const Mat12 Qxx = c.lxx + A.transpose() * Vxx * A;
    const Mat6 Quu = c.luu + B.transpose() * Vxx * B;
    const Eigen::Matrix<double, 6, 12> Qux = B.transpose() * Vxx * A;

    const Mat12 Vxx_reg = Vxx + mu * Mat12::Identity();
    const Mat6 Quu_reg = c.luu + B.transpose() * Vxx_reg * B;
    const Eigen::Matrix<double, 6, 12> Qux_reg = B.transpose() * Vxx_reg * A;

    Eigen::LLT<Mat6> llt(0.5 * (Quu_reg + Quu_reg.transpose()));
    if (llt.info() != Eigen::Success) return false;
    const Vec6 kff = -llt.solve(Qu);
    const Eigen::Matrix<double, 6, 12> Kfb = -llt.solve(Qux_reg);
    if (!kff.allFinite() || !Kfb.allFinite()) return false;

    Vx = Qx + Kfb.transpose() * Quu * kff + Kfb.transpose() * Qu + Qux.transpose() * kff;
    Vxx = Qxx + Kfb.transpose() * Quu * Kfb + Kfb.transpose() * Qux + Qux.transpose() * Kfb;
    Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();

    gains.k[k] = kff;
    gains.K[k] = Kfb;
  }
  return true;
}

Trajectory forward_pass(const PlanProblem& problem, const Trajectory& nom, const Gains& gains,
                        double alpha) {
  const int N = nom.steps();
  Trajectory t;
  t.dt = nom.dt;
  t.states.reserve(N + 1);
  t.controls.reserve(N);
  t.states.push_back(problem.x0);
  for (int k = 0; k < N; ++k) {
    const StateTangent dx = local_difference(t.states[k], nom.states[k]);
    const ControlInput u = nom.controls[k] + alpha * gains.k[k] + gains.K[k] * dx;
    t.controls.push_back(u);
    t.states.push_back(step(t.states[k], u, problem.inertia, t.dt));
  }
  return t;
}

}  // namespace

SolveResult solve(const PlanProblem& problem, const CostWeights& w,
                  const std::optional<Trajectory>& warm_start, const SolverOptions& opts) {
  problem.validate();
  w.validate();
  const int N = problem.steps;
  const double dt = problem.dt();

  SolveResult res;
  Trajectory nom = rollout(problem.x0, std::vector<ControlInput>(N, ControlInput::Zero()),
                           problem.inertia, dt);
  double cost = total_cost(problem, w, nom);

  if (warm_start) {
    if (warm_start->steps() != N) {
      throw std::invalid_argument("plan: warm start length does not match problem steps");
    }
    Trajectory ws = rollout(problem.x0, warm_start->controls, problem.inertia, dt);
    const double ws_cost = total_cost(problem, w, ws);
    if (std::isfinite(ws_cost) && ws_cost <= cost) {
      nom = std::move(ws);
      cost = ws_cost;
    }
  }

  if (!std::isfinite(cost)) {
    res.status = SolveStatus::NonFiniteCost;
    res.cost = cost;
    return res;
  }

  res.cost_history.push_back(cost);
  double mu = opts.mu_init;
  Gains gains;
  res.status = SolveStatus::NotConverged;

  for (int it = 0; it < opts.max_iters; ++it) {
    res.iterations = it + 1;
    if (cost < 1e-14) {
      res.status = SolveStatus::Converged;
      break;
    }

    bool accepted = false;
    while (!accepted) {
      if (!backward_pass(problem, w, nom, mu, gains)) {
        mu *= 10.0;
        if (mu > opts.mu_max) break;
        continue;
      }
      double alpha = 1.0;
      for (int h = 0; h <= opts.max_halvings; ++h, alpha *= 0.5) {
        Trajectory cand = forward_pass(problem, nom, gains, alpha);
        const double c = total_cost(problem, w, cand);
        if (std::isfinite(c) && c < cost) {
          const double rel = (cost - c) / std::max(std::abs(cost), 1e-300);
          nom = std::move(cand);
          cost = c;
          res.cost_history.push_back(cost);
          accepted = true;
          mu = std::max(mu / 2.0, opts.mu_min);
          if (rel < opts.tol_rel) res.status = SolveStatus::Converged;
          break;
        }
      }
      if (!accepted) {
        mu *= 10.0;
        if (mu > opts.mu_max) break;
      }
    }

    if (!accepted) {
      // No descent direction left at any regularization level: a numerical minimum.
      res.status = SolveStatus::Converged;
      break;
    }
    if (res.status == SolveStatus::Converged) break;
  }

  res.trajectory = std::move(nom);
  res.cost = cost;
  return res;
}

int pick_tracking_index(const Trajectory& traj, const RigidBodyState& x_now, int lookahead,
                        double rotation_weight) {
  if (traj.states.empty()) throw std::invalid_argument("tracking: empty trajectory");
  const int N = static_cast<int>(traj.states.size()) - 1;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= N; ++k) {
    const auto& s = traj.states[k];
    const double d = (s.g.p - x_now.g.p).norm() + rotation_weight * rotation_distance(s.g.R, x_now.g.R);
    if (d <= best_d) {
      best_d = d;
      best = k;
    }
  }
  return std::min(best + std::max(lookahead, 0), N);
}

Trajectory shift_trajectory(const Trajectory& traj, int shift) {
  Trajectory t = traj;
  const int N = traj.steps();
  if (N == 0 || shift <= 0) return t;
  shift = std::min(shift, N);
  t.controls.erase(t.controls.begin(), t.controls.begin() + shift);
  t.controls.resize(N, traj.controls.back());
  t.states.erase(t.states.begin(), t.states.begin() + shift);
  t.states.resize(N + 1, traj.states.back());
  return t;
}

void write_trajectory_table(std::ostream& os, const Trajectory& traj, double t0) {
  os << "# t px py pz qw qx qy qz vx vy vz wx wy wz u1 u2 u3 u4 u5 u6\n";
  const auto flags = os.flags();
  os << std::setprecision(12);
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const auto& s = traj.states[k];
    const auto q = to_quaternion(s.g.R);
    const ControlInput u = k < traj.controls.size() ? traj.controls[k] : ControlInput::Zero();
    os << t0 + traj.dt * static_cast<double>(k) << ' ' << s.g.p.x() << ' ' << s.g.p.y() << ' '
       << s.g.p.z() << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z();
    for (int i = 0; i < 3; ++i) os << ' ' << s.V.v(i);
    for (int i = 0; i < 3; ++i) os << ' ' << s.V.w(i);
    for (int i = 0; i < 6; ++i) os << ' ' << u(i);
    os << '\n';
  }
  os.flags(flags);
}

}  // namespace rvc
