// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//
// Runs the default 24-trial batch twice into a scratch directory, replays every
// recorded log, then runs the oracle checks for the numerical modules.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "rvc/camera.hpp"
#include "rvc/ddp.hpp"
#include "rvc/dynamics.hpp"
#include "rvc/kinematics.hpp"
#include "rvc/perception.hpp"
#include "rvc/servoing.hpp"
#include "rvc/trial.hpp"
#include "test_util.hpp"

using namespace rvc;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Batch {
  BatchSummary summary;
  double seconds = 0.0;
  std::string metrics;
};

Batch run_default_batch(const fs::path& out) {
  RunConfig cfg;
  cfg.out = out.string();
  const auto t0 = std::chrono::steady_clock::now();
  Batch b;
  b.summary = run_batch(cfg);
  b.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  b.metrics = slurp(out / "metrics.json");
  return b;
}

void check_batch(const Batch& b) {
  const RunConfig cfg;
  const auto& trials = b.summary.trials;
  const double n = static_cast<double>(trials.size());

  double xy_sum = 0, xy_max = 0, rcm_max = 0, ov_sum = 0, ov_max = 0, dz_max = 0, travel_max = 0;
  int pre = 0, unpunctured = 0;
  for (const auto& t : trials) {
    const TrialMetrics& m = t.metrics;
    xy_sum += m.final_xy_error;
    xy_max = std::max(xy_max, m.final_xy_error);
    rcm_max = std::max(rcm_max, m.max_rcm_error);
    ov_sum += m.contact_overshoot;
    ov_max = std::max(ov_max, m.contact_overshoot);
    dz_max = std::max(dz_max, std::abs(m.puncture_dz));
    travel_max = std::max(travel_max, m.puncture_travel);
    if (m.pre_contact_trigger) ++pre;
    if (m.final_phase != "puncture_stopped") ++unpunctured;
  }
  const bool complete = trials.size() == 24 && unpunctured == 0;

  report("placement accuracy", complete && xy_sum / n <= 15.0 && xy_max <= 22.0 && b.seconds < 300.0,
         fmt("%zu trials, %d not stopped at puncture, final xy mean %.2f um max %.2f um, batch %.1f s",
             trials.size(), unpunctured, xy_sum / n, xy_max, b.seconds));
  report("RCM safety", complete && rcm_max <= 25.0, fmt("max rcm error %.2f um", rcm_max));
  report("contact detection", complete && pre == 0 && ov_max <= 82.0 && ov_sum / n <= 50.0,
         fmt("%d pre-contact triggers, overshoot mean %.2f um max %.2f um", pre, ov_sum / n, ov_max));
  report("puncture stopping", complete && dz_max <= 26.0 && travel_max <= cfg.vein_radius,
         fmt("max |dz| %.2f um, max travel past puncture %.2f um (vein radius %.0f um)", dz_max, travel_max,
             cfg.vein_radius));
}

void check_determinism(const Batch& a, const Batch& b, const fs::path& logs) {
  const bool same = !a.metrics.empty() && a.metrics == b.metrics;
  int replayed = 0, mismatched = 0;
  std::string first_bad;
  for (const auto& t : a.summary.trials) {
    char base[32];
    std::snprintf(base, sizeof base, "trial_%02d.jsonl", t.spec.index);
    try {
      const ReplayResult r = replay_log_file((logs / base).string());
      ++replayed;
      if (r.recorded != r.replayed || r.recorded != t.transitions) {
        ++mismatched;
        if (first_bad.empty()) first_bad = base;
      }
    } catch (const std::exception& e) {
      ++mismatched;
      if (first_bad.empty()) first_bad = std::string(base) + " (" + e.what() + ")";
    }
  }
  report("determinism", same && mismatched == 0 && replayed == 24,
         fmt("metrics.json %s (%zu bytes), %d logs replayed, %d with differing transitions%s%s",
             same ? "byte-identical" : "differs", a.metrics.size(), replayed, mismatched,
             first_bad.empty() ? "" : ", first: ", first_bad.c_str()));
}

// ---------------------------------------------------------------------------

Mat2 camera_xy_map(const CameraModel& cam, const Vec3& p) {
  Mat2 K;
  const double h = 1e-6;
  for (int a = 0; a < 2; ++a) {
    Vec3 d = Vec3::Zero();
    d(a) = h;
    K.col(a) = (cam.project(p + d) - cam.project(p - d)) / (2.0 * h);
  }
  return K;
}

void check_broyden() {
  const CameraModel cam = CameraModel::standard(0.0);
  const ServoParams sp;
  const Vec3 p0(0.3e-3, -0.2e-3, 0.5e-3);
  const Mat2 K = camera_xy_map(cam, p0);
  test::Rand rng(9);
  int worst_updates = 0;
  bool all_reached = true;
  for (int trial = 0; trial < 20; ++trial) {
    CalibJacobian c;
    Vec3 p = p0;
    Vec2 i = cam.project(p);
    int reached = -1;
    for (int s = 0; s < 200 && reached < 0; ++s) {
      const Vec2 goal = cam.project(p0) + Vec2(rng.uniform(-60, 60), rng.uniform(-60, 60));
      const Vec3 w = planar_waypoint(p, c, i, goal, sp.max_step);
      const Vec2 di = cam.project(w) - i;
      c = broyden_update(c, select_xy(w - p), di, sp.beta, sp.min_motion_m, sp.min_motion_px, sp.det_min);
      p = w;
      i += di;
      if (jacobian_direction_error_deg(c.J, K) < 5.0) reached = c.updates;
    }
    if (reached < 0) all_reached = false;
    worst_updates = std::max(worst_updates, reached);
  }

  test::Rand r2(5);
  double secant = 0.0;
  for (int k = 0; k < 1000; ++k) {
    CalibJacobian c;
    c.J << r2.uniform(-2e5, 2e5), r2.uniform(-2e5, 2e5), r2.uniform(-2e5, 2e5), r2.uniform(-2e5, 2e5);
    c.last_valid = c.J;
    const Vec2 dp(r2.uniform(-1e-4, 1e-4), r2.uniform(-1e-4, 1e-4));
    const Vec2 di(r2.uniform(-20, 20), r2.uniform(-20, 20));
    const CalibJacobian u = broyden_update(c, dp, di, 1.0, 0.0, 0.0);
    secant = std::max(secant, (u.J * dp - di).norm() / std::max(1.0, di.norm()));
  }
  report("Broyden convergence", all_reached && worst_updates <= 10 && secant < 1e-12,
         fmt("under 5 deg within at most %d gated updates over 20 runs from J = I, secant residual %.2e",
             worst_updates, secant));
}

// ---------------------------------------------------------------------------

PlanProblem random_small_problem(test::Rand& rnd, int steps) {
  PlanProblem pb;
  pb.x0.g = rnd.pose(0.01);
  pb.x0.V = BodyVelocity::from_vector(rnd.vec6(0.05));
  pb.p_goal = rnd.vec3(0.01);
  pb.R_goal = rnd.rotation();
  pb.p_rcm = rnd.vec3(0.02);
  pb.steps = steps;
  pb.horizon = 0.1 * steps;
  pb.inertia = {rnd.uniform(0.5, 2.0), Vec3(rnd.uniform(0.5, 2), rnd.uniform(0.5, 2), rnd.uniform(0.5, 2))};
  return pb;
}

Mat3 aim_z(const Vec3& from, const Vec3& target) {
  const Vec3 z = (target - from).normalized();
  Vec3 x = Vec3::UnitX() - z * z.x();
  x.normalize();
  Mat3 R;
  R.col(0) = x;
  R.col(1) = z.cross(x);
  R.col(2) = z;
  return R;
}

double lq_oracle_error() {
  PlanProblem pb;
  pb.steps = 20;
  pb.horizon = 1.0;
  pb.inertia.mass = 1.5;
  pb.x0.V.v = Vec3(1e-4, 0, -2e-4);
  pb.p_goal = Vec3(1e-3, -2e-3, 5e-4);
  CostWeights w;
  w.w_sclera = 0.0;
  w.P_rotation.setZero();
  w.P_position = Vec3(1e6, 2e6, 5e5).asDiagonal();
  const auto res = solve(pb, w);
  if (res.status != SolveStatus::Converged) return INFINITY;

  // Batch least squares over the stacked forces of a point mass.
  const int N = pb.steps;
  const double dt = pb.dt(), m = pb.inertia.mass;
  Eigen::MatrixXd G(3, 3 * N);
  for (int k = 0; k < N; ++k) G.block(0, 3 * k, 3, 3) = dt * dt * (N - k) / m * Mat3::Identity();
  const Vec3 c = pb.x0.g.p + N * dt * pb.x0.V.v;
  const Eigen::MatrixXd H = dt * Eigen::MatrixXd::Identity(3 * N, 3 * N) + G.transpose() * w.P_position * G;
  const Eigen::VectorXd U = H.ldlt().solve(G.transpose() * w.P_position * (pb.p_goal - c));
  Vec3 p = pb.x0.g.p, v = pb.x0.V.v;
  double err = 0.0;
  for (int k = 0; k < N; ++k) {
    v += dt * U.segment<3>(3 * k) / m;
    p += dt * v;
    const auto& s = res.trajectory.states[k + 1];
    err = std::max({err, (s.g.p - p).norm(), (s.V.v - v).norm()});
  }
  return err;
}

double worst_gradient_error() {
  test::Rand rnd(31);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const PlanProblem pb = random_small_problem(rnd, 3);
    CostWeights w;
    w.w_sclera = rnd.uniform(0.0, 1e4);
    std::vector<ControlInput> us;
    for (int k = 0; k < 3; ++k) us.push_back(rnd.vec6(0.01));
    const auto g = cost_gradient(pb, w, rollout(pb.x0, us, pb.inertia, pb.dt()));
    const double h = 1e-7;
    for (int k = 0; k < 3; ++k) {
      Vec6 fd;
      for (int i = 0; i < 6; ++i) {
        auto up = us, dn = us;
        up[k](i) += h;
        dn[k](i) -= h;
        fd(i) = (total_cost(pb, w, rollout(pb.x0, up, pb.inertia, pb.dt())) -
                 total_cost(pb, w, rollout(pb.x0, dn, pb.inertia, pb.dt()))) /
                (2 * h);
      }
      worst = std::max(worst, (g.du[k] - fd).norm() / std::max(fd.norm(), 1e-8));
    }
    // The linearized step feeding the backward pass, column by column.
    const InertiaParams in = pb.inertia;
    const RigidBodyState x = pb.x0;
    const auto lin = linearize_step(x, us[0], in, 0.05);
    const RigidBodyState xn = step(x, us[0], in, 0.05);
    for (int i = 0; i < 12; ++i) {
      const StateTangent e = StateTangent::Unit(i) * 1e-6;
      const StateTangent fd = (local_difference(step(retract(x, e), us[0], in, 0.05), xn) -
                               local_difference(step(retract(x, -e), us[0], in, 0.05), xn)) /
                              2e-6;
      worst = std::max(worst, (fd - lin.A.col(i)).norm() / std::max(fd.norm(), 1.0));
    }
  }
  return worst;
}

void check_ddp() {
  const double lq = lq_oracle_error();
  const double grad = worst_gradient_error();

  // Monotone cost on RCM-constrained reaches from random starts.
  test::Rand rnd(77);
  int solves = 0, increases = 0, accepted = 0;
  for (int k = 0; k < 10; ++k) {
    PlanProblem pb;
    pb.x0.g.p = Vec3(rnd.uniform(-5e-4, 5e-4), rnd.uniform(-5e-4, 5e-4), 4e-4);
    pb.p_rcm = Vec3(0, -0.01, 0.0177);
    pb.x0.g.R = aim_z(pb.x0.g.p, pb.p_rcm);
    pb.p_goal = pb.x0.g.p + Vec3(rnd.uniform(-2e-4, 2e-4), rnd.uniform(-2e-4, 2e-4), rnd.uniform(-8e-5, 0));
    pb.R_goal = aim_z(pb.p_goal, pb.p_rcm);
    const auto res = solve(pb, CostWeights{});
    ++solves;
    accepted += static_cast<int>(res.cost_history.size()) - 1;
    for (std::size_t i = 1; i < res.cost_history.size(); ++i)
      if (res.cost_history[i] > res.cost_history[i - 1]) ++increases;
  }
  report("DDP correctness", lq < 1e-6 && grad < 1e-4 && increases == 0 && accepted > 0,
         fmt("LQ oracle state error %.2e, worst derivative error %.2e over 50 problems, "
             "%d cost increases over %d accepted iterations in %d solves",
             lq, grad, increases, accepted, solves));
}

// ---------------------------------------------------------------------------

void check_dynamics() {
  const InertiaParams top{1.0, Vec3(1, 2, 3)};
  RigidBodyState x;
  x.V.w = Vec3(1, 1, 1);
  const double e0 = kinetic_energy(x.V, top);
  const double h0 = top.moments.cwiseProduct(x.V.w).norm();
  for (int i = 0; i < 10000; ++i) x = step(x, ControlInput::Zero(), top, 1e-4);
  const double de = std::abs(kinetic_energy(x.V, top) - e0) / e0;
  const double dh = std::abs(top.moments.cwiseProduct(x.V.w).norm() - h0) / h0;

  test::Rand rnd(3);
  Mat3 R = Mat3::Identity();
  for (int i = 0; i < 1000000; ++i) R = R * exp_so3(rnd.vec3(0.05));
  const double drift = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = std::abs(R.determinant() - 1.0);
  report("dynamics conservation", de < 1e-6 && dh < 1e-6 && drift < 1e-9 && det < 1e-9,
         fmt("energy %.2e, |J w| %.2e relative after 1e4 steps; orthonormality drift %.2e, det %.2e after 1e6 "
             "compositions",
             de, dh, drift, det));
}

void check_kinematics() {
  const RobotModel m = RobotModel::standard();
  const Pose g0 = forward_kinematics(m, Vec5::Zero());
  const bool exact = g0.p == m.g0.p && g0.R == m.g0.R;
  test::Rand rnd(42);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Vec5 q;
    for (int i = 0; i < kJoints; ++i) q(i) = 0.9 * rnd.uniform(m.q_min(i), m.q_max(i));
    const Mat6x5 J = body_jacobian(m, q);
    const Pose g = forward_kinematics(m, q);
    for (int i = 0; i < kJoints; ++i) {
      Vec5 qp = q;
      qp(i) += 1e-7;
      const Vec6 fd = pose_error(g, forward_kinematics(m, qp)) / 1e-7;
      worst = std::max(worst, (fd - J.col(i)).cwiseAbs().maxCoeff());
    }
  }
  report("kinematics", exact && worst < 1e-5,
         fmt("fk(0) %s g0, worst Jacobian deviation %.2e over 100 configurations", exact ? "==" : "!=", worst));
}

// ---------------------------------------------------------------------------

Frame random_frame(int w, int h, std::mt19937& g) {
  Frame f;
  f.width = w;
  f.height = h;
  f.pixels.resize(static_cast<std::size_t>(w) * h);
  std::uniform_int_distribution<int> U(0, 255);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(U(g));
  return f;
}

double ncc_direct(const Frame& f, const Template& t, int ox, int oy) {
  const int n = t.width * t.height;
  double am = 0.0, bm = 0.0;
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) {
      am += t.at(x, y);
      bm += f.at(ox + x, oy + y);
    }
  am /= n;
  bm /= n;
  double num = 0.0, da = 0.0, db = 0.0;
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) {
      const double a = t.at(x, y) - am, b = f.at(ox + x, oy + y) - bm;
      num += a * b;
      da += a * a;
      db += b * b;
    }
  return db == 0.0 ? 0.0 : num / std::sqrt(da * db);
}

void check_ncc() {
  std::mt19937 g(11);
  std::uniform_int_distribution<int> U(0, 255);
  double worst = 0.0;
  long entries = 0;
  for (int tw = 1; tw <= 10; ++tw)
    for (int th = 1; th <= 10; ++th) {
      if (tw * th < 2) continue;
      for (int fw : {tw, tw + 3, 20})
        for (int fh : {th, th + 5, 20}) {
          const Frame f = random_frame(fw, fh, g);
          Template t;
          t.width = tw;
          t.height = th;
          t.pixels.resize(static_cast<std::size_t>(tw) * th);
          for (auto& p : t.pixels) p = U(g);
          t.pixels[0] += 1.0;
          const NccResult r = ncc_map(f, t);
          for (int y = 0; y < r.height; ++y)
            for (int x = 0; x < r.width; ++x) {
              worst = std::max(worst, std::abs(r.at(x, y) - ncc_direct(f, t, x, y)));
              ++entries;
            }
        }
    }

  const Frame f = random_frame(120, 90, g);
  const NccResult self = ncc_map(f, capture_template(f, Vec2(70, 40), 16, 12));
  const double self_err = std::abs(self.max_score - 1.0);
  const bool self_at = self.argmax == Eigen::Vector2i(62, 34);

  // Paste a template under gain 2 and offset 40.
  Frame h = random_frame(80, 60, g);
  Template t;
  t.width = t.height = 10;
  t.pixels.resize(100);
  for (auto& p : t.pixels) p = std::floor(U(g) / 3.0);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x)
      h.pixels[static_cast<std::size_t>(25 + y) * 80 + 31 + x] = static_cast<std::uint8_t>(2.0 * t.at(x, y) + 40.0);
  const NccResult aff = ncc_map(h, t);
  const double aff_err = std::abs(aff.max_score - 1.0);
  const bool aff_at = aff.argmax == Eigen::Vector2i(31, 25);

  report("NCC exactness",
         worst <= 1e-12 && self_err < 1e-12 && self_at && aff_err < 1e-12 && aff_at,
         fmt("%ld entries against the direct sum, worst %.2e; self-match 1 %+.1e; gain/offset copy 1 %+.1e%s",
             entries, worst, self.max_score - 1.0, aff.max_score - 1.0,
             self_at && aff_at ? "" : " (peak misplaced)"));
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / ("rvc_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  try {
    const Batch a = run_default_batch(scratch / "a");
    check_batch(a);
    const Batch b = run_default_batch(scratch / "b");
    check_determinism(a, b, scratch / "a");
  } catch (const std::exception& e) {
    report("batch", false, e.what());
  }
  check_broyden();
  check_ddp();
  check_dynamics();
  check_kinematics();
  check_ncc();
  fs::remove_all(scratch);
  std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria fail") << std::endl;
  return failures == 0 ? 0 : 1;
}
