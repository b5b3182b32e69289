#include "rvc/trial.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "rvc/errors.hpp"

namespace rvc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t texture_seed(std::uint64_t eye_seed) { return mix(eye_seed ^ 0x74657874ULL); }
std::uint64_t detector_seed(std::uint64_t trial_seed) { return mix(trial_seed ^ 0x74697073ULL); }

template <typename Derived>
json to_json_vec(const Eigen::MatrixBase<Derived>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> from_json_vec(const json& a) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(N)) throw std::runtime_error("log: bad vector");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v(i) = a.at(i).get<double>();
  return v;
}

json rotation_json(const Mat3& R) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(R(r, c));
  return a;
}

Mat3 rotation_from_json(const json& a) {
  const auto v = from_json_vec<9>(a);
  return Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(v.data());
}

json optional_vec(const std::optional<Vec2>& v) { return v ? to_json_vec(*v) : json(nullptr); }
json optional_vec(const std::optional<Vec3>& v) { return v ? to_json_vec(*v) : json(nullptr); }
json optional_num(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json spec_json(const TrialSpec& s) {
  return {{"index", s.index},          {"eye", s.eye},
          {"eye_seed", s.eye_seed},    {"trial_seed", s.trial_seed},
          {"i_goal", to_json_vec(s.i_goal)}, {"goal_point", to_json_vec(s.goal_point)},
          {"p_rcm", to_json_vec(s.p_rcm)},   {"q0", to_json_vec(s.q0)},
          {"mpc", s.mpc_enabled}};
}

TrialSpec spec_from_json(const json& j) {
  TrialSpec s;
  s.index = j.at("index").get<int>();
  s.eye = j.at("eye").get<int>();
  s.eye_seed = j.at("eye_seed").get<std::uint64_t>();
  s.trial_seed = j.at("trial_seed").get<std::uint64_t>();
  s.i_goal = from_json_vec<2>(j.at("i_goal"));
  s.goal_point = from_json_vec<3>(j.at("goal_point"));
  s.p_rcm = from_json_vec<3>(j.at("p_rcm"));
  s.q0 = from_json_vec<5>(j.at("q0"));
  s.mpc_enabled = j.at("mpc").get<bool>();
  return s;
}

/// Everything the simulation needs for one trial, shared by the runner and replay.
struct TrialWorld {
  SceneConfig scene;
  CameraModel camera;
  RobotModel robot;
  SceneRenderer renderer;
  ServoSupervisor supervisor;

  TrialWorld(const RunConfig& cfg, const TrialSpec& spec, const std::optional<Mat2>& J0,
             std::optional<double> gamma = std::nullopt)
      : scene(cfg.scene_config(spec.eye_seed)),
        camera(cfg.camera()),
        robot(cfg.robot_model()),
        renderer(scene, camera, texture_seed(spec.eye_seed)),
        supervisor(robot, make_supervisor_config(cfg, spec, scene, gamma),
                   std::make_unique<OracleTipDetector>(cfg.tip_noise_px, detector_seed(spec.trial_seed)),
                   nullptr, J0 ? CalibJacobian::seeded(*J0) : CalibJacobian{}) {
    supervisor.start(spec.i_goal, spec.p_rcm);
  }

  static SupervisorConfig make_supervisor_config(const RunConfig& cfg, const TrialSpec& spec,
                                                 const SceneConfig& scene, std::optional<double> gamma) {
    SupervisorConfig s = cfg.supervisor_config(spec.mpc_enabled);
    s.needle = scene.needle;
    if (gamma) s.gamma = *gamma;
    return s;
  }
};

json tick_json(long tick, double t, const Vec5& q, const SceneState& st, const Frame& frame,
               const TickReport& rep, const ServoSupervisor& sup, const std::string& external_abort) {
  const auto& J = sup.jacobian().J;
  json j = {
      {"type", "tick"},
      {"tick", tick},
      {"t", t},
      {"q", to_json_vec(q)},
      {"scene",
       {{"p", to_json_vec(st.needle_base_pose.p)},
        {"R", rotation_json(st.needle_base_pose.R)},
        {"deflection", to_json_vec(st.tip_deflection)},
        {"phase", to_string(st.phase)},
        {"indentation", st.indentation}}},
      {"frame_hash", hash_hex(frame_hash(frame))},
      {"tip", optional_vec(rep.tip)},
      {"tip_filtered", optional_vec(rep.tip_filtered)},
      {"ncc_max", optional_num(rep.ncc_max)},
      {"contact_score", optional_num(rep.contact_score)},
      {"verdict", {{"p_c", rep.verdict.p_c}, {"p_vp", rep.verdict.p_vp}, {"triggered", rep.verdict.triggered}}},
      {"phase", to_string(rep.phase)},
      {"qdot", to_json_vec(rep.qdot)},
      {"rcm_error_um", rep.rcm_error * 1e6},
      {"pixel_error", rep.tip_filtered ? json((*rep.tip_filtered - sup.goal()).norm()) : json(nullptr)},
      {"motion_done", rep.motion_done},
      {"waypoint", optional_vec(rep.waypoint)},
      {"J", {J(0, 0), J(0, 1), J(1, 0), J(1, 1)}},
      {"J_updates", sup.jacobian().updates},
  };
  if (!rep.note.empty()) j["note"] = rep.note;
  if (!external_abort.empty()) j["external_abort"] = external_abort;
  return j;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

std::string fmt(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// Sets the two wrist joints so the bevel points along the vein (same sense as
// the home heading) while keeping the home descent angle.
void align_needle_with_vein(const RobotModel& robot, const NeedleConfig& needle, const Vec2& tangent, Vec5& q) {
  const auto angles = [&](const Vec5& qq) {
    const Vec3 a = forward_kinematics(robot, qq).R * tip_axis_in_tool(needle);
    return Vec2(std::atan2(a.y(), a.x()), std::asin(std::clamp(a.z(), -1.0, 1.0)));
  };
  const Vec2 home = angles(q);
  Vec2 dir = tangent.normalized();
  if (dir.dot(Vec2(std::cos(home.x()), std::sin(home.x()))) < 0.0) dir = -dir;
  const Vec2 target(std::atan2(dir.y(), dir.x()), home.y());
  const auto residual = [&](const Vec5& qq) {
    Vec2 r = angles(qq) - target;
    r.x() = std::remainder(r.x(), 2.0 * M_PI);
    return r;
  };
  for (int it = 0; it < 30; ++it) {
    const Vec2 r = residual(q);
    if (r.norm() < 1e-12) break;
    Mat2 J;
    const double h = 1e-7;
    for (int k = 0; k < 2; ++k) {
      Vec5 qh = q;
      qh(3 + k) += h;
      J.col(k) = (residual(qh) - r) / h;
    }
    q.segment<2>(3) -= J.fullPivLu().solve(r);
  }
  const Vec2 r = residual(q);
  if (!(r.norm() < 1e-6) || (q.array() < robot.q_min.array()).any() || (q.array() > robot.q_max.array()).any())
    throw std::runtime_error("trial: cannot align the needle with the vein");
}

}  // namespace

std::uint64_t texture_seed_for_eye(std::uint64_t eye_seed) { return texture_seed(eye_seed); }

int trials_per_eye(const RunConfig& cfg) { return (cfg.trials + cfg.eyes - 1) / cfg.eyes; }

TrialSpec make_trial_spec(const RunConfig& cfg, int index) {
  TrialSpec s;
  s.index = index;
  s.eye = std::min(index / trials_per_eye(cfg), cfg.eyes - 1);
  s.eye_seed = mix(cfg.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(s.eye) + 1);
  s.trial_seed = mix(mix(cfg.seed) ^ (static_cast<std::uint64_t>(index) + 0x1000));
  s.mpc_enabled = cfg.trial_uses_mpc(index);

  const SceneConfig scene = cfg.scene_config(s.eye_seed);
  const CameraModel cam = cfg.camera();
  const RobotModel robot = cfg.robot_model();
  std::mt19937_64 rng(s.trial_seed ^ 0x676f616cULL);
  std::uniform_real_distribution<double> U(0.0, 1.0);

  s.goal_point = vein_top_point(scene, 0.4 + 0.2 * U(rng));
  s.i_goal = cam.project(s.goal_point);

  const double r = 0.3e-3 + 0.5e-3 * U(rng);
  const double a = 2.0 * M_PI * U(rng);
  const double h = 250e-6 + 150e-6 * U(rng);
  const Vec3 start(s.goal_point.x() + r * std::cos(a), s.goal_point.y() + r * std::sin(a), s.goal_point.z() + h);

  s.q0.setZero();
  align_needle_with_vein(robot, scene.needle, query_vein(scene, s.goal_point.head<2>()).tangent, s.q0);
  const Pose g_rot = forward_kinematics(robot, s.q0);
  s.q0.head<3>() += start - g_rot.p;
  const Pose g = forward_kinematics(robot, s.q0);
  s.p_rcm = g.p + 0.02 * g.R.col(2);
  return s;
}

TrialMetrics compute_metrics(const MetricInputs& in) {
  TrialMetrics m;
  const double um_per_px = 1e3 / in.px_per_mm;
  m.final_phase = in.final_phase;
  m.abort_reason = in.abort_reason;
  m.duration = in.duration;
  m.max_rcm_error = in.max_rcm_error * 1e6;
  if (in.contact_stop_px) m.final_xy_error = (*in.contact_stop_px - in.i_goal).norm() * um_per_px;
  if (in.contact_stop_p) {
    m.reached_contact = in.gt_contact_p.has_value();
    m.pre_contact_trigger = !in.gt_contact_p.has_value();
    if (in.gt_contact_p) m.contact_overshoot = (*in.contact_stop_p - *in.gt_contact_p).norm() * 1e6;
  }
  if (in.puncture_stop_p && in.gt_puncture_p) {
    const Vec3 d = (*in.puncture_stop_p - *in.gt_puncture_p) * 1e6;
    m.puncture_dx = std::abs(d.x());
    m.puncture_dy = std::abs(d.y());
    m.puncture_dz = std::abs(d.z());
    m.puncture_travel = d.norm();
    m.punctured = true;
  }
  m.success = m.final_phase == to_string(SupervisorPhase::PunctureStopped) && m.reached_contact &&
              !m.pre_contact_trigger && m.punctured;
  return m;
}

TrialResult run_trial(const RunConfig& cfg, const TrialSpec& spec, const TrialOptions& opts) {
  TrialWorld w(cfg, spec, opts.initial_jacobian);
  ServoSupervisor& sup = w.supervisor;
  const double dt = cfg.dt();
  std::mt19937_64 rng(spec.trial_seed);

  TrialResult result;
  result.spec = spec;
  result.transitions.emplace_back(0, to_string(sup.phase()));

  if (opts.log) {
    json header{{"type", "header"}, {"version", 1}, {"config", run_config_text(cfg)}, {"trial", spec_json(spec)}};
    if (opts.initial_jacobian) header["J0"] = json{(*opts.initial_jacobian)(0, 0), (*opts.initial_jacobian)(0, 1), (*opts.initial_jacobian)(1, 0), (*opts.initial_jacobian)(1, 1)};
    *opts.log << header.dump() << '\n';
  }
  if (!opts.frame_dir.empty()) fs::create_directories(opts.frame_dir);
  if (!opts.traj_dir.empty()) fs::create_directories(opts.traj_dir);

  Vec5 q = spec.q0, qdot = Vec5::Zero();
  SceneState st = initial_scene(forward_kinematics(w.robot, q), 0.0);
  std::vector<SceneEvent> events;

  MetricInputs mi;
  mi.px_per_mm = cfg.px_per_mm;
  mi.i_goal = spec.i_goal;
  SupervisorPhase prev = sup.phase();
  std::optional<double> hold_until;
  int plans_dumped = 0;
  long tick = 0;
  double t = 0.0;

  for (;; ++tick) {
    t = tick * dt;
    std::string external;
    if (tick > 0) {
      const Vec5 q_next = q + qdot * dt;
      if (within_limits(w.robot, q_next)) {
        q = q_next;
      } else {
        external = "joint limit";
      }
    }
    if (external.empty() && opts.stop_requested && opts.stop_requested()) external = "operator stop";
    if (external.empty() && !is_terminal(sup.phase()) && t > cfg.max_trial_time) external = "timeout";
    if (!external.empty()) sup.abort(external);

    const Pose g = forward_kinematics(w.robot, q);
    events.clear();
    st = scene_step(st, g, w.scene, rng, t, &events);
    if (opts.events)
      for (const auto& e : events) *opts.events << event_to_json(e) << '\n';
    const Frame frame = w.renderer.render(st, tick, t);
    const TickReport rep = sup.tick(t, frame, q);
    qdot = rep.qdot;

    if (!is_stopped(rep.phase) || rep.phase == SupervisorPhase::ContactStopped)
      mi.max_rcm_error = std::max(mi.max_rcm_error, rep.rcm_error);

    if (rep.phase != prev) {
      result.transitions.emplace_back(tick, to_string(rep.phase));
      if (rep.phase == SupervisorPhase::ContactStopped) {
        mi.contact_stop_p = sup.contact_stop_pose()->p;
        mi.contact_stop_px = w.camera.project(*mi.contact_stop_p);
        if (st.phase != ScenePhase::Free && st.contact_p) mi.gt_contact_p = st.contact_p;
        result.metrics.contact_tick = tick;
      }
      if (rep.phase == SupervisorPhase::PunctureStopped) {
        mi.puncture_stop_p = sup.puncture_stop_pose()->p;
        result.metrics.puncture_tick = tick;
      }
      prev = rep.phase;
    }
    if (st.puncture_p) mi.gt_puncture_p = st.puncture_p;

    if (!opts.traj_dir.empty() && rep.waypoint && sup.plan()) {
      char name[64];
      std::snprintf(name, sizeof name, "trial_%02d_plan_%03d.txt", spec.index, plans_dumped++);
      std::ofstream f(fs::path(opts.traj_dir) / name);
      write_trajectory_table(f, *sup.plan(), t);
    }
    if (!opts.frame_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "frame_%06ld.pgm", tick);
      write_pgm_file((fs::path(opts.frame_dir) / name).string(), frame);
    }
    if (opts.log) *opts.log << tick_json(tick, t, q, st, frame, rep, sup, external).dump() << '\n';
    if (opts.observer) opts.observer({tick, t, &frame, &rep, &st, &sup});

    if (is_terminal(rep.phase)) {
      if (rep.phase == SupervisorPhase::Aborted) break;
      if (!hold_until) hold_until = t + cfg.hold_time;
      if (t >= *hold_until) break;
    }
  }

  mi.duration = t;
  mi.final_phase = to_string(sup.phase());
  mi.abort_reason = sup.abort_reason();
  const long contact_tick = result.metrics.contact_tick, puncture_tick = result.metrics.puncture_tick;
  result.metrics = compute_metrics(mi);
  result.metrics.contact_tick = contact_tick;
  result.metrics.puncture_tick = puncture_tick;
  result.ticks = tick + 1;
  return result;
}

// ---------------------------------------------------------------------------

namespace {

json metrics_entry(const TrialResult& r) {
  const auto& m = r.metrics;
  return {{"trial", r.spec.index},
          {"eye", r.spec.eye},
          {"mpc", r.spec.mpc_enabled},
          {"final_xy_error_um", m.final_xy_error},
          {"max_rcm_error_um", m.max_rcm_error},
          {"contact_overshoot_um", m.contact_overshoot},
          {"puncture_dx_um", m.puncture_dx},
          {"puncture_dy_um", m.puncture_dy},
          {"puncture_dz_um", m.puncture_dz},
          {"puncture_travel_um", m.puncture_travel},
          {"duration_s", m.duration},
          {"reached_contact", m.reached_contact},
          {"pre_contact_trigger", m.pre_contact_trigger},
          {"punctured", m.punctured},
          {"success", m.success},
          {"final_phase", m.final_phase},
          {"abort_reason", m.abort_reason},
          {"contact_tick", m.contact_tick},
          {"puncture_tick", m.puncture_tick},
          {"ticks", r.ticks}};
}

struct FieldStats {
  const char* key;
  double TrialMetrics::*field;
};

constexpr FieldStats kStatFields[] = {
    {"final_xy_error_um", &TrialMetrics::final_xy_error},
    {"max_rcm_error_um", &TrialMetrics::max_rcm_error},
    {"contact_overshoot_um", &TrialMetrics::contact_overshoot},
    {"puncture_dx_um", &TrialMetrics::puncture_dx},
    {"puncture_dy_um", &TrialMetrics::puncture_dy},
    {"puncture_dz_um", &TrialMetrics::puncture_dz},
    {"puncture_travel_um", &TrialMetrics::puncture_travel},
    {"duration_s", &TrialMetrics::duration},
};

json aggregate(const std::vector<const TrialResult*>& rs) {
  json out = json::object();
  for (const auto& f : kStatFields) {
    std::vector<double> v;
    for (const auto* r : rs) v.push_back(r->metrics.*(f.field));
    out[f.key] = {{"mean", mean_of(v)}, {"max", max_of(v)}};
  }
  int ok = 0;
  for (const auto* r : rs) ok += r->metrics.success ? 1 : 0;
  out["trials"] = rs.size();
  out["successes"] = ok;
  return out;
}

}  // namespace

std::string metrics_json(const RunConfig& cfg, const std::vector<TrialResult>& trials) {
  json j;
  j["seed"] = cfg.seed;
  j["trials"] = json::array();
  std::vector<const TrialResult*> all;
  for (const auto& r : trials) {
    j["trials"].push_back(metrics_entry(r));
    all.push_back(&r);
  }
  j["summary"] = aggregate(all);
  j["eyes"] = json::array();
  for (int e = 0; e < cfg.eyes; ++e) {
    std::vector<const TrialResult*> sub;
    for (const auto& r : trials)
      if (r.spec.eye == e) sub.push_back(&r);
    if (!sub.empty()) j["eyes"].push_back({{"eye", e}, {"stats", aggregate(sub)}});
  }
  j["reference"] = {{"final_xy_error_um", {{"mean", 9.0}, {"max", 16.0}}},
                    {"max_rcm_error_um", {{"max", 22.0}}},
                    {"contact_overshoot_um", {{"mean", 39.0}, {"max", 82.0}}},
                    {"puncture_dz_um", {{"mean", 11.0}, {"max", 26.0}}}};
  return j.dump(2) + "\n";
}

std::string metrics_table(const RunConfig& cfg, const std::vector<TrialResult>& trials) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %-4s %-4s %8s %8s %9s %7s %7s %7s %8s  %s\n", "trial", "eye", "mpc", "xy_um",
                "rcm_um", "contact", "dx_um", "dy_um", "dz_um", "dur_s", "result");
  os << line;
  for (int e = 0; e < cfg.eyes; ++e) {
    for (const auto& r : trials) {
      if (r.spec.eye != e) continue;
      const auto& m = r.metrics;
      std::snprintf(line, sizeof line, "%-5d %-4d %-4s %8.2f %8.2f %9.2f %7.2f %7.2f %7.2f %8.2f  %s\n", r.spec.index,
                    e, r.spec.mpc_enabled ? "on" : "off", m.final_xy_error, m.max_rcm_error, m.contact_overshoot,
                    m.puncture_dx, m.puncture_dy, m.puncture_dz, m.duration,
                    m.success ? "ok" : (m.final_phase + (m.abort_reason.empty() ? "" : " (" + m.abort_reason + ")")).c_str());
      os << line;
    }
  }
  std::vector<const TrialResult*> all;
  for (const auto& r : trials) all.push_back(&r);
  const json s = aggregate(all);
  auto stat = [&](const char* k, const char* which) { return s.at(k).at(which).get<double>(); };
  os << "\n";
  os << "metric                 mean      max   reference (mean / max)\n";
  os << "placement error um  " << std::string(2, ' ') << fmt(stat("final_xy_error_um", "mean")) << "    "
     << fmt(stat("final_xy_error_um", "max")) << "   9 / 16\n";
  os << "rcm error um        " << std::string(2, ' ') << fmt(stat("max_rcm_error_um", "mean")) << "    "
     << fmt(stat("max_rcm_error_um", "max")) << "   - / 22\n";
  os << "contact overshoot um" << std::string(2, ' ') << fmt(stat("contact_overshoot_um", "mean")) << "    "
     << fmt(stat("contact_overshoot_um", "max")) << "   39 / 82\n";
  os << "puncture Dz um      " << std::string(2, ' ') << fmt(stat("puncture_dz_um", "mean")) << "    "
     << fmt(stat("puncture_dz_um", "max")) << "   11 / 26\n";
  os << "successes " << s.at("successes").get<int>() << " / " << trials.size() << "\n";
  return os.str();
}

BatchSummary run_batch(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  BatchSummary out;
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  for (int i = 0; i < cfg.trials; ++i) {
    const TrialSpec spec = make_trial_spec(cfg, i);
    char base[32];
    std::snprintf(base, sizeof base, "trial_%02d", i);
    std::ofstream log(dir / (std::string(base) + ".jsonl"));
    std::ofstream ev(dir / (std::string(base) + "_events.jsonl"));
    TrialOptions opts;
    opts.log = &log;
    opts.events = &ev;
    if (cfg.dump_frames) opts.frame_dir = (dir / (std::string(base) + "_frames")).string();
    if (cfg.dump_traj) opts.traj_dir = (dir / (std::string(base) + "_plans")).string();
    TrialResult r = run_trial(cfg, spec, opts);
    if (!log || !ev) throw std::runtime_error("batch: failed writing logs in " + dir.string());
    if (r.metrics.final_phase == to_string(SupervisorPhase::Aborted)) out.any_aborted = true;
    if (progress) {
      *progress << base << " eye " << spec.eye << (spec.mpc_enabled ? " mpc" : "") << ": " << r.metrics.final_phase
                << " xy " << fmt(r.metrics.final_xy_error) << " um, rcm " << fmt(r.metrics.max_rcm_error)
                << " um, contact +" << fmt(r.metrics.contact_overshoot) << " um, Dz " << fmt(r.metrics.puncture_dz)
                << " um, " << fmt(r.metrics.duration, 1) << " s\n";
      progress->flush();
    }
    out.trials.push_back(std::move(r));
  }
  std::ofstream(dir / "metrics.json") << metrics_json(cfg, out.trials);
  std::ofstream(dir / "metrics.txt") << metrics_table(cfg, out.trials);
  return out;
}

// ---------------------------------------------------------------------------

ReplayResult replay_log(std::istream& in, const ReplayOptions& ropts) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("replay: empty log");
  const json header = json::parse(line);
  if (header.value("type", "") != "header") throw std::runtime_error("replay: first record is not a header");
  RunConfig cfg;
  std::istringstream cs(header.at("config").get<std::string>());
  apply_run_config(cs, cfg);
  const TrialSpec spec = spec_from_json(header.at("trial"));
  std::optional<Mat2> J0;
  if (header.contains("J0")) {
    const auto v = from_json_vec<4>(header.at("J0"));
    J0 = Mat2();
    *J0 << v(0), v(1), v(2), v(3);
  }
  TrialWorld w(cfg, spec, J0, ropts.gamma);
  ServoSupervisor& sup = w.supervisor;
  const bool strict = !ropts.gamma.has_value();

  ReplayResult out;
  out.recorded.emplace_back(0, to_string(sup.phase()));
  out.replayed.emplace_back(0, to_string(sup.phase()));
  std::string rec_prev = to_string(sup.phase());
  SupervisorPhase rep_prev = sup.phase();

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.value("type", "") != "tick") continue;
    const long tick = j.at("tick").get<long>();
    const double t = j.at("t").get<double>();
    const Vec5 q = from_json_vec<5>(j.at("q"));
    SceneState st;
    st.needle_base_pose.p = from_json_vec<3>(j.at("scene").at("p"));
    st.needle_base_pose.R = rotation_from_json(j.at("scene").at("R"));
    st.tip_deflection = from_json_vec<3>(j.at("scene").at("deflection"));
    const Frame frame = w.renderer.render(st, tick, t);
    if (hash_hex(frame_hash(frame)) != j.at("frame_hash").get<std::string>())
      throw MismatchError(tick, "replay: frame hash differs from the log");

    if (j.contains("external_abort")) sup.abort(j.at("external_abort").get<std::string>());
    const TickReport rep = sup.tick(t, frame, q);

    const std::string rec_phase = j.at("phase").get<std::string>();
    if (rec_phase != rec_prev) {
      out.recorded.emplace_back(tick, rec_phase);
      rec_prev = rec_phase;
    }
    if (rep.phase != rep_prev) {
      out.replayed.emplace_back(tick, to_string(rep.phase));
      rep_prev = rep.phase;
    }
    if (strict) {
      if (to_string(rep.phase) != rec_phase)
        throw MismatchError(tick, "replay: phase " + to_string(rep.phase) + " but log has " + rec_phase);
      if (rep.qdot != from_json_vec<5>(j.at("qdot"))) throw MismatchError(tick, "replay: joint command differs");
    }
    out.ticks = tick + 1;
  }
  return out;
}

ReplayResult replay_log_file(const std::string& path, const ReplayOptions& opts) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("replay: cannot open '" + path + "'");
  return replay_log(f, opts);
}

}  // namespace rvc
