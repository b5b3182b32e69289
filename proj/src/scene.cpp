#include "rvc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace rvc {

void SceneConfig::validate() const {
  if (!(vein_radius > 0.0)) throw std::invalid_argument("scene: vein radius must be positive");
  if (vein_centerline.size() < 2) throw std::invalid_argument("scene: vein needs two centerline points");
  if (!(puncture_depth_mean > 0.0 && puncture_depth_mean < 2.0 * vein_radius))
    throw std::invalid_argument("scene: puncture depth mean must lie in (0, vein diameter)");
  if (!(puncture_depth_sigma >= 0.0)) throw std::invalid_argument("scene: puncture depth sigma < 0");
  if (!(puncture_depth_min > 0.0 && puncture_depth_min <= puncture_depth_max))
    throw std::invalid_argument("scene: puncture depth clip range is empty");
  if (!(kappa >= 0.0)) throw std::invalid_argument("scene: kappa must be >= 0");
  if (!(needle.tip_length > 0.0 && needle.tip_diameter > 0.0))
    throw std::invalid_argument("scene: needle dimensions must be positive");
}

SceneConfig SceneConfig::random_eye(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  SceneConfig cfg;
  for (int i = 0; i < 4; ++i) {
    const double lambda = 2e-3 + 4e-3 * U(rng);
    const double dir = 2.0 * M_PI * U(rng);
    const double kk = 2.0 * M_PI / lambda;
    cfg.retina.push_back({Vec2(kk * std::cos(dir), kk * std::sin(dir)), 3e-6 + 4e-6 * U(rng),
                          2.0 * M_PI * U(rng)});
  }
  const double slope = std::tan((U(rng) - 0.5) * 2.0 * 12.0 * M_PI / 180.0);
  const double x0 = (U(rng) - 0.5) * 1.0e-3;
  const double wiggle = 0.1e-3 * U(rng);
  const double wl = 3e-3 + 3e-3 * U(rng);
  const double ph = 2.0 * M_PI * U(rng);
  for (int i = 0; i <= 24; ++i) {
    const double y = -3e-3 + 6e-3 * i / 24.0;
    cfg.vein_centerline.emplace_back(x0 + slope * y + wiggle * std::sin(2.0 * M_PI * y / wl + ph), y);
  }
  return cfg;
}

VeinQuery query_vein(const SceneConfig& cfg, const Vec2& xy) {
  VeinQuery best{std::numeric_limits<double>::infinity(), Vec2::Zero(), Vec2::UnitY()};
  const auto& c = cfg.vein_centerline;
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    const Vec2 a = c[i], d = c[i + 1] - c[i];
    const double len2 = d.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((xy - a).dot(d) / len2, 0.0, 1.0) : 0.0;
    const Vec2 q = a + s * d;
    const double dist = (xy - q).norm();
    if (dist < best.distance) best = {dist, q, d.normalized()};
  }
  return best;
}

double retina_height(const SceneConfig& cfg, const Vec2& xy, double t) {
  double z = 0.0;
  for (const auto& w : cfg.retina) z += w.amp * std::sin(w.k.dot(xy) + w.phase);
  if (cfg.breathing_amp != 0.0) z += cfg.breathing_amp * std::sin(2.0 * M_PI * cfg.breathing_hz * t);
  return z;
}

double surface_height(const SceneConfig& cfg, const Vec2& xy, double t) {
  const double base = retina_height(cfg, xy, t);
  const VeinQuery q = query_vein(cfg, xy);
  const double r = cfg.vein_radius;
  if (q.distance >= r) return base;
  const double top = retina_height(cfg, q.point, t) + r + std::sqrt(r * r - q.distance * q.distance);
  return std::max(base, top);
}

Vec3 surface_normal(const SceneConfig& cfg, const Vec2& xy, double t) {
  const double h = 1e-6;
  const double hx = (surface_height(cfg, xy + Vec2(h, 0), t) - surface_height(cfg, xy - Vec2(h, 0), t)) / (2 * h);
  const double hy = (surface_height(cfg, xy + Vec2(0, h), t) - surface_height(cfg, xy - Vec2(0, h), t)) / (2 * h);
  return Vec3(-hx, -hy, 1.0).normalized();
}

Vec3 vein_top_point(const SceneConfig& cfg, double s) {
  const auto& c = cfg.vein_centerline;
  std::vector<double> cum(c.size(), 0.0);
  for (std::size_t i = 1; i < c.size(); ++i) cum[i] = cum[i - 1] + (c[i] - c[i - 1]).norm();
  const double target = std::clamp(s, 0.0, 1.0) * cum.back();
  std::size_t i = 1;
  while (i + 1 < c.size() && cum[i] < target) ++i;
  const double seg = cum[i] - cum[i - 1];
  const double f = seg > 0.0 ? (target - cum[i - 1]) / seg : 0.0;
  const Vec2 xy = c[i - 1] + f * (c[i] - c[i - 1]);
  return Vec3(xy.x(), xy.y(), retina_height(cfg, xy) + 2.0 * cfg.vein_radius);
}

Vec3 tip_axis_in_tool(const NeedleConfig& cfg) {
  const double b = cfg.bend_deg * M_PI / 180.0;
  return Vec3(0.0, std::sin(b), -std::cos(b));
}

NeedleGeometry needle_geometry(const NeedleConfig& cfg, const Pose& tool) {
  NeedleGeometry n;
  n.tip = tool.p;
  n.tip_axis = tool.R * tip_axis_in_tool(cfg);
  n.elbow = n.tip - cfg.tip_length * n.tip_axis;
  n.shaft_top = n.elbow + cfg.shaft_length * tool.R.col(2);
  return n;
}

std::string to_string(ScenePhase p) {
  switch (p) {
    case ScenePhase::Free: return "free";
    case ScenePhase::InContact: return "in_contact";
    case ScenePhase::Inserting: return "inserting";
    case ScenePhase::Punctured: return "punctured";
  }
  return "?";
}

ScenePhase scene_phase_from_string(const std::string& s) {
  for (auto p : {ScenePhase::Free, ScenePhase::InContact, ScenePhase::Inserting, ScenePhase::Punctured}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("unknown scene phase '" + s + "'");
}

SceneState initial_scene(const Pose& tool, double t) {
  SceneState s;
  s.needle_base_pose = tool;
  s.time = t;
  return s;
}

namespace {

// Where the segment a -> b first crosses the tissue surface.
Vec3 surface_crossing(const SceneConfig& cfg, const Vec3& a, const Vec3& b, double t) {
  auto depth = [&](double f) {
    const Vec3 x = a + f * (b - a);
    return surface_height(cfg, x.head<2>(), t) - x.z();
  };
  if (depth(0.0) > 0.0) return a;
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (depth(mid) > 0.0 ? hi : lo) = mid;
  }
  return a + hi * (b - a);
}

}  // namespace

SceneState scene_step(const SceneState& state, const Pose& commanded_tip, const SceneConfig& cfg,
                      std::mt19937_64& rng, double t, std::vector<SceneEvent>* events) {
  SceneState s = state;
  s.time = t;
  s.needle_base_pose = commanded_tip;
  const Vec3 prev = state.needle_base_pose.p;
  const Vec3 p = commanded_tip.p;
  const double below = surface_height(cfg, p.head<2>(), t) - p.z();
  const Vec3 axis = commanded_tip.R * tip_axis_in_tool(cfg.needle);
  auto emit = [&](const char* name, const Vec3& at) {
    if (events) events->push_back({t, name, at});
  };

  if (s.phase == ScenePhase::Free && below > 0.0) {
    s.phase = ScenePhase::InContact;
    s.contact_p = surface_crossing(cfg, prev, p, t);
    s.contact_axis = axis;
    std::normal_distribution<double> depth(cfg.puncture_depth_mean, cfg.puncture_depth_sigma);
    s.puncture_depth = std::clamp(depth(rng), cfg.puncture_depth_min, cfg.puncture_depth_max);
    emit("contact", *s.contact_p);
  } else if ((s.phase == ScenePhase::InContact || s.phase == ScenePhase::Inserting) && below <= 0.0) {
    s.phase = ScenePhase::Free;
    emit("liftoff", p);
  }

  if (s.phase == ScenePhase::InContact) {
    const Vec3 dp = p - prev;
    if (dp.norm() > 1e-12 && dp.normalized().dot(axis) > cfg.insert_align_cos) {
      s.phase = ScenePhase::Inserting;
      emit("insertion", p);
    }
  }
  if (s.phase == ScenePhase::Inserting) {
    if (below >= s.puncture_depth) {
      s.phase = ScenePhase::Punctured;
      s.puncture_p = p;
      emit("puncture", p);
    }
  }

  s.indentation = std::max(0.0, below);
  s.tip_deflection.setZero();
  if (s.phase == ScenePhase::InContact || s.phase == ScenePhase::Inserting) {
    const Vec3 n = surface_normal(cfg, p.head<2>(), t);
    const Vec3 tangential = axis - axis.dot(n) * n;
    if (tangential.norm() > 1e-9) s.tip_deflection = -cfg.kappa * s.indentation * tangential.normalized();
  }
  return s;
}

std::string event_to_json(const SceneEvent& e) {
  nlohmann::json j;
  j["t"] = e.t;
  j["event"] = e.event;
  j["p"] = {e.p.x(), e.p.y(), e.p.z()};
  return j.dump();
}

}  // namespace rvc
