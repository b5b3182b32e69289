#include "rvc/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace rvc {

namespace {

constexpr int kNoiseTile = 1024;
constexpr int kBuckleSamples = 16;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct TextureWave {
  Vec2 k;
  double phase;
};

}  // namespace

double buckle_sagitta(double L, double c) {
  if (!(c > 0.0) || !(L > c)) return 0.0;
  return std::sqrt(3.0 * c * (L - c) / 8.0);
}

SceneRenderer::SceneRenderer(const SceneConfig& scene, const CameraModel& cam, std::uint64_t texture_seed,
                             RenderStyle style)
    : scene_(scene), cam_(cam), style_(style), seed_(texture_seed) {
  scene_.validate();
  cam_.validate();
  std::mt19937_64 rng(texture_seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);

  std::vector<TextureWave> waves;
  for (int i = 0; i < 6; ++i) {
    const double lambda = 0.3e-3 + 1.2e-3 * U(rng);
    const double dir = 2.0 * M_PI * U(rng);
    waves.push_back({Vec2(std::cos(dir), std::sin(dir)) * (2.0 * M_PI / lambda), 2.0 * M_PI * U(rng)});
  }
  const double tex_norm = style_.retina_texture / std::sqrt(waves.size() / 2.0);

  const int W = cam_.width, H = cam_.height;
  const double pixel_m = cam_.depth(Vec3::Zero()) / cam_.fx;
  const double r = scene_.vein_radius;
  background_.resize(static_cast<std::size_t>(W) * H);
  const Vec3 c = cam_.center();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Vec3 d = cam_.ray(x, y);
      // Intersect with z = 0, then refine once against the tissue height.
      Vec3 hit = c + (-c.z() / d.z()) * d;
      const double zs = surface_height(scene_, hit.head<2>());
      hit = c + ((zs - c.z()) / d.z()) * d;
      const Vec2 xy = hit.head<2>();

      double tex = 0.0;
      for (const auto& w : waves) tex += std::sin(w.k.dot(xy) + w.phase);
      double v = style_.retina_level + tex_norm * tex / 2.0;

      const VeinQuery q = query_vein(scene_, xy);
      const double inside = std::clamp((r - q.distance) / pixel_m + 0.5, 0.0, 1.0);
      if (inside > 0.0) {
        const double rel = std::min(q.distance / r, 1.0);
        const double vein = style_.vein_level + 14.0 * rel * rel + 0.3 * tex_norm * tex / 2.0;
        v = inside * vein + (1.0 - inside) * v;
      }
      background_[static_cast<std::size_t>(y) * W + x] = static_cast<float>(v);
    }
  }

  noise_.resize(static_cast<std::size_t>(kNoiseTile) * kNoiseTile);
  std::mt19937_64 nrng(splitmix64(texture_seed ^ 0x6e6f697365ULL));
  std::normal_distribution<float> N(0.0f, static_cast<float>(style_.noise_sigma));
  for (auto& n : noise_) n = N(nrng);
}

std::vector<Vec3> SceneRenderer::needle_polyline(const SceneState& state) const {
  const NeedleGeometry g = needle_geometry(scene_.needle, state.needle_base_pose);
  const Vec3 tip = state.visible_tip();
  const Vec3 chord = tip - g.elbow;
  const double L = scene_.needle.tip_length;
  const double h = buckle_sagitta(L, L - chord.norm());
  Vec3 side = g.tip_axis.cross(Vec3::UnitZ());
  side = side.norm() > 1e-9 ? side.normalized() : Vec3::UnitX();

  std::vector<Vec3> pts;
  pts.push_back(g.shaft_top);
  for (int i = 0; i <= kBuckleSamples; ++i) {
    const double s = static_cast<double>(i) / kBuckleSamples;
    pts.push_back(g.elbow + s * chord + (4.0 * h * s * (1.0 - s)) * side);
  }
  return pts;
}

void SceneRenderer::add_noise_and_quantize(const std::vector<float>& img, long frame_index, Frame& out) const {
  const std::uint64_t h = splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(frame_index)));
  const int ox = static_cast<int>(h & (kNoiseTile - 1));
  const int oy = static_cast<int>((h >> 20) & (kNoiseTile - 1));
  const int W = out.width, H = out.height;
  out.pixels.resize(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y) {
    const float* nrow = &noise_[static_cast<std::size_t>((y + oy) & (kNoiseTile - 1)) * kNoiseTile];
    const float* src = &img[static_cast<std::size_t>(y) * W];
    std::uint8_t* dst = &out.pixels[static_cast<std::size_t>(y) * W];
    for (int x = 0; x < W; ++x) {
      const float v = std::clamp(src[x] + nrow[(x + ox) & (kNoiseTile - 1)], 0.0f, 255.0f);
      dst[x] = static_cast<std::uint8_t>(v + 0.5f);
    }
  }
}

Frame SceneRenderer::render_background(long frame_index) const {
  Frame f;
  f.width = cam_.width;
  f.height = cam_.height;
  f.index = frame_index;
  add_noise_and_quantize(background_, frame_index, f);
  return f;
}

Frame SceneRenderer::render(const SceneState& state, long frame_index, double timestamp) const {
  const int W = cam_.width, H = cam_.height;
  std::vector<float> img = background_;

  // Project the needle centerline with its local radius in pixels.
  const std::vector<Vec3> pts = needle_polyline(state);
  const auto& nc = scene_.needle;
  std::vector<Vec2> uv;
  std::vector<double> rad;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double diameter = nc.shaft_diameter;
    if (i > 0) {
      const double s = static_cast<double>(i - 1) / kBuckleSamples;
      diameter = nc.elbow_diameter + s * (nc.tip_diameter - nc.elbow_diameter);
    }
    uv.push_back(cam_.project(pts[i]));
    rad.push_back(0.5 * diameter * cam_.fx / cam_.depth(pts[i]));
  }

  // Coverage is the max over segments of a one-pixel-wide antialiased edge.
  double minx = W, maxx = -1, miny = H, maxy = -1;
  for (std::size_t i = 0; i < uv.size(); ++i) {
    minx = std::min(minx, uv[i].x() - rad[i] - 2);
    maxx = std::max(maxx, uv[i].x() + rad[i] + 2);
    miny = std::min(miny, uv[i].y() - rad[i] - 2);
    maxy = std::max(maxy, uv[i].y() + rad[i] + 2);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
  const int x1 = std::min(W - 1, static_cast<int>(std::ceil(maxx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
  const int y1 = std::min(H - 1, static_cast<int>(std::ceil(maxy)));
  if (x0 <= x1 && y0 <= y1) {
    const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    std::vector<float> cover(static_cast<std::size_t>(bw) * bh, 0.0f);
    for (std::size_t i = 0; i + 1 < uv.size(); ++i) {
      const Vec2 a = uv[i], b = uv[i + 1];
      const double ra = rad[i], rb = rad[i + 1];
      const double pad = std::max(ra, rb) + 1.0;
      const int sx0 = std::max(x0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - pad)));
      const int sx1 = std::min(x1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + pad)));
      const int sy0 = std::max(y0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - pad)));
      const int sy1 = std::min(y1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + pad)));
      const Vec2 d = b - a;
      const double len2 = d.squaredNorm();
      for (int y = sy0; y <= sy1; ++y) {
        for (int x = sx0; x <= sx1; ++x) {
          const Vec2 pxy(x, y);
          const double s = len2 > 0.0 ? std::clamp((pxy - a).dot(d) / len2, 0.0, 1.0) : 0.0;
          const double dist = (pxy - (a + s * d)).norm();
          const double radius = ra + s * (rb - ra);
          const float cv = static_cast<float>(std::clamp(radius - dist + 0.5, 0.0, 1.0));
          float& slot = cover[static_cast<std::size_t>(y - y0) * bw + (x - x0)];
          slot = std::max(slot, cv);
        }
      }
    }
    const float level = static_cast<float>(style_.needle_level);
    for (int y = 0; y < bh; ++y) {
      for (int x = 0; x < bw; ++x) {
        const float cv = cover[static_cast<std::size_t>(y) * bw + x];
        if (cv > 0.0f) {
          float& p = img[static_cast<std::size_t>(y + y0) * W + (x + x0)];
          p = cv * level + (1.0f - cv) * p;
        }
      }
    }
  }

  Frame f;
  f.width = W;
  f.height = H;
  f.index = frame_index;
  f.timestamp = timestamp;
  f.tip_px = cam_.project(state.visible_tip());
  add_noise_and_quantize(img, frame_index, f);
  return f;
}

std::uint64_t frame_hash(const Frame& f) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (int v : {f.width, f.height}) {
    for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  for (std::uint8_t b : f.pixels) mix(b);
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_pgm(std::ostream& os, const Frame& f) {
  char line[128];
  os << "P5\n";
  std::snprintf(line, sizeof line, "# t %.17g\n# index %ld\n# tip_px %.17g %.17g\n", f.timestamp, f.index,
                f.tip_px.x(), f.tip_px.y());
  os << line << f.width << ' ' << f.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
}

Frame read_pgm(std::istream& is) {
  Frame f;
  std::string magic;
  is >> magic;
  if (magic != "P5") throw std::runtime_error("pgm: not a binary graymap");
  int fields[3];
  int got = 0;
  while (got < 3) {
    is >> std::ws;
    if (is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
      std::istringstream cs(comment.substr(1));
      std::string key;
      cs >> key;
      if (key == "t") cs >> f.timestamp;
      else if (key == "index") cs >> f.index;
      else if (key == "tip_px") cs >> f.tip_px.x() >> f.tip_px.y();
      continue;
    }
    if (!(is >> fields[got])) throw std::runtime_error("pgm: malformed header");
    ++got;
  }
  if (fields[2] != 255) throw std::runtime_error("pgm: only 8-bit graymaps are supported");
  f.width = fields[0];
  f.height = fields[1];
  if (f.width <= 0 || f.height <= 0) throw std::runtime_error("pgm: bad dimensions");
  is.get();  // single whitespace before the raster
  f.pixels.resize(static_cast<std::size_t>(f.width) * f.height);
  is.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
  if (is.gcount() != static_cast<std::streamsize>(f.pixels.size())) throw std::runtime_error("pgm: truncated raster");
  return f;
}

void write_pgm_file(const std::string& path, const Frame& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot write " + path);
  write_pgm(os, f);
}

Frame read_pgm_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("pgm: cannot open " + path);
  return read_pgm(is);
}

}  // namespace rvc
