#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rvc/camera.hpp"
#include "rvc/scene.hpp"

namespace rvc {

struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row major
  double timestamp = 0.0;
  long index = 0;
  Vec2 tip_px = Vec2::Zero();        // simulator side channel, never used by control

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool empty() const { return pixels.empty(); }
};

struct RenderStyle {
  double retina_level = 110.0;
  double retina_texture = 15.0;  // amplitude of the low-frequency texture
  double vein_level = 72.0;
  double needle_level = 230.0;
  double noise_sigma = 2.0;
};

/// Deterministic renderer. The background (retina texture and vein) is
/// rasterized once; each frame adds the needle and a frame-indexed noise field.
class SceneRenderer {
 public:
  SceneRenderer(const SceneConfig& scene, const CameraModel& cam, std::uint64_t texture_seed,
                RenderStyle style = {});

  Frame render(const SceneState& state, long frame_index, double timestamp) const;
  /// Same as render but without the needle, for inspection.
  Frame render_background(long frame_index) const;

  const CameraModel& camera() const { return cam_; }
  const SceneConfig& scene() const { return scene_; }

  /// Needle centerline as drawn, including the buckled tip segment.
  std::vector<Vec3> needle_polyline(const SceneState& state) const;

 private:
  void add_noise_and_quantize(const std::vector<float>& img, long frame_index, Frame& out) const;

  SceneConfig scene_;
  CameraModel cam_;
  RenderStyle style_;
  std::uint64_t seed_;
  std::vector<float> background_;
  std::vector<float> noise_;  // kNoiseTile x kNoiseTile
};

/// Lateral sagitta of a segment of length L whose chord is shortened by c,
/// treating the buckled shape as a parabola.
double buckle_sagitta(double L, double c);

/// 64-bit FNV-1a over the pixel bytes and dimensions.
std::uint64_t frame_hash(const Frame& f);
std::string hash_hex(std::uint64_t h);

/// Binary portable graymap. The tip pixel and timestamp ride along as comments.
void write_pgm(std::ostream& os, const Frame& f);
Frame read_pgm(std::istream& is);
void write_pgm_file(const std::string& path, const Frame& f);
Frame read_pgm_file(const std::string& path);

}  // namespace rvc
