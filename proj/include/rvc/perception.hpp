#pragma once

// Monocular cues: normalized cross-correlation tracking and contact scoring,
// tool-tip detection, and venipuncture detection from tip motion.

#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "rvc/render.hpp"

namespace rvc {

/// Grayscale patch stored in double precision so tests can use arbitrary values.
struct Template {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
  double timestamp = 0.0;
  Vec2 anchor = Vec2::Zero();  // tip position relative to the patch's top-left pixel

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Cut a w x h patch centred (as nearly as the frame allows) on `center`.
Template capture_template(const Frame& frame, const Vec2& center, int w = 64, int h = 64);

struct NccResult {
  int width = 0;   // number of evaluated x offsets
  int height = 0;
  int origin_x = 0;  // frame offset of map entry (0, 0)
  int origin_y = 0;
  std::vector<double> map;
  double max_score = -1.0;
  Eigen::Vector2i argmax = Eigen::Vector2i::Zero();  // frame coordinates of the best top-left corner

  double at(int x, int y) const { return map[static_cast<std::size_t>(y) * width + x]; }
};

/// Full heat map over every template placement. Flat windows score 0.
NccResult ncc_map(const Frame& frame, const Template& tpl);
/// Heat map over top-left corners in [x0, x1] x [y0, y1], clipped to the frame.
NccResult ncc_map_region(const Frame& frame, const Template& tpl, int x0, int y0, int x1, int y1);

/// Relative drop of the best score since the reference map.
double contact_score(const NccResult& ncc_t0, const NccResult& ncc_t);
double contact_score(double max_t0, double max_t);
bool is_contact(double score, double gamma);

// ---------------------------------------------------------------------------
// Tool-tip detection.

class TipDetector {
 public:
  virtual ~TipDetector() = default;
  /// Throws TipNotFound when the tip cannot be located.
  virtual Vec2 detect(const Frame& frame) = 0;
  virtual void reset() {}
};

/// Simulator ground truth plus Gaussian pixel noise drawn from (seed, frame index).
class OracleTipDetector : public TipDetector {
 public:
  explicit OracleTipDetector(double sigma_px = 0.5, std::uint64_t seed = 1);
  Vec2 detect(const Frame& frame) override;

 private:
  double sigma_;
  std::uint64_t seed_;
};

/// Template tracker: searches a window around the previous match.
class NccTipTracker : public TipDetector {
 public:
  explicit NccTipTracker(int search_radius = 16, double min_score = 0.5);
  void set_template(const Template& tpl, const Vec2& tip_px);
  bool has_template() const { return tpl_.has_value(); }
  Vec2 detect(const Frame& frame) override;
  void reset() override;
  const NccResult& last_result() const { return last_; }

 private:
  int radius_;
  double min_score_;
  std::optional<Template> tpl_;
  std::optional<Eigen::Vector2i> last_corner_;
  NccResult last_;
};

// ---------------------------------------------------------------------------
// Venipuncture detection.

struct DetectorVerdict {
  double p_c = 1.0;
  double p_vp = 0.0;
  bool triggered = false;
};

class PunctureDetector {
 public:
  virtual ~PunctureDetector() = default;
  virtual void activate() = 0;
  virtual bool active() const = 0;
  /// Feed every camera frame; the detector decides which ones to examine.
  virtual DetectorVerdict step(const Frame& frame, const std::optional<Vec2>& tip_px) = 0;
  virtual void reset() = 0;
};

/// Examines every `stride`-th frame. A candidate jump is a tip more than
/// `jump_px` away from where the recent track puts the previous examined frame.
/// It triggers when the mean of the following window, carried back one
/// interval, is still that far away. Latches once triggered.
class TipJumpDetector : public PunctureDetector {
 public:
  explicit TipJumpDetector(double jump_px = 25e-3 * 136.33, int stride = 4);

  void activate() override;
  bool active() const override { return active_; }
  DetectorVerdict step(const Frame& frame, const std::optional<Vec2>& tip_px) override;
  void reset() override;

  double threshold() const { return jump_px_; }
  int stride() const { return stride_; }

 private:
  struct Sample {
    long index;  // examined-frame count
    Vec2 p;      // window mean carried to that frame
  };
  static constexpr std::size_t kFit = 5;
  static constexpr std::size_t kWarmup = 4;

  double jump_px_;
  int stride_;
  bool active_ = false;
  long frames_seen_ = 0;
  std::vector<Sample> history_;
  std::optional<Vec2> anchor_;  // track position before a candidate jump
  Vec2 window_sum_ = Vec2::Zero();
  long window_offset_sum_ = 0;
  int window_count_ = 0;
  DetectorVerdict verdict_;

  void clear_track();
  void push(const Sample& s);
  Vec2 slope() const;  // least-squares drift per examined frame
};

}  // namespace rvc
