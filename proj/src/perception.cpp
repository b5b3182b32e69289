#include "rvc/perception.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "rvc/errors.hpp"

namespace rvc {

Template capture_template(const Frame& frame, const Vec2& center, int w, int h) {
  if (w > frame.width || h > frame.height) throw std::invalid_argument("template: larger than frame");
  const int x0 = std::clamp(static_cast<int>(std::lround(center.x())) - w / 2, 0, frame.width - w);
  const int y0 = std::clamp(static_cast<int>(std::lround(center.y())) - h / 2, 0, frame.height - h);
  Template t;
  t.width = w;
  t.height = h;
  t.timestamp = frame.timestamp;
  t.anchor = center - Vec2(x0, y0);
  t.pixels.resize(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t.pixels[static_cast<std::size_t>(y) * w + x] = frame.at(x0 + x, y0 + y);
  return t;
}

NccResult ncc_map(const Frame& frame, const Template& tpl) {
  return ncc_map_region(frame, tpl, 0, 0, frame.width - tpl.width, frame.height - tpl.height);
}

NccResult ncc_map_region(const Frame& frame, const Template& tpl, int x0, int y0, int x1, int y1) {
  const int tw = tpl.width, th = tpl.height;
  if (tw <= 0 || th <= 0 || tw > frame.width || th > frame.height)
    throw std::invalid_argument("ncc: template must be non-empty and fit inside the frame");
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, frame.width - tw);
  y1 = std::min(y1, frame.height - th);
  if (x0 > x1 || y0 > y1) throw std::invalid_argument("ncc: empty search region");

  const double n = static_cast<double>(tw) * th;
  double tmean = 0.0;
  for (double v : tpl.pixels) tmean += v;
  tmean /= n;
  std::vector<double> tz(tpl.pixels.size());
  double tnorm2 = 0.0;
  for (std::size_t i = 0; i < tz.size(); ++i) {
    tz[i] = tpl.pixels[i] - tmean;
    tnorm2 += tz[i] * tz[i];
  }
  if (!(tnorm2 > 0.0)) throw std::invalid_argument("ncc: template has zero variance");

  // Frame patch covering every window, plus exact integer integral images.
  const int rw = x1 - x0 + tw, rh = y1 - y0 + th;
  std::vector<double> patch(static_cast<std::size_t>(rw) * rh);
  std::vector<long long> S((rw + 1) * static_cast<std::size_t>(rh + 1), 0), Q(S.size(), 0);
  for (int y = 0; y < rh; ++y) {
    long long rs = 0, rq = 0;
    for (int x = 0; x < rw; ++x) {
      const int v = frame.at(x0 + x, y0 + y);
      patch[static_cast<std::size_t>(y) * rw + x] = v;
      rs += v;
      rq += static_cast<long long>(v) * v;
      S[(y + 1) * static_cast<std::size_t>(rw + 1) + x + 1] = S[y * static_cast<std::size_t>(rw + 1) + x + 1] + rs;
      Q[(y + 1) * static_cast<std::size_t>(rw + 1) + x + 1] = Q[y * static_cast<std::size_t>(rw + 1) + x + 1] + rq;
    }
  }
  auto box = [rw](const std::vector<long long>& I, int x, int y, int w, int h) {
    const std::size_t s = rw + 1;
    return I[(y + h) * s + x + w] - I[y * s + x + w] - I[(y + h) * s + x] + I[y * s + x];
  };

  NccResult r;
  r.width = x1 - x0 + 1;
  r.height = y1 - y0 + 1;
  r.origin_x = x0;
  r.origin_y = y0;
  r.map.assign(static_cast<std::size_t>(r.width) * r.height, 0.0);
  const long long nn = static_cast<long long>(tw) * th;
  for (int oy = 0; oy < r.height; ++oy) {
    for (int ox = 0; ox < r.width; ++ox) {
      const long long s = box(S, ox, oy, tw, th);
      const long long q = box(Q, ox, oy, tw, th);
      const long long var_n = nn * q - s * s;  // n^2 times the window variance, exact
      double score = 0.0;
      if (var_n > 0) {
        double num = 0.0;
        for (int y = 0; y < th; ++y) {
          const double* prow = &patch[static_cast<std::size_t>(oy + y) * rw + ox];
          const double* trow = &tz[static_cast<std::size_t>(y) * tw];
          for (int x = 0; x < tw; ++x) num += trow[x] * prow[x];
        }
        score = std::clamp(num / std::sqrt(tnorm2 * (static_cast<double>(var_n) / n)), -1.0, 1.0);
      }
      r.map[static_cast<std::size_t>(oy) * r.width + ox] = score;
      if (score > r.max_score) {
        r.max_score = score;
        r.argmax = Eigen::Vector2i(x0 + ox, y0 + oy);
      }
    }
  }
  return r;
}

double contact_score(double max_t0, double max_t) {
  if (!(max_t0 > 0.0)) throw std::invalid_argument("contact score: reference maximum must be positive");
  return (max_t0 - max_t) / max_t0;
}

double contact_score(const NccResult& ncc_t0, const NccResult& ncc_t) {
  return contact_score(ncc_t0.max_score, ncc_t.max_score);
}

bool is_contact(double score, double gamma) { return score >= gamma; }

// ---------------------------------------------------------------------------

OracleTipDetector::OracleTipDetector(double sigma_px, std::uint64_t seed) : sigma_(sigma_px), seed_(seed) {
  if (!(sigma_px >= 0.0)) throw std::invalid_argument("oracle detector: sigma must be >= 0");
}

Vec2 OracleTipDetector::detect(const Frame& frame) {
  const Vec2 t = frame.tip_px;
  if (!(t.x() >= 0.0 && t.y() >= 0.0 && t.x() <= frame.width - 1 && t.y() <= frame.height - 1))
    throw TipNotFound("oracle: tip outside the frame");
  if (sigma_ == 0.0) return t;
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(frame.index), static_cast<std::uint32_t>(frame.index >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> N(0.0, sigma_);
  const double du = N(rng);
  const double dv = N(rng);
  return t + Vec2(du, dv);
}

NccTipTracker::NccTipTracker(int search_radius, double min_score)
    : radius_(search_radius), min_score_(min_score) {}

void NccTipTracker::set_template(const Template& tpl, const Vec2& tip_px) {
  tpl_ = tpl;
  const Vec2 corner = tip_px - tpl.anchor;
  last_corner_ = Eigen::Vector2i(static_cast<int>(std::lround(corner.x())), static_cast<int>(std::lround(corner.y())));
}

void NccTipTracker::reset() {
  tpl_.reset();
  last_corner_.reset();
  last_ = NccResult{};
}

Vec2 NccTipTracker::detect(const Frame& frame) {
  if (!tpl_) throw TipNotFound("tracker: no template");
  if (last_corner_) {
    const auto c = *last_corner_;
    last_ = ncc_map_region(frame, *tpl_, c.x() - radius_, c.y() - radius_, c.x() + radius_, c.y() + radius_);
  } else {
    last_ = ncc_map(frame, *tpl_);
  }
  if (last_.max_score < min_score_) throw TipNotFound("tracker: best match below threshold");
  last_corner_ = last_.argmax;
  return last_.argmax.cast<double>() + tpl_->anchor;
}

// ---------------------------------------------------------------------------

TipJumpDetector::TipJumpDetector(double jump_px, int stride) : jump_px_(jump_px), stride_(stride) {
  if (!(jump_px > 0.0) || stride < 1) throw std::invalid_argument("jump detector: bad parameters");
}

void TipJumpDetector::clear_track() {
  frames_seen_ = 0;
  history_.clear();
  anchor_.reset();
  window_sum_.setZero();
  window_offset_sum_ = 0;
  window_count_ = 0;
}

void TipJumpDetector::activate() {
  if (active_) return;
  active_ = true;
  clear_track();
}

void TipJumpDetector::reset() {
  active_ = false;
  clear_track();
  verdict_ = DetectorVerdict{};
}

void TipJumpDetector::push(const Sample& s) {
  history_.push_back(s);
  if (history_.size() > kFit) history_.erase(history_.begin());
}

Vec2 TipJumpDetector::slope() const {
  if (history_.size() < 2) return Vec2::Zero();
  const double n = static_cast<double>(history_.size());
  double tm = 0.0;
  Vec2 pm = Vec2::Zero();
  for (const Sample& s : history_) {
    tm += static_cast<double>(s.index);
    pm += s.p;
  }
  tm /= n;
  pm /= n;
  double stt = 0.0;
  Vec2 stp = Vec2::Zero();
  for (const Sample& s : history_) {
    const double dt = static_cast<double>(s.index) - tm;
    stt += dt * dt;
    stp += dt * (s.p - pm);
  }
  return stt > 0.0 ? Vec2(stp / stt) : Vec2::Zero();
}

DetectorVerdict TipJumpDetector::step(const Frame&, const std::optional<Vec2>& tip_px) {
  if (!active_ || verdict_.triggered) return verdict_;
  const int pos = static_cast<int>(frames_seen_ % stride_);  // 0 .. stride-1 inside the window
  const long index = frames_seen_ / stride_;
  ++frames_seen_;
  if (tip_px) {
    window_sum_ += *tip_px;
    window_offset_sum_ += stride_ - 1 - pos;
    ++window_count_;
  }
  if (pos != stride_ - 1 || window_count_ == 0) return verdict_;

  const Vec2 drift = slope();
  const double lag = static_cast<double>(window_offset_sum_) / window_count_;
  const Sample est{index, window_sum_ / static_cast<double>(window_count_) + (lag / stride_) * drift};
  window_sum_.setZero();
  window_offset_sum_ = 0;
  window_count_ = 0;

  if (anchor_) {
    // Every frame of this window follows the candidate frame, so its mean
    // re-measures the candidate interval with independent detections.
    // The fitted drift lags when the tip speeds up, so the latest step is
    // used instead when it is larger.
    Vec2 back = drift;
    const std::size_t n = history_.size();
    if (n >= 2 && history_[n - 1].index == history_[n - 2].index + 1) {
      const Vec2 last = history_[n - 1].p - history_[n - 2].p;
      if (last.norm() > back.norm()) back = last;
    }
    if ((est.p - back - *anchor_).norm() > jump_px_) {
      verdict_ = {0.0, 1.0, true};
      return verdict_;
    }
    // Not confirmed: the candidate window was an outlier and stays out of the track.
    anchor_.reset();
    }

  double d = 0.0;
  if (history_.size() >= kWarmup && tip_px) {
    const Vec2 ref = history_.back().p + static_cast<double>(index - 1 - history_.back().index) * drift;
    d = (*tip_px - ref).norm();
    if (d > jump_px_) anchor_ = ref;
  }
  if (!anchor_) push(est);
  verdict_.p_vp = std::clamp(d / (2.0 * jump_px_), 0.0, 1.0);
  verdict_.p_c = 1.0 - verdict_.p_vp;
  return verdict_;
}

}  // namespace rvc
