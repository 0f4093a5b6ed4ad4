#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vremd/backbone.hpp"
#include "vremd/heads.hpp"
#include "vremd/rng.hpp"
#include "vremd/tensor.hpp"

namespace vremd {

// ---------------------------------------------------------------------------
// annotations and the skeleton
// ---------------------------------------------------------------------------

struct PoseAnnotation {
  std::vector<std::array<double, 2>> joints;  // (x, y) in image pixels
  std::vector<bool> visibility;
  int person_id = 0;
  long frame_index = 0;
};

inline const std::vector<std::string>& joint_names15() {
  static const std::vector<std::string> names = {
      "nose",        "head_bottom",  "head_top",    "left_shoulder",
      "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
      "right_wrist", "left_hip",     "right_hip",   "left_knee",
      "right_knee",  "left_ankle",   "right_ankle"};
  return names;
}

inline std::vector<std::string> joint_names(std::size_t count) {
  if (count == 15) return joint_names15();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i)
    names.push_back("joint" + std::to_string(i));
  return names;
}

inline const std::vector<std::pair<int, int>>& skeleton_edges15() {
  static const std::vector<std::pair<int, int>> edges = {
      {0, 1},  {1, 2},  {1, 3},  {1, 4},  {3, 5},   {5, 7},  {4, 6},
      {6, 8},  {3, 9},  {4, 10}, {9, 10}, {9, 11},  {11, 13}, {10, 12},
      {12, 14}};
  return edges;
}

inline std::vector<std::pair<int, int>> skeleton_edges(std::size_t joints) {
  if (joints == 15) return skeleton_edges15();
  std::vector<std::pair<int, int>> edges;  // simple chain
  for (std::size_t i = 0; i + 1 < joints; ++i)
    edges.push_back({int(i), int(i + 1)});
  return edges;
}

// left/right pairs for flip augmentation
inline std::vector<std::pair<int, int>> flip_pairs(std::size_t joints) {
  if (joints == 15)
    return {{3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}};
  return {};
}

// Canonical standing pose in person-height units, pelvis at the origin,
// y growing downward.
inline std::vector<std::array<double, 2>> canonical_pose15() {
  return {{0.04, -0.42}, {0.00, -0.35}, {0.00, -0.50}, {-0.18, -0.30},
          {0.18, -0.30},  {-0.26, -0.12}, {0.26, -0.12}, {-0.30, 0.06},
          {0.30, 0.06},   {-0.10, 0.00},  {0.10, 0.00},  {-0.12, 0.26},
          {0.12, 0.26},   {-0.13, 0.52},  {0.13, 0.52}};
}

inline std::vector<std::array<double, 2>> canonical_pose(std::size_t joints) {
  if (joints == 15) return canonical_pose15();
  std::vector<std::array<double, 2>> pose;
  for (std::size_t i = 0; i < joints; ++i)
    pose.push_back({0.0, -0.5 + double(i) / std::max<std::size_t>(joints - 1, 1)});
  return pose;
}

// ---------------------------------------------------------------------------
// affine transforms (row-vector convention: p' = M p)
// ---------------------------------------------------------------------------

struct Affine2D {
  // x' = m[0] x + m[1] y + m[2];  y' = m[3] x + m[4] y + m[5]
  std::array<double, 6> m = {1, 0, 0, 0, 1, 0};

  static Affine2D identity() { return {}; }
  static Affine2D translation(double tx, double ty) {
    return {{1, 0, tx, 0, 1, ty}};
  }
  static Affine2D scaling(double sx, double sy) {
    return {{sx, 0, 0, 0, sy, 0}};
  }
  static Affine2D rotation(double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    return {{c, -s, 0, s, c, 0}};
  }

  std::array<double, 2> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }

  // this ∘ other (applies `other` first)
  Affine2D compose(const Affine2D& other) const {
    Affine2D r;
    r.m[0] = m[0] * other.m[0] + m[1] * other.m[3];
    r.m[1] = m[0] * other.m[1] + m[1] * other.m[4];
    r.m[2] = m[0] * other.m[2] + m[1] * other.m[5] + m[2];
    r.m[3] = m[3] * other.m[0] + m[4] * other.m[3];
    r.m[4] = m[3] * other.m[1] + m[4] * other.m[4];
    r.m[5] = m[3] * other.m[2] + m[4] * other.m[5] + m[5];
    return r;
  }

  Affine2D inverse() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (det == 0.0) throw std::invalid_argument("affine is singular");
    Affine2D r;
    r.m[0] = m[4] / det;
    r.m[1] = -m[1] / det;
    r.m[3] = -m[3] / det;
    r.m[4] = m[0] / det;
    r.m[2] = -(r.m[0] * m[2] + r.m[1] * m[5]);
    r.m[5] = -(r.m[3] * m[2] + r.m[4] * m[5]);
    return r;
  }
};

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t joints = 15;
  std::size_t img_h = 128;
  std::size_t img_w = 96;
  std::size_t distractors = 0;
  bool background_motion = false;
  std::size_t blur = 0;       // box blur width, 0 = off
  std::size_t occluders = 0;  // moving gray rectangles
  double person_height = 56.0;  // pixels
  std::uint64_t seed = 0;

  void validate() const {
    if (joints < 1) throw std::invalid_argument("synth: joints must be >= 1");
    if (img_h < 16 || img_w < 16)
      throw std::invalid_argument("synth: image too small, need >= 16x16");
    if (person_height <= 0 || person_height > double(std::min(img_h, img_w)))
      throw std::invalid_argument(
          "synth: person height " + std::to_string(person_height) +
          " out of bounds for a " + std::to_string(img_w) + "x" +
          std::to_string(img_h) + " scene");
    if (blur % 2 == 0 && blur != 0)
      throw std::invalid_argument("synth: blur width must be odd");
  }
};

template <class Real>
struct SynthWindow {
  FrameSequence<Real> frames;                 // scene frames, (1, H, W)
  std::array<PoseAnnotation, 3> annotations;  // target person only
};

namespace detail {

// Per-person trajectory: a drifting center plus per-joint sinusoidal sway.
struct PersonMotion {
  double cx0, cy0, vx, vy;
  std::vector<std::array<double, 4>> sway;  // ax, ay, omega, phase

  static PersonMotion sample(Rng& rng, const SynthConfig& cfg, bool target,
                             const PersonMotion* near = nullptr) {
    PersonMotion p;
    const double margin = 0.45 * cfg.person_height + 4.0;
    if (near) {
      // distractors crowd the target so they fall inside its crop
      const double r = 0.9 * cfg.person_height;
      p.cx0 = std::min(cfg.img_w - margin,
                       std::max(margin, near->cx0 + rng.uniform(-r, r)));
      p.cy0 = std::min(cfg.img_h - margin,
                       std::max(margin, near->cy0 + rng.uniform(-r, r)));
    } else {
      p.cx0 = rng.uniform(margin, cfg.img_w - margin);
      p.cy0 = rng.uniform(margin, cfg.img_h - margin);
    }
    const double vmax = target ? 2.5 : 4.0;
    p.vx = rng.uniform(-vmax, vmax);
    p.vy = rng.uniform(-vmax, vmax);
    p.sway.resize(cfg.joints);
    for (auto& s : p.sway) {
      s[0] = rng.uniform(0.0, 0.05 * cfg.person_height);
      s[1] = rng.uniform(0.0, 0.05 * cfg.person_height);
      s[2] = rng.uniform(0.2, 1.2);
      s[3] = rng.uniform(0.0, 6.283185307179586);
    }
    return p;
  }

  std::vector<std::array<double, 2>> pose_at(long t, const SynthConfig& cfg,
                                             double extra_phase) const {
    auto base = canonical_pose(cfg.joints);
    // keep the drifting center inside the frame by bouncing off the margins
    const double margin = 0.45 * cfg.person_height + 4.0;
    auto bounce = [](double v, double lo, double hi) {
      const double span = hi - lo;
      double u = std::fmod(v - lo, 2 * span);
      if (u < 0) u += 2 * span;
      return lo + (u <= span ? u : 2 * span - u);
    };
    const double cx = bounce(cx0 + vx * t, margin, cfg.img_w - margin);
    const double cy = bounce(cy0 + vy * t, margin, cfg.img_h - margin);
    std::vector<std::array<double, 2>> out(cfg.joints);
    for (std::size_t j = 0; j < cfg.joints; ++j) {
      const auto& s = sway[j];
      out[j] = {cx + base[j][0] * person_scale(cfg) +
                    s[0] * std::sin(s[2] * t + s[3] + extra_phase),
                cy + base[j][1] * person_scale(cfg) +
                    s[1] * std::cos(s[2] * t + s[3] + extra_phase)};
    }
    return out;
  }

  static double person_scale(const SynthConfig& cfg) {
    return cfg.person_height;  // canonical pose spans roughly one unit
  }
};

template <class Real>
void draw_line(std::vector<Real>& img, std::size_t h, std::size_t w,
               double x0, double y0, double x1, double y1, Real value) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(2, int(len * 2));
  for (int i = 0; i <= steps; ++i) {
    const double t = double(i) / steps;
    const int x = int(std::lround(x0 + (x1 - x0) * t));
    const int y = int(std::lround(y0 + (y1 - y0) * t));
    if (x >= 0 && y >= 0 && x < int(w) && y < int(h))
      img[y * w + x] = std::max(img[y * w + x], value);
  }
}

template <class Real>
void draw_blob(std::vector<Real>& img, std::size_t h, std::size_t w, double jx,
               double jy, double sigma, Real peak) {
  const int r = int(std::ceil(3 * sigma));
  const int cx = int(std::lround(jx)), cy = int(std::lround(jy));
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x) {
      if (x < 0 || y < 0 || x >= int(w) || y >= int(h)) continue;
      const double d2 = (x - jx) * (x - jx) + (y - jy) * (y - jy);
      const Real v = peak * Real(std::exp(-d2 / (2 * sigma * sigma)));
      img[y * w + x] = std::max(img[y * w + x], v);
    }
}

template <class Real>
void draw_person(std::vector<Real>& img, const SynthConfig& cfg,
                 const std::vector<std::array<double, 2>>& pose) {
  const auto edges = skeleton_edges(cfg.joints);
  for (auto [a, b] : edges)
    draw_line(img, cfg.img_h, cfg.img_w, pose[a][0], pose[a][1], pose[b][0],
              pose[b][1], Real(0.55));
  for (const auto& j : pose)
    draw_blob(img, cfg.img_h, cfg.img_w, j[0], j[1], 1.5, Real(1.0));
}

template <class Real>
void box_blur(std::vector<Real>& img, std::size_t h, std::size_t w,
              std::size_t k) {
  const int r = int(k / 2);
  std::vector<Real> tmp(img.size());
  for (int y = 0; y < int(h); ++y)
    for (int x = 0; x < int(w); ++x) {
      Real acc = 0;
      int n = 0;
      for (int dx = -r; dx <= r; ++dx) {
        const int xx = x + dx;
        if (xx < 0 || xx >= int(w)) continue;
        acc += img[y * w + xx];
        ++n;
      }
      tmp[y * w + x] = acc / Real(n);
    }
  for (int y = 0; y < int(h); ++y)
    for (int x = 0; x < int(w); ++x) {
      Real acc = 0;
      int n = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= int(h)) continue;
        acc += tmp[yy * w + x];
        ++n;
      }
      img[y * w + x] = acc / Real(n);
    }
}

}  // namespace detail

// Renders the window (t-1, t, t+1) of a deterministic moving-skeleton scene.
// Annotations are the exact target joint trajectories.
template <class Real>
SynthWindow<Real> synth_sequence(const SynthConfig& cfg, long t) {
  cfg.validate();
  SynthWindow<Real> window;

  // scene layout depends only on the seed, not on t
  Rng rng = Rng::derive(cfg.seed, 0xdeadbeef);
  auto target = detail::PersonMotion::sample(rng, cfg, true);
  std::vector<detail::PersonMotion> others;
  for (std::size_t i = 0; i < cfg.distractors; ++i)
    others.push_back(detail::PersonMotion::sample(rng, cfg, false, &target));

  struct Occluder {
    double x, y, w, h, vx, vy;
  };
  // occluders spawn near the target so they routinely cover body parts, and
  // they move fast enough to expose those parts in the neighboring frames
  std::vector<Occluder> occs;
  for (std::size_t i = 0; i < cfg.occluders; ++i) {
    const double w = rng.uniform(12.0, 0.6 * cfg.person_height);
    const double h = rng.uniform(12.0, 0.6 * cfg.person_height);
    occs.push_back({target.cx0 + rng.uniform(-0.5, 0.5) * cfg.person_height - w / 2,
                    target.cy0 + rng.uniform(-0.5, 0.5) * cfg.person_height - h / 2,
                    w, h, rng.uniform(2.0, 5.0) * (rng.bernoulli(0.5) ? 1 : -1),
                    rng.uniform(2.0, 5.0) * (rng.bernoulli(0.5) ? 1 : -1)});
  }
  const double bg_phase = rng.uniform(0, 6.28), bg_vx = rng.uniform(0.5, 2.0),
               bg_vy = rng.uniform(0.5, 2.0);

  for (int fi = 0; fi < 3; ++fi) {
    const long ft = t + fi - 1;
    std::vector<Real> img(cfg.img_h * cfg.img_w, Real(0));

    if (cfg.background_motion) {
      for (std::size_t y = 0; y < cfg.img_h; ++y)
        for (std::size_t x = 0; x < cfg.img_w; ++x)
          img[y * cfg.img_w + x] = Real(
              0.12 + 0.10 * std::sin(0.35 * (x + bg_vx * ft) + bg_phase) *
                         std::sin(0.29 * (y + bg_vy * ft)));
    }

    for (std::size_t i = 0; i < others.size(); ++i)
      detail::draw_person(img, cfg, others[i].pose_at(ft, cfg, 1.7 * (i + 1)));

    auto pose = target.pose_at(ft, cfg, 0.0);
    detail::draw_person(img, cfg, pose);

    PoseAnnotation ann;
    ann.person_id = 0;
    ann.frame_index = ft;
    ann.joints.assign(pose.begin(), pose.end());
    ann.visibility.assign(cfg.joints, true);

    // occluders hide pixels but the joints stay annotated; the pose under a
    // moving occluder is recoverable from the neighboring frames
    for (const auto& o : occs) {
      const double ox = o.x + o.vx * ft, oy = o.y + o.vy * ft;
      for (std::size_t y = 0; y < cfg.img_h; ++y)
        for (std::size_t x = 0; x < cfg.img_w; ++x)
          if (x >= ox && x < ox + o.w && y >= oy && y < oy + o.h)
            img[y * cfg.img_w + x] = Real(0.3);
    }

    for (std::size_t j = 0; j < cfg.joints; ++j)
      if (pose[j][0] < 0 || pose[j][0] > cfg.img_w - 1 || pose[j][1] < 0 ||
          pose[j][1] > cfg.img_h - 1)
        ann.visibility[j] = false;

    if (cfg.blur > 1) detail::box_blur(img, cfg.img_h, cfg.img_w, cfg.blur);
    for (auto& v : img) v = std::min(Real(1), std::max(Real(0), v));

    window.frames.frames[fi] =
        Tensor<Real>::from_data({1, cfg.img_h, cfg.img_w}, std::move(img));
    window.frames.frame_indices[fi] = ft;
    window.annotations[fi] = std::move(ann);
  }
  return window;
}

// ---------------------------------------------------------------------------
// top-down preprocessing
// ---------------------------------------------------------------------------

struct Bbox {
  double x = 0, y = 0, w = 0, h = 0;
};

inline Bbox bbox_from_annotation(const PoseAnnotation& ann, double pad = 4.0) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  bool any = false;
  for (std::size_t j = 0; j < ann.joints.size(); ++j) {
    if (!ann.visibility[j]) continue;
    any = true;
    x0 = std::min(x0, ann.joints[j][0]);
    y0 = std::min(y0, ann.joints[j][1]);
    x1 = std::max(x1, ann.joints[j][0]);
    y1 = std::max(y1, ann.joints[j][1]);
  }
  if (!any)
    for (std::size_t j = 0; j < ann.joints.size(); ++j) {
      x0 = std::min(x0, ann.joints[j][0]);
      y0 = std::min(y0, ann.joints[j][1]);
      x1 = std::max(x1, ann.joints[j][0]);
      y1 = std::max(y1, ann.joints[j][1]);
    }
  return {x0 - pad, y0 - pad, (x1 - x0) + 2 * pad, (y1 - y0) + 2 * pad};
}

// Scales width and height about the box center.
inline Bbox expand_bbox(const Bbox& b, double factor = 1.25) {
  if (b.w <= 0 || b.h <= 0)
    throw std::invalid_argument("expand_bbox: degenerate box " +
                                std::to_string(b.w) + "x" +
                                std::to_string(b.h));
  const double nw = b.w * factor, nh = b.h * factor;
  return {b.x - (nw - b.w) / 2, b.y - (nh - b.h) / 2, nw, nh};
}

inline Bbox clamp_bbox(const Bbox& b, std::size_t img_w, std::size_t img_h) {
  const double x0 = std::max(0.0, b.x);
  const double y0 = std::max(0.0, b.y);
  const double x1 = std::min(double(img_w), b.x + b.w);
  const double y1 = std::min(double(img_h), b.y + b.h);
  if (x1 <= x0 || y1 <= y0)
    throw std::invalid_argument("clamp_bbox: box lies outside the image");
  return {x0, y0, x1 - x0, y1 - y0};
}

// Maps source-image coordinates into the crop's pixel coordinates.
inline Affine2D crop_transform(const Bbox& rect, std::size_t out_w,
                               std::size_t out_h) {
  const double sx = double(out_w) / rect.w;
  const double sy = double(out_h) / rect.h;
  return Affine2D::scaling(sx, sy).compose(
      Affine2D::translation(-rect.x, -rect.y));
}

// Inverse-maps every output pixel through `transform` and samples the source
// image bilinearly; outside pixels read as zero.
template <class Real>
Tensor<Real> warp_image(const Tensor<Real>& image, const Affine2D& transform,
                        std::size_t out_h, std::size_t out_w) {
  const std::size_t c = image.shape()[0], h = image.shape()[1],
                    w = image.shape()[2];
  const Affine2D inv = transform.inverse();
  std::vector<Real> out(c * out_h * out_w, Real(0));
  const auto& v = image.data();
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto src = inv.apply(double(x), double(y));
      const double sx = src[0], sy = src[1];
      if (sx < -1 || sy < -1 || sx > double(w) || sy > double(h)) continue;
      const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto px = [&](int yy, int xx) -> double {
          if (xx < 0 || yy < 0 || xx >= int(w) || yy >= int(h)) return 0.0;
          return double(v[(ch * h + yy) * w + xx]);
        };
        const double val = (1 - fx) * (1 - fy) * px(y0, x0) +
                           fx * (1 - fy) * px(y0, x0 + 1) +
                           (1 - fx) * fy * px(y0 + 1, x0) +
                           fx * fy * px(y0 + 1, x0 + 1);
        out[(ch * out_h + y) * out_w + x] = Real(val);
      }
    }
  return Tensor<Real>::from_data({c, out_h, out_w}, std::move(out));
}

template <class Real>
struct CroppedWindow {
  FrameSequence<Real> frames;                 // model-input crops
  std::array<PoseAnnotation, 3> annotations;  // in crop coordinates
  Affine2D transform;                         // source -> crop pixels
};

// Expands the key-frame box, clamps it, and warps all three frames with the
// same transform so the person stays registered across time.
template <class Real>
CroppedWindow<Real> expand_and_crop(const SynthWindow<Real>& window,
                                    const Bbox& bbox, std::size_t out_h,
                                    std::size_t out_w, double factor = 1.25) {
  const std::size_t src_h = window.frames.frames[0].shape()[1];
  const std::size_t src_w = window.frames.frames[0].shape()[2];
  const Bbox rect = clamp_bbox(expand_bbox(bbox, factor), src_w, src_h);
  const Affine2D tf = crop_transform(rect, out_w, out_h);

  CroppedWindow<Real> out;
  out.transform = tf;
  for (int f = 0; f < 3; ++f) {
    out.frames.frames[f] =
        warp_image(window.frames.frames[f], tf, out_h, out_w);
    out.frames.frame_indices[f] = window.frames.frame_indices[f];
    PoseAnnotation ann = window.annotations[f];
    for (std::size_t j = 0; j < ann.joints.size(); ++j) {
      const auto p = tf.apply(ann.joints[j][0], ann.joints[j][1]);
      ann.joints[j] = {p[0], p[1]};
      if (p[0] < 0 || p[1] < 0 || p[0] > out_w - 1 || p[1] > out_h - 1)
        ann.visibility[j] = false;
    }
    out.annotations[f] = std::move(ann);
  }
  return out;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

enum class HalfBody { kNone, kUpper, kLower };

struct AugmentParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  bool flip = false;
  HalfBody half_body = HalfBody::kNone;
};

struct AugmentRanges {
  double max_rotation_deg = 45.0;
  double min_scale = 0.65;
  double max_scale = 1.35;
  double flip_prob = 0.5;
  double half_body_prob = 0.3;
};

inline AugmentParams sample_augment(Rng& rng, const AugmentRanges& r) {
  AugmentParams p;
  p.rotation_deg = rng.uniform(-r.max_rotation_deg, r.max_rotation_deg);
  p.scale = rng.uniform(r.min_scale, r.max_scale);
  p.flip = rng.bernoulli(r.flip_prob);
  if (rng.bernoulli(r.half_body_prob))
    p.half_body = rng.bernoulli(0.5) ? HalfBody::kUpper : HalfBody::kLower;
  return p;
}

// Builds the shared affine for a window. Rotation and scale act about the
// crop center; a half-body selection zooms onto the chosen joint subset.
inline Affine2D augment_transform(const AugmentParams& p, std::size_t img_w,
                                  std::size_t img_h,
                                  const PoseAnnotation& key_ann) {
  const double cx = (img_w - 1) / 2.0, cy = (img_h - 1) / 2.0;
  Affine2D tf = Affine2D::translation(cx, cy)
                    .compose(Affine2D::rotation(p.rotation_deg * M_PI / 180.0))
                    .compose(Affine2D::scaling(p.scale, p.scale))
                    .compose(Affine2D::translation(-cx, -cy));
  if (p.flip)
    tf = Affine2D{{-1, 0, double(img_w - 1), 0, 1, 0}}.compose(tf);

  if (p.half_body != HalfBody::kNone && key_ann.joints.size() == 15) {
    const std::size_t lo = p.half_body == HalfBody::kUpper ? 0 : 9;
    const std::size_t hi = p.half_body == HalfBody::kUpper ? 9 : 15;
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    int count = 0;
    for (std::size_t j = lo; j < hi; ++j) {
      if (!key_ann.visibility[j]) continue;
      ++count;
      x0 = std::min(x0, key_ann.joints[j][0]);
      y0 = std::min(y0, key_ann.joints[j][1]);
      x1 = std::max(x1, key_ann.joints[j][0]);
      y1 = std::max(y1, key_ann.joints[j][1]);
    }
    if (count >= 3 && x1 > x0 && y1 > y0) {
      Bbox half = expand_bbox({x0, y0, x1 - x0, y1 - y0}, 1.5);
      tf = crop_transform(half, img_w, img_h).compose(tf);
    }
  }
  return tf;
}

// One shared transform for all three frames and their annotations; flip also
// swaps the left/right joint identities.
template <class Real>
CroppedWindow<Real> augment(const CroppedWindow<Real>& window,
                            const AugmentParams& p) {
  const std::size_t h = window.frames.frames[0].shape()[1];
  const std::size_t w = window.frames.frames[0].shape()[2];
  const Affine2D tf = augment_transform(p, w, h, window.annotations[1]);

  CroppedWindow<Real> out;
  out.transform = tf.compose(window.transform);
  const auto pairs = flip_pairs(window.annotations[0].joints.size());
  for (int f = 0; f < 3; ++f) {
    out.frames.frames[f] = warp_image(window.frames.frames[f], tf, h, w);
    out.frames.frame_indices[f] = window.frames.frame_indices[f];
    PoseAnnotation ann = window.annotations[f];
    for (std::size_t j = 0; j < ann.joints.size(); ++j) {
      const auto q = tf.apply(ann.joints[j][0], ann.joints[j][1]);
      ann.joints[j] = {q[0], q[1]};
      if (q[0] < 0 || q[1] < 0 || q[0] > w - 1 || q[1] > h - 1)
        ann.visibility[j] = false;
    }
    if (p.flip) {
      for (auto [a, b] : pairs) {
        std::swap(ann.joints[a], ann.joints[b]);
        const bool va = ann.visibility[a];
        ann.visibility[a] = ann.visibility[b];
        ann.visibility[b] = va;
      }
    }
    out.annotations[f] = std::move(ann);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ground-truth heatmaps
// ---------------------------------------------------------------------------

// Unnormalized Gaussian with peak 1 centered on the joint's nearest heatmap
// pixel; invisible joints render as zero maps. `stride` maps input pixels to
// heatmap pixels.
template <class Real>
Heatmaps<Real> render_gt_heatmaps(const PoseAnnotation& ann, std::size_t hm_h,
                                  std::size_t hm_w, double sigma,
                                  double stride = 4.0) {
  const std::size_t j = ann.joints.size();
  std::vector<Real> maps(j * hm_h * hm_w, Real(0));
  for (std::size_t k = 0; k < j; ++k) {
    if (!ann.visibility[k]) continue;
    const double jx = ann.joints[k][0] / stride;
    const double jy = ann.joints[k][1] / stride;
    const long cx = std::lround(jx), cy = std::lround(jy);
    if (cx < 0 || cy < 0 || cx >= long(hm_w) || cy >= long(hm_h)) continue;
    for (std::size_t y = 0; y < hm_h; ++y)
      for (std::size_t x = 0; x < hm_w; ++x) {
        const double d2 = (double(x) - cx) * (double(x) - cx) +
                          (double(y) - cy) * (double(y) - cy);
        maps[(k * hm_h + y) * hm_w + x] =
            Real(std::exp(-d2 / (2 * sigma * sigma)));
      }
  }
  return {Tensor<Real>::from_data({j, hm_h, hm_w}, std::move(maps))};
}

// ---------------------------------------------------------------------------
// image and dataset files
// ---------------------------------------------------------------------------

inline constexpr const char* kSynthFormatTag = "vremd-synth v1";

template <class Real>
void write_pgm(const std::string& path, const Tensor<Real>& image) {
  const std::size_t h = image.shape()[image.rank() - 2];
  const std::size_t w = image.shape()[image.rank() - 1];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::min(1.0, std::max(0.0, double(image.data()[i])));
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <class Real>
Tensor<Real> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255)
    throw std::runtime_error("unsupported PGM file: " + path);
  in.get();  // single whitespace after the header
  std::vector<unsigned char> bytes(h * w);
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("truncated PGM file: " + path);
  std::vector<Real> data(h * w);
  for (std::size_t i = 0; i < h * w; ++i) data[i] = Real(bytes[i]) / Real(255);
  return Tensor<Real>::from_data({1, h, w}, std::move(data));
}

// RGB overlay writer.
inline void write_ppm(const std::string& path,
                      const std::vector<std::array<unsigned char, 3>>& pixels,
                      std::size_t h, std::size_t w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (const auto& p : pixels)
    out.write(reinterpret_cast<const char*>(p.data()), 3);
}

template <class Real>
void write_window(const std::string& dir, const SynthWindow<Real>& window) {
  std::filesystem::create_directories(dir);
  for (int f = 0; f < 3; ++f)
    write_pgm(dir + "/frame_" + std::to_string(f) + ".pgm",
              window.frames.frames[f]);
  std::ofstream out(dir + "/annotations.txt");
  if (!out) throw std::runtime_error("cannot write annotations in " + dir);
  out << kSynthFormatTag << "\n";
  char buf[128];
  for (int f = 0; f < 3; ++f) {
    const auto& ann = window.annotations[f];
    for (std::size_t j = 0; j < ann.joints.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%d %zu %.17g %.17g %d\n", f, j,
                    ann.joints[j][0], ann.joints[j][1],
                    ann.visibility[j] ? 1 : 0);
      out << buf;
    }
  }
}

template <class Real>
SynthWindow<Real> read_window(const std::string& dir) {
  SynthWindow<Real> window;
  for (int f = 0; f < 3; ++f) {
    window.frames.frames[f] =
        read_pgm<Real>(dir + "/frame_" + std::to_string(f) + ".pgm");
    window.frames.frame_indices[f] = f;
  }
  std::ifstream in(dir + "/annotations.txt");
  if (!in) throw std::runtime_error("cannot read annotations in " + dir);
  std::string header;
  std::getline(in, header);
  if (header != kSynthFormatTag)
    throw std::runtime_error("unrecognized annotation format in " + dir +
                             ": \"" + header + "\"");
  int f = 0, vis = 0;
  std::size_t j = 0;
  double x = 0, y = 0;
  while (in >> f >> j >> x >> y >> vis) {
    auto& ann = window.annotations[f];
    if (ann.joints.size() <= j) {
      ann.joints.resize(j + 1);
      ann.visibility.resize(j + 1);
    }
    ann.joints[j] = {x, y};
    ann.visibility[j] = vis != 0;
    ann.frame_index = f;
  }
  return window;
}

}  // namespace vremd
