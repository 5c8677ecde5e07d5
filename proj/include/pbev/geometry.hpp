#pragma once

// Box parameterization and rotated-rectangle geometry in the BEV plane.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbev/common.hpp"

namespace pbev {

inline constexpr std::size_t kBoxParams = 10;
using BoxParams = std::array<double, kBoxParams>;

// 3D box in the BEV/world frame. (w, h) are the footprint extents along the
// box's local x/y axes, l is the vertical extent. Yaw is stored as a unit
// (sin, cos) pair.
struct BevBox {
  double cx{0.0}, cy{0.0}, cz{0.0};
  double w{1.0}, h{1.0}, l{1.0};
  double sin_yaw{0.0}, cos_yaw{1.0};
  double vx{0.0}, vy{0.0};
  int class_id{0};
  double confidence{1.0};
  std::string attribute;  // empty = unlabelled

  double yaw() const { return std::atan2(sin_yaw, cos_yaw); }
  Vec2 center() const { return {cx, cy}; }
  Vec2 velocity() const { return {vx, vy}; }

  // (cx, cy, cz, w, h, l, sin, cos, vx, vy)
  BoxParams params() const { return {cx, cy, cz, w, h, l, sin_yaw, cos_yaw, vx, vy}; }

  void set_params(const BoxParams& p) {
    cx = p[0], cy = p[1], cz = p[2];
    w = p[3], h = p[4], l = p[5];
    sin_yaw = p[6], cos_yaw = p[7];
    vx = p[8], vy = p[9];
  }

  void set_yaw(double theta) {
    sin_yaw = std::sin(theta);
    cos_yaw = std::cos(theta);
  }
};

// Throws InvalidBoxError if the box breaks an invariant.
inline void validate(const BevBox& b) {
  for (double v : b.params()) {
    if (!std::isfinite(v)) throw InvalidBoxError("box has non-finite parameter");
  }
  if (!(b.w > 0.0 && b.h > 0.0 && b.l > 0.0)) throw InvalidBoxError("box extents must be positive");
  if (std::abs(b.sin_yaw * b.sin_yaw + b.cos_yaw * b.cos_yaw - 1.0) > 1e-6)
    throw InvalidBoxError("yaw (sin, cos) pair is not unit length");
  if (!(b.confidence >= 0.0 && b.confidence <= 1.0)) throw InvalidBoxError("confidence outside [0, 1]");
}

// Renormalizes the yaw pair and validates. A zero (sin, cos) pair is invalid.
inline BevBox normalized(BevBox b) {
  const double n = std::hypot(b.sin_yaw, b.cos_yaw);
  if (!(n > 0.0) || !std::isfinite(n)) throw InvalidBoxError("yaw (sin, cos) pair has zero length");
  b.sin_yaw /= n;
  b.cos_yaw /= n;
  validate(b);
  return b;
}

inline BevBox make_box(double cx, double cy, double w, double h, double yaw, int class_id = 0,
                       double confidence = 1.0) {
  BevBox b;
  b.cx = cx;
  b.cy = cy;
  b.w = w;
  b.h = h;
  b.set_yaw(yaw);
  b.class_id = class_id;
  b.confidence = confidence;
  return normalized(std::move(b));
}

// Polygons -------------------------------------------------------------------

using Quad = std::array<Vec2, 4>;

// Corners of the rotated footprint, counter-clockwise.
inline Quad footprint_polygon(const BevBox& b) {
  const double hw = 0.5 * b.w, hh = 0.5 * b.h;
  const double c = b.cos_yaw, s = b.sin_yaw;
  const std::array<Vec2, 4> local{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
  Quad out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {b.cx + c * local[i].x - s * local[i].y, b.cy + s * local[i].x + c * local[i].y};
  }
  return out;
}

// Signed shoelace area; positive for CCW order.
inline double polygon_area(std::span<const Vec2> poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    acc += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * acc;
}

// Sutherland-Hodgman: clip `subject` against the convex CCW polygon `clip`.
inline std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  std::vector<Vec2> in;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    const Vec2 edge = b - a;
    in.swap(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2 p = in[i];
      const Vec2 q = in[(i + 1) % in.size()];
      const double sp = cross(edge, p - a);
      const double sq = cross(edge, q - a);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

inline double footprint_area(const BevBox& b) {
  const Quad q = footprint_polygon(b);
  return polygon_area(q);
}

inline double center_distance_2d(const BevBox& a, const BevBox& b) {
  return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

namespace detail {
inline bool box_less(const BevBox& a, const BevBox& b) { return a.params() < b.params(); }
}  // namespace detail

// IoU of the two BEV footprints. Evaluated in a canonical argument order so
// the result is bit-identical under swapping.
inline double rotated_iou(const BevBox& a, const BevBox& b) {
  constexpr double kMinArea = 1e-12;
  const double area_a = a.w * a.h;
  const double area_b = b.w * b.h;
  if (!(area_a > kMinArea) || !(area_b > kMinArea) || !std::isfinite(area_a) || !std::isfinite(area_b))
    throw InvalidBoxError("degenerate footprint in rotated_iou");

  const BevBox& p = detail::box_less(b, a) ? b : a;
  const BevBox& q = detail::box_less(b, a) ? a : b;

  const double reach = 0.5 * (std::hypot(p.w, p.h) + std::hypot(q.w, q.h));
  if (center_distance_2d(p, q) > reach) return 0.0;

  const Quad pp = footprint_polygon(p);
  const Quad qq = footprint_polygon(q);
  const double inter = std::max(0.0, polygon_area(clip_convex(pp, qq)));
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// Box-delta update -----------------------------------------------------------

// Decoder-stage output. (d_cx, d_cy) are offsets relative to the rotated
// extents, (d_w, d_h) log-scale factors, d_theta an additive yaw. cz, l, vx,
// vy are absolute predictions; when unset the input box's values carry over.
struct BoxDelta {
  double d_cx{0.0}, d_cy{0.0};
  double d_w{0.0}, d_h{0.0};
  double d_theta{0.0};
  std::optional<double> cz, l, vx, vy;
};

struct BoxUpdate {
  BevBox box;
  double w_bar{0.0};  // w cos(theta) + h sin(theta)
  double h_bar{0.0};  // w sin(theta) + h cos(theta)

  // The update basis is used verbatim; for some yaws it is negative.
  bool negative_basis() const { return w_bar < 0.0 || h_bar < 0.0; }
};

inline constexpr double kMaxLogScaleDelta = 10.0;

inline BoxUpdate apply_box_delta(const BevBox& box, const BoxDelta& d) {
  validate(box);
  const std::array<double, 5> core{d.d_cx, d.d_cy, d.d_w, d.d_h, d.d_theta};
  for (double v : core) {
    if (!std::isfinite(v)) throw DomainError("box delta has non-finite component");
  }
  if (std::abs(d.d_w) > kMaxLogScaleDelta || std::abs(d.d_h) > kMaxLogScaleDelta)
    throw DomainError("log-scale delta magnitude exceeds 10");

  const double s = box.sin_yaw, c = box.cos_yaw;
  BoxUpdate out;
  out.w_bar = box.w * c + box.h * s;
  out.h_bar = box.w * s + box.h * c;

  BevBox& nb = out.box;
  nb = box;
  nb.cx = out.w_bar * d.d_cx + box.cx;
  nb.cy = out.h_bar * d.d_cy + box.cy;
  nb.w = std::exp(d.d_w) * box.w;
  nb.h = std::exp(d.d_h) * box.h;
  if (d.d_theta != 0.0) nb.set_yaw(box.yaw() + d.d_theta);
  if (d.cz) nb.cz = *d.cz;
  if (d.l) nb.l = *d.l;
  if (d.vx) nb.vx = *d.vx;
  if (d.vy) nb.vy = *d.vy;
  validate(nb);
  return out;
}

// BEV extent -----------------------------------------------------------------

struct BevExtent {
  double x_min{-51.2}, x_max{51.2};
  double y_min{-51.2}, y_max{51.2};
  int grid_h{200}, grid_w{200};

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  Vec2 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
  bool contains(Vec2 p) const { return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max; }

  friend bool operator==(const BevExtent&, const BevExtent&) = default;
};

inline void validate(const BevExtent& e) {
  if (!(e.x_max > e.x_min) || !(e.y_max > e.y_min)) throw DomainError("extent bounds are not increasing");
  if (e.grid_h <= 0 || e.grid_w <= 0) throw DomainError("extent grid dimensions must be positive");
}

struct NormalizedPoint {
  Vec2 uv;
  bool inside{true};  // false when the source point lies outside the extent
};

inline NormalizedPoint normalize_center(Vec2 p, const BevExtent& e) {
  NormalizedPoint out;
  out.uv = {(p.x - e.x_min) / e.width(), (p.y - e.y_min) / e.height()};
  out.inside = e.contains(p);
  return out;
}

inline Vec2 denormalize_center(Vec2 uv, const BevExtent& e) {
  return {e.x_min + uv.x * e.width(), e.y_min + uv.y * e.height()};
}

}  // namespace pbev
