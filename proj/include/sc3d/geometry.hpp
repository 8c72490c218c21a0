#pragma once

// Points, oriented boxes and planar pose offsets.
//
// Frame convention: right-handed, z up, tracking happens in the x/y ground
// plane. Yaw is a counter-clockwise rotation about +z seen from above. In
// the box frame the width runs along local x, the length along local y and
// the height along z; `center` is the geometric center of the box.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "sc3d/errors.hpp"

namespace sc3d {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;

  double dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
  double squared_norm() const { return dot(*this); }
  double norm() const { return std::sqrt(squared_norm()); }
};

inline double squared_distance(Vec3 a, Vec3 b) { return (a - b).squared_norm(); }

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensity;  // empty, or one value per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensity.empty(); }

  void append(const PointCloud& other) {
    const bool keep_intensity = has_intensity() || empty();
    points.insert(points.end(), other.points.begin(), other.points.end());
    if (keep_intensity && other.has_intensity()) {
      intensity.insert(intensity.end(), other.intensity.begin(), other.intensity.end());
    } else {
      intensity.clear();
    }
  }
};

struct BoxSize {
  double width = 1.0, height = 1.0, length = 1.0;
  friend bool operator==(const BoxSize&, const BoxSize&) = default;
};

struct Box3D {
  Vec3 center;
  BoxSize size;
  double yaw = 0.0;  // radians, (-pi, pi]
  friend bool operator==(const Box3D&, const Box3D&) = default;

  double volume() const { return size.width * size.height * size.length; }
};

// Planar perturbation of a reference box, expressed in the box's own frame.
struct PoseOffset {
  double t_x = 0.0;    // meters along local x
  double t_y = 0.0;    // meters along local y
  double alpha = 0.0;  // degrees, (-180, 180]
  friend bool operator==(const PoseOffset&, const PoseOffset&) = default;
};

inline constexpr double kPi = std::numbers::pi;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

// Wraps to (-pi, pi].
inline double normalize_angle(double rad) {
  double a = std::fmod(rad, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

// Wraps to (-180, 180].
inline double normalize_degrees(double deg) {
  double a = std::fmod(deg, 360.0);
  if (a <= -180.0) a += 360.0;
  if (a > 180.0) a -= 360.0;
  return a;
}

// Box frame -> world frame.
inline Vec3 box_to_world(const Box3D& box, Vec3 local) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  return {box.center.x + c * local.x - s * local.y, box.center.y + s * local.x + c * local.y,
          box.center.z + local.z};
}

// World frame -> box frame.
inline Vec3 world_to_box(const Box3D& box, Vec3 p) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Vec3 d = p - box.center;
  return {c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
}

// How a box is enlarged before gathering its points.
struct CropPolicy {
  double scale = 1.25;  // multiplies every dimension about the center
  double margin = 0.0;  // meters added on each side after scaling

  Box3D apply(const Box3D& box) const {
    Box3D b = box;
    b.size.width = box.size.width * scale + 2.0 * margin;
    b.size.height = box.size.height * scale + 2.0 * margin;
    b.size.length = box.size.length * scale + 2.0 * margin;
    return b;
  }
};

// Points strictly inside `box` (open box) after scaling its size by
// `scale` about its center. Input order is preserved.
inline PointCloud points_in_box(const PointCloud& cloud, const Box3D& box, double scale = 1.0) {
  if (!(scale > 0.0)) throw PreconditionError("points_in_box: scale must be positive");
  const double hw = 0.5 * box.size.width * scale;
  const double hl = 0.5 * box.size.length * scale;
  const double hh = 0.5 * box.size.height * scale;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  PointCloud out;
  const bool with_intensity = cloud.has_intensity();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 d = cloud.points[i] - box.center;
    const double lx = c * d.x + s * d.y;
    const double ly = -s * d.x + c * d.y;
    if (std::abs(lx) < hw && std::abs(ly) < hl && std::abs(d.z) < hh) {
      out.points.push_back(cloud.points[i]);
      if (with_intensity) out.intensity.push_back(cloud.intensity[i]);
    }
  }
  return out;
}

inline PointCloud crop(const PointCloud& cloud, const Box3D& box, const CropPolicy& policy) {
  return points_in_box(cloud, policy.apply(box), 1.0);
}

// Expresses points in the frame of `box`: translate by -center, rotate by -yaw.
inline PointCloud canonicalize(const PointCloud& cloud, const Box3D& box) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back(world_to_box(box, p));
  out.intensity = cloud.intensity;
  return out;
}

// Exactly n points. Larger clouds are subsampled without replacement; smaller
// ones keep every point and are padded with uniform draws with replacement;
// an empty cloud becomes n copies of the origin.
template <class Rng>
PointCloud resample(const PointCloud& cloud, std::size_t n, Rng& rng) {
  if (n < 1) throw PreconditionError("resample: target size must be >= 1");
  PointCloud out;
  out.points.reserve(n);
  const bool with_intensity = cloud.has_intensity();
  if (cloud.empty()) {
    out.points.assign(n, Vec3{});
    return out;
  }
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (cloud.size() >= n) {
    // Partial Fisher-Yates: the first n slots become a uniform subset.
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
    while (idx.size() < n) idx.push_back(pick(rng));
  }
  for (std::size_t i : idx) {
    out.points.push_back(cloud.points[i]);
    if (with_intensity) out.intensity.push_back(cloud.intensity[i]);
  }
  return out;
}

inline Box3D apply_offset(const Box3D& box, const PoseOffset& off) {
  Box3D out = box;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  out.center.x += c * off.t_x - s * off.t_y;
  out.center.y += s * off.t_x + c * off.t_y;
  out.yaw = normalize_angle(box.yaw + deg_to_rad(off.alpha));
  return out;
}

// Offset that maps `from` onto `to` (inverse of apply_offset in the plane).
inline PoseOffset offset_between(const Box3D& from, const Box3D& to) {
  const Vec3 local = world_to_box(from, to.center);
  return {local.x, local.y, normalize_degrees(rad_to_deg(to.yaw - from.yaw))};
}

inline double offset_norm(const PoseOffset& off) {
  const double a = off.alpha / 5.0;
  return std::sqrt(off.t_x * off.t_x + off.t_y * off.t_y + a * a);
}

// sqrt(dx^2 + dy^2 + (dalpha_deg / 5)^2) with the yaw difference wrapped.
inline double pose_distance(const Box3D& a, const Box3D& b) {
  const double dx = a.center.x - b.center.x;
  const double dy = a.center.y - b.center.y;
  const double da = normalize_degrees(rad_to_deg(a.yaw - b.yaw)) / 5.0;
  return std::sqrt(dx * dx + dy * dy + da * da);
}

inline double center_error(const Box3D& a, const Box3D& b, bool bev = false) {
  const double dx = a.center.x - b.center.x;
  const double dy = a.center.y - b.center.y;
  const double dz = bev ? 0.0 : a.center.z - b.center.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// ---------------------------------------------------------------------------
// Overlap via convex polygon clipping of the two ground-plane rectangles.

struct Vec2 {
  double x = 0.0, y = 0.0;
};

using Polygon = std::vector<Vec2>;

// Counter-clockwise ground-plane corners.
inline std::array<Vec2, 4> bev_corners(const Box3D& box) {
  const double hw = 0.5 * box.size.width, hl = 0.5 * box.size.length;
  const std::array<Vec3, 4> local{Vec3{-hw, -hl, 0}, Vec3{hw, -hl, 0}, Vec3{hw, hl, 0},
                                  Vec3{-hw, hl, 0}};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    const Vec3 w = box_to_world(box, local[i]);
    out[i] = {w.x, w.y};
  }
  return out;
}

inline double polygon_area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    twice += a.x * b.y - a.y * b.x;
  }
  return 0.5 * std::abs(twice);
}

// Sutherland-Hodgman clip of `subject` against a convex counter-clockwise `clip`.
inline Polygon clip_convex(Polygon subject, const Polygon& clip) {
  auto side = [](Vec2 a, Vec2 b, Vec2 p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  };
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2 a = clip[e], b = clip[(e + 1) % clip.size()];
    Polygon next;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2 p = subject[i], q = subject[(i + 1) % subject.size()];
      const double sp = side(a, b, p), sq = side(a, b, q);
      if (sp >= 0.0) next.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        next.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    subject = std::move(next);
  }
  return subject;
}

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a), cb = bev_corners(b);
  const Polygon inter = clip_convex(Polygon(ca.begin(), ca.end()), Polygon(cb.begin(), cb.end()));
  return inter.size() < 3 ? 0.0 : polygon_area(inter);
}

inline double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  const double area_a = a.size.width * a.size.length, area_b = b.size.width * b.size.length;
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  const double za0 = a.center.z - 0.5 * a.size.height, za1 = a.center.z + 0.5 * a.size.height;
  const double zb0 = b.center.z - 0.5 * b.size.height, zb1 = b.center.z + 0.5 * b.size.height;
  const double overlap_z = std::max(0.0, std::min(za1, zb1) - std::max(za0, zb0));
  if (overlap_z <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * overlap_z;
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

}  // namespace sc3d
