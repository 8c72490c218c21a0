#pragma once

// Procedural LIDAR scenes: car-like shells driving along lanes past a sensor
// at the origin, with ground, roadside clutter, back-face culling, mutual
// occlusion between cars, range falloff, dropout and Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "sc3d/data_io.hpp"
#include "sc3d/errors.hpp"
#include "sc3d/geometry.hpp"

namespace sc3d {

struct SyntheticConfig {
  std::size_t frames = 20;
  BoxSize mean_size{1.8, 1.5, 4.2};
  double size_sigma = 0.1;
  double ground_z = -1.7;  // sensor sits at the origin

  std::size_t shell_points = 1000;  // samples over the whole shell surface
  double noise_sigma = 0.02;
  double dropout = 0.1;
  double falloff_range = 6.0;  // keep probability (r0 / r)^2 beyond r0; 0 disables
  bool cull = true;
  bool occlusion = true;
  bool resample_surface = true;  // fresh surface samples every frame

  double min_speed = 0.0, max_speed = 1.2;  // meters per frame
  double max_yaw_rate_deg = 1.0;
  double min_start = 15.0, max_start = 30.0;  // initial distance ahead along the lane, meters
  std::optional<double> speed;         // overrides the random draw
  std::optional<double> yaw_rate_deg;  // overrides the random draw
  std::optional<double> lane_y;        // first car's lane

  std::size_t ground_points = 2500;
  double ground_radius = 25.0;
  std::size_t clutter_objects = 8;
  double clutter_density = 25.0;  // points per square meter before falloff

  void validate() const {
    if (frames < 1) throw ConfigError("synthetic: frames must be >= 1");
    if (!(mean_size.width > 0.0 && mean_size.height > 0.0 && mean_size.length > 0.0)) {
      throw ConfigError("synthetic: mean size must be positive");
    }
    if (size_sigma < 0.0 || noise_sigma < 0.0) throw ConfigError("synthetic: sigmas must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("synthetic: dropout must be in [0, 1)");
    if (shell_points < 1) throw ConfigError("synthetic: shell_points must be >= 1");
    if (min_speed < 0.0 || max_speed < min_speed) throw ConfigError("synthetic: bad speed range");
    if (speed && *speed < 0.0) throw ConfigError("synthetic: speed must be >= 0");
    if (falloff_range < 0.0 || max_yaw_rate_deg < 0.0) throw ConfigError("synthetic: negative range");
    if (min_start > max_start) throw ConfigError("synthetic: bad start range");
  }
};

// ---------------------------------------------------------------------------
// Car shells

struct SurfacePatch {
  enum class Kind { rectangle, disc } kind = Kind::rectangle;
  Vec3 center, u, v;  // rectangle: half-extent vectors; disc: unit in-plane axes
  Vec3 normal;
  double radius = 0.0;

  double area() const {
    if (kind == Kind::disc) return kPi * radius * radius;
    return 4.0 * std::sqrt(u.squared_norm() * v.squared_norm());
  }
};

struct CarShape {
  BoxSize size;
  std::vector<SurfacePatch> patches;
};

struct OrientedPoint {
  Vec3 position, normal;
};

namespace detail {

inline void add_box_faces(std::vector<SurfacePatch>& out, Vec3 lo, Vec3 hi, bool bottom) {
  const Vec3 c = 0.5 * (lo + hi);
  const Vec3 h = 0.5 * (hi - lo);
  auto rect = [&](Vec3 center, Vec3 u, Vec3 v, Vec3 n) {
    out.push_back({SurfacePatch::Kind::rectangle, center, u, v, n, 0.0});
  };
  rect({hi.x, c.y, c.z}, {0, h.y, 0}, {0, 0, h.z}, {1, 0, 0});
  rect({lo.x, c.y, c.z}, {0, h.y, 0}, {0, 0, h.z}, {-1, 0, 0});
  rect({c.x, hi.y, c.z}, {h.x, 0, 0}, {0, 0, h.z}, {0, 1, 0});
  rect({c.x, lo.y, c.z}, {h.x, 0, 0}, {0, 0, h.z}, {0, -1, 0});
  rect({c.x, c.y, hi.z}, {h.x, 0, 0}, {0, h.y, 0}, {0, 0, 1});
  if (bottom) rect({c.x, c.y, lo.z}, {h.x, 0, 0}, {0, h.y, 0}, {0, 0, -1});
}

}  // namespace detail

// Lower body, cabin and four wheels inside the box [-w/2, w/2] x [-l/2, l/2] x [-h/2, h/2].
template <class Rng>
CarShape make_car_shape(const BoxSize& size, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto lerp = [&](double a, double b) { return a + (b - a) * u01(rng); };
  const double w = size.width, h = size.height, l = size.length;
  const double clearance = lerp(0.12, 0.2) * h;
  const double belt = lerp(0.5, 0.6) * h;
  const double cabin_len = lerp(0.4, 0.6) * l;
  const double cabin_shift = lerp(-0.1, 0.05) * l;
  const double cabin_w = lerp(0.8, 0.9) * w;

  CarShape shape;
  shape.size = size;
  const double z0 = -0.5 * h;
  detail::add_box_faces(shape.patches, {-0.5 * w, -0.5 * l, z0 + clearance}, {0.5 * w, 0.5 * l, z0 + belt}, true);
  const double cy0 = std::max(-0.5 * l, cabin_shift - 0.5 * cabin_len);
  const double cy1 = std::min(0.5 * l, cabin_shift + 0.5 * cabin_len);
  detail::add_box_faces(shape.patches, {-0.5 * cabin_w, cy0, z0 + belt}, {0.5 * cabin_w, cy1, 0.5 * h}, false);

  const double r = std::min(clearance + 0.12 * h, 0.2 * l);
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0}) {
      SurfacePatch disc;
      disc.kind = SurfacePatch::Kind::disc;
      disc.center = {sx * (0.5 * w - 0.005), sy * 0.3 * l, z0 + r};
      disc.u = {0, 1, 0};
      disc.v = {0, 0, 1};
      disc.normal = {sx, 0, 0};
      disc.radius = r;
      shape.patches.push_back(disc);
    }
  return shape;
}

// Area-weighted surface samples in the car's own frame.
template <class Rng>
std::vector<OrientedPoint> sample_shell(const CarShape& shape, std::size_t n, Rng& rng) {
  std::vector<double> areas;
  for (const SurfacePatch& p : shape.patches) areas.push_back(p.area());
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> sym(-1.0, 1.0), u01(0.0, 1.0);
  std::vector<OrientedPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SurfacePatch& p = shape.patches[pick(rng)];
    Vec3 q;
    if (p.kind == SurfacePatch::Kind::rectangle) {
      q = p.center + sym(rng) * p.u + sym(rng) * p.v;
    } else {
      const double rr = p.radius * std::sqrt(u01(rng));
      const double th = 2.0 * kPi * u01(rng);
      q = p.center + (rr * std::cos(th)) * p.u + (rr * std::sin(th)) * p.v;
    }
    out.push_back({q, p.normal});
  }
  return out;
}

// Completed canonical shell, the synthetic stand-in for a CAD shape collection.
template <class Rng>
PointCloud complete_shell_cloud(const CarShape& shape, std::size_t n, Rng& rng) {
  PointCloud out;
  for (const OrientedPoint& p : sample_shell(shape, n, rng)) out.points.push_back(p.position);
  return out;
}

inline Box3D shell_bounds(const CarShape& shape) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const SurfacePatch& p : shape.patches) {
    std::vector<Vec3> corners;
    if (p.kind == SurfacePatch::Kind::rectangle) {
      for (double a : {-1.0, 1.0})
        for (double b : {-1.0, 1.0}) corners.push_back(p.center + a * p.u + b * p.v);
    } else {
      for (double a : {-1.0, 1.0}) {
        corners.push_back(p.center + (a * p.radius) * p.u);
        corners.push_back(p.center + (a * p.radius) * p.v);
      }
    }
    for (const Vec3& c : corners) {
      lo = {std::min(lo.x, c.x), std::min(lo.y, c.y), std::min(lo.z, c.z)};
      hi = {std::max(hi.x, c.x), std::max(hi.y, c.y), std::max(hi.z, c.z)};
    }
  }
  Box3D b;
  b.center = 0.5 * (lo + hi);
  b.size = {hi.x - lo.x, hi.z - lo.z, hi.y - lo.y};
  return b;
}

// ---------------------------------------------------------------------------
// Scenes

struct SyntheticCar {
  int track_id = 0;
  CarShape shape;
  std::vector<Box3D> boxes;  // one per frame
  std::vector<OrientedPoint> fixed_surface;
};

struct SyntheticScene {
  Scene scene;
  std::vector<SyntheticCar> cars;
};

namespace detail {

// Entry parameter in [0, 1] of the segment origin->p into a box footprint, if any.
inline std::optional<double> footprint_entry(Vec3 p, const Box3D& box) {
  const Vec3 a = world_to_box(box, Vec3{0, 0, 0});
  const Vec3 b = world_to_box(box, p);
  const double d[2] = {b.x - a.x, b.y - a.y};
  const double s[2] = {a.x, a.y};
  const double half[2] = {0.5 * box.size.width, 0.5 * box.size.length};
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d[k]) < 1e-12) {
      if (std::abs(s[k]) > half[k]) return std::nullopt;
      continue;
    }
    double ta = (-half[k] - s[k]) / d[k], tb = (half[k] - s[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

// True when a car other than `self` hides p from the sensor at the origin.
inline bool occluded_by_cars(Vec3 p, const std::vector<Box3D>& cars, std::ptrdiff_t self) {
  for (std::size_t c = 0; c < cars.size(); ++c) {
    if (static_cast<std::ptrdiff_t>(c) == self) continue;
    const auto t = footprint_entry(p, cars[c]);
    if (!t || *t >= 1.0 - 1e-9) continue;
    const double ray_z = *t * p.z;
    if (ray_z < cars[c].center.z + 0.5 * cars[c].size.height) return true;
  }
  return false;
}

struct Clutter {
  std::vector<OrientedPoint> surface;  // world frame
};

template <class Rng>
Clutter make_clutter(const SyntheticConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto lerp = [&](double a, double b) { return a + (b - a) * u01(rng); };
  auto density_count = [&](double area) {
    return static_cast<std::size_t>(std::max(1.0, std::round(area * cfg.clutter_density)));
  };
  Clutter c;
  for (std::size_t i = 0; i < cfg.clutter_objects; ++i) {
    const double x = lerp(-cfg.ground_radius, cfg.ground_radius);
    const double y = (u01(rng) < 0.5 ? -1.0 : 1.0) * lerp(9.5, 13.0);
    const int kind = static_cast<int>(u01(rng) * 3.0);
    if (kind == 0) {
      const double r = lerp(0.1, 0.2), height = lerp(2.5, 4.0);
      const std::size_t n = density_count(2.0 * kPi * r * height);
      for (std::size_t k = 0; k < n; ++k) {
        const double th = 2.0 * kPi * u01(rng);
        const Vec3 nrm{std::cos(th), std::sin(th), 0.0};
        c.surface.push_back({Vec3{x, y, cfg.ground_z + height * u01(rng)} + r * nrm, nrm});
      }
    } else if (kind == 1) {
      const double len = lerp(3.0, 8.0), height = lerp(1.0, 2.0), th = lerp(-0.3, 0.3);
      const Vec3 along{std::cos(th), std::sin(th), 0.0};
      Vec3 nrm{-along.y, along.x, 0.0};
      if (nrm.dot(Vec3{-x, -y, 0.0}) < 0.0) nrm = -1.0 * nrm;
      const std::size_t n = density_count(len * height);
      for (std::size_t k = 0; k < n; ++k) {
        c.surface.push_back({Vec3{x, y, cfg.ground_z + height * u01(rng)} + (len * (u01(rng) - 0.5)) * along, nrm});
      }
    } else {
      const double r = lerp(0.5, 1.0);
      const std::size_t n = density_count(4.0 * kPi * r * r);
      std::normal_distribution<double> g(0.0, 1.0);
      for (std::size_t k = 0; k < n; ++k) {
        Vec3 d{g(rng), g(rng), g(rng)};
        d = (1.0 / std::max(d.norm(), 1e-12)) * d;
        const Vec3 p = Vec3{x, y, cfg.ground_z + 0.3 * r} + r * d;
        if (p.z > cfg.ground_z) c.surface.push_back({p, d});
      }
    }
  }
  return c;
}

}  // namespace detail

inline const std::vector<double>& default_lanes() {
  static const std::vector<double> lanes{-6.0, -2.0, 3.0, 7.0};
  return lanes;
}

template <class Rng>
SyntheticCar make_synthetic_car(const SyntheticConfig& cfg, int track_id, double lane_y, Rng& rng) {
  std::normal_distribution<double> size_noise(0.0, cfg.size_sigma);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SyntheticCar car;
  car.track_id = track_id;
  BoxSize size{cfg.mean_size.width + size_noise(rng), cfg.mean_size.height + size_noise(rng),
               cfg.mean_size.length + size_noise(rng)};
  size.width = std::max(size.width, 0.5);
  size.height = std::max(size.height, 0.5);
  size.length = std::max(size.length, 1.0);
  car.shape = make_car_shape(size, rng);

  const double v = cfg.speed ? *cfg.speed : cfg.min_speed + (cfg.max_speed - cfg.min_speed) * u01(rng);
  const double omega = deg_to_rad(cfg.yaw_rate_deg ? *cfg.yaw_rate_deg
                                                   : cfg.max_yaw_rate_deg * (2.0 * u01(rng) - 1.0));
  const double dir = lane_y < 0.0 ? 1.0 : -1.0;
  double heading = dir > 0.0 ? 0.0 : kPi;
  Vec3 pos{-dir * (cfg.min_start + (cfg.max_start - cfg.min_start) * u01(rng)), lane_y,
           cfg.ground_z + 0.5 * size.height};
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    Box3D b;
    b.center = pos;
    b.size = size;
    b.yaw = normalize_angle(heading - 0.5 * kPi);
    car.boxes.push_back(b);
    pos.x += v * std::cos(heading);
    pos.y += v * std::sin(heading);
    heading += omega;
  }
  if (!cfg.resample_surface) car.fixed_surface = sample_shell(car.shape, cfg.shell_points, rng);
  return car;
}

// Renders one frame; `occlusion_fraction` receives each car's share of
// points lost to other cars.
template <class Rng>
PointCloud render_frame(const SyntheticConfig& cfg, const std::vector<SyntheticCar>& cars,
                        const detail::Clutter& clutter, std::size_t t, Rng& rng,
                        std::vector<double>* occlusion_fraction = nullptr) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Box3D> boxes;
  for (const SyntheticCar& c : cars) boxes.push_back(c.boxes[t]);

  PointCloud out;
  auto survives = [&](Vec3 p, Vec3 n) {
    if (cfg.cull && n.dot(Vec3{0, 0, 0} - p) <= 0.0) return false;
    if (cfg.falloff_range > 0.0) {
      const double r = p.norm();
      if (r > cfg.falloff_range) {
        const double keep = (cfg.falloff_range / r) * (cfg.falloff_range / r);
        if (u01(rng) >= keep) return false;
      }
    }
    if (cfg.dropout > 0.0 && u01(rng) < cfg.dropout) return false;
    return true;
  };
  auto emit = [&](Vec3 p) {
    if (cfg.noise_sigma > 0.0) {
      p = p + Vec3{cfg.noise_sigma * noise(rng), cfg.noise_sigma * noise(rng), cfg.noise_sigma * noise(rng)};
    }
    out.points.push_back(p);
  };

  if (occlusion_fraction) occlusion_fraction->assign(cars.size(), 0.0);
  for (std::size_t c = 0; c < cars.size(); ++c) {
    const Box3D& box = boxes[c];
    const std::vector<OrientedPoint> surface =
        cfg.resample_surface ? sample_shell(cars[c].shape, cfg.shell_points, rng) : cars[c].fixed_surface;
    const double cy = std::cos(box.yaw), sy = std::sin(box.yaw);
    std::size_t visible = 0, hidden = 0;
    for (const OrientedPoint& sp : surface) {
      const Vec3 p = box_to_world(box, sp.position);
      const Vec3 n{cy * sp.normal.x - sy * sp.normal.y, sy * sp.normal.x + cy * sp.normal.y, sp.normal.z};
      if (!survives(p, n)) continue;
      ++visible;
      if (cfg.occlusion && detail::occluded_by_cars(p, boxes, static_cast<std::ptrdiff_t>(c))) {
        ++hidden;
        continue;
      }
      emit(p);
    }
    if (occlusion_fraction && visible > 0) {
      (*occlusion_fraction)[c] = static_cast<double>(hidden) / static_cast<double>(visible);
    }
  }
  for (const OrientedPoint& sp : clutter.surface) {
    if (!survives(sp.position, sp.normal)) continue;
    if (cfg.occlusion && detail::occluded_by_cars(sp.position, boxes, -1)) continue;
    emit(sp.position);
  }
  for (std::size_t i = 0; i < cfg.ground_points; ++i) {
    const double r = 3.0 + (cfg.ground_radius - 3.0) * u01(rng);
    const double th = 2.0 * kPi * u01(rng);
    const Vec3 p{r * std::cos(th), r * std::sin(th), cfg.ground_z};
    if (cfg.dropout > 0.0 && u01(rng) < cfg.dropout) continue;
    if (cfg.occlusion && detail::occluded_by_cars(p, boxes, -1)) continue;
    emit(p);
  }
  return out;
}

template <class Rng>
SyntheticScene generate_synthetic_scene(const SyntheticConfig& cfg, int scene_id, std::size_t num_cars,
                                        Rng& rng) {
  cfg.validate();
  if (num_cars < 1 || num_cars > default_lanes().size()) {
    throw ConfigError("synthetic: cars per scene must be in [1, " + std::to_string(default_lanes().size()) + "]");
  }
  std::vector<double> lanes = default_lanes();
  std::shuffle(lanes.begin(), lanes.end(), rng);
  if (cfg.lane_y) lanes[0] = *cfg.lane_y;
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);

  SyntheticScene s;
  s.scene.id = scene_id;
  for (std::size_t c = 0; c < num_cars; ++c) {
    const double lane = cfg.lane_y && c == 0 ? *cfg.lane_y : lanes[c] + jitter(rng);
    s.cars.push_back(make_synthetic_car(cfg, static_cast<int>(c), lane, rng));
  }
  const detail::Clutter clutter = detail::make_clutter(cfg, rng);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    std::vector<double> occ;
    PointCloud cloud = render_frame(cfg, s.cars, clutter, t, rng, &occ);
    s.scene.frames[static_cast<int>(t)] = std::make_shared<const PointCloud>(std::move(cloud));
    for (std::size_t c = 0; c < s.cars.size(); ++c) {
      KittiLabel l = box_to_label(s.cars[c].boxes[t], static_cast<int>(t), s.cars[c].track_id);
      l.occluded = occ[c] > 0.5 ? 2 : occ[c] > 0.1 ? 1 : 0;
      s.scene.labels.push_back(l);
    }
    KittiLabel dc;
    dc.frame = static_cast<int>(t);
    dc.track_id = -1;
    dc.type = "DontCare";
    dc.occluded = -1;
    dc.alpha_obs = -10.0;
    dc.dimensions = {-1.0, -1.0, -1.0};
    dc.location = {-1000.0, -1000.0, -1000.0};
    dc.rotation_y = -10.0;
    s.scene.labels.push_back(dc);
  }
  return s;
}

// A single-car scene reduced to its tracklet.
template <class Rng>
Tracklet generate_synthetic_tracklet(const SyntheticConfig& cfg, Rng& rng, SyntheticCar* car = nullptr) {
  SyntheticScene s = generate_synthetic_scene(cfg, 0, 1, rng);
  if (car) *car = s.cars.front();
  return extract_tracklets({s.scene}).front();
}

// Scene id -> number of cars.
using SyntheticLayout = std::vector<std::pair<int, std::size_t>>;

// 10 train, 3 validation and 5 test tracklets.
inline SyntheticLayout default_synthetic_layout() {
  SyntheticLayout layout;
  for (int s = 0; s < 10; ++s) layout.push_back({s, 1});
  layout.push_back({17, 2});
  layout.push_back({18, 1});
  layout.push_back({19, 3});
  layout.push_back({20, 2});
  return layout;
}

inline std::vector<Scene> generate_synthetic_dataset(const SyntheticConfig& cfg, std::uint64_t seed,
                                                     const SyntheticLayout& layout = default_synthetic_layout()) {
  std::vector<Scene> scenes;
  for (const auto& [scene_id, cars] : layout) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(scene_id)};
    std::mt19937_64 rng(seq);
    scenes.push_back(generate_synthetic_scene(cfg, scene_id, cars, rng).scene);
  }
  return scenes;
}

// Completed canonical car shells for completion pre-training.
inline std::vector<PointCloud> synthetic_shape_collection(const SyntheticConfig& cfg, std::size_t count,
                                                          std::size_t points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> size_noise(0.0, cfg.size_sigma);
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < count; ++i) {
    const BoxSize size{cfg.mean_size.width + size_noise(rng), cfg.mean_size.height + size_noise(rng),
                       cfg.mean_size.length + size_noise(rng)};
    out.push_back(complete_shell_cloud(make_car_shape(size, rng), points, rng));
  }
  return out;
}

}  // namespace sc3d
