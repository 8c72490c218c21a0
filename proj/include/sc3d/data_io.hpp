#pragma once

// KITTI tracking ingestion and a synthetic LIDAR scene generator that writes
// the same on-disk layout:
//
//   <root>/velodyne/SSSS/FFFFFF.bin   little-endian float32 (x, y, z, intensity)
//   <root>/label_02/SSSS.txt          one object per line, KITTI tracking columns
//   <root>/calib/SSSS.txt             R_rect and Tr_velo_cam rows
//
// Everything downstream works in the "track frame": the rectified camera
// frame relabelled to z-up, (X, Y, Z) = (z_cam, -x_cam, -y_cam).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "sc3d/errors.hpp"
#include "sc3d/geometry.hpp"

namespace sc3d {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Scans

inline PointCloud read_scan(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open scan " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw DataError("malformed scan " + path.string() + ": " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of 16");
  }
  auto read_f32 = [&](std::size_t off) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[off]) |
                            static_cast<std::uint32_t>(bytes[off + 1]) << 8 |
                            static_cast<std::uint32_t>(bytes[off + 2]) << 16 |
                            static_cast<std::uint32_t>(bytes[off + 3]) << 24;
    return static_cast<double>(std::bit_cast<float>(u));
  };
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.push_back({read_f32(16 * i), read_f32(16 * i + 4), read_f32(16 * i + 8)});
    cloud.intensity.push_back(read_f32(16 * i + 12));
  }
  return cloud;
}

inline void write_scan(const fs::path& path, const PointCloud& cloud) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write scan " + path.string());
  auto put = [&](double v) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    out.write(b, 4);
  };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put(cloud.points[i].x);
    put(cloud.points[i].y);
    put(cloud.points[i].z);
    put(cloud.has_intensity() ? cloud.intensity[i] : 0.0);
  }
}

// Whitespace text, one "x y z" per line.
inline void write_cloud_text(const fs::path& path, const PointCloud& cloud) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(9);
  for (const Vec3& p : cloud.points) out << p.x << ' ' << p.y << ' ' << p.z << '\n';
}

inline PointCloud read_cloud_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x >> p.y >> p.z)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected x y z");
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

// .bin -> KITTI binary, anything else -> text.
inline PointCloud read_cloud(const fs::path& path) {
  return path.extension() == ".bin" ? read_scan(path) : read_cloud_text(path);
}

inline void write_cloud(const fs::path& path, const PointCloud& cloud) {
  if (path.extension() == ".bin") {
    write_scan(path, cloud);
  } else {
    write_cloud_text(path, cloud);
  }
}

// ---------------------------------------------------------------------------
// Labels

struct KittiLabel {
  int frame = 0;
  int track_id = -1;
  std::string type;
  double truncated = 0.0;
  int occluded = 0;
  double alpha_obs = 0.0;
  std::array<double, 4> bbox2d{};
  std::array<double, 3> dimensions{};  // height, width, length
  std::array<double, 3> location{};    // camera frame, bottom center
  double rotation_y = 0.0;
};

inline std::vector<KittiLabel> parse_labels(std::istream& in, const std::string& source = "labels") {
  std::vector<KittiLabel> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 17 && tok.size() != 18) {
      throw DataError(source + ":" + std::to_string(lineno) + ": expected 17 or 18 columns, got " +
                      std::to_string(tok.size()));
    }
    try {
      KittiLabel l;
      l.frame = std::stoi(tok[0]);
      l.track_id = std::stoi(tok[1]);
      l.type = tok[2];
      l.truncated = std::stod(tok[3]);
      l.occluded = std::stoi(tok[4]);
      l.alpha_obs = std::stod(tok[5]);
      for (int i = 0; i < 4; ++i) l.bbox2d[i] = std::stod(tok[6 + i]);
      for (int i = 0; i < 3; ++i) l.dimensions[i] = std::stod(tok[10 + i]);
      for (int i = 0; i < 3; ++i) l.location[i] = std::stod(tok[13 + i]);
      l.rotation_y = std::stod(tok[16]);
      out.push_back(std::move(l));
    } catch (const std::logic_error&) {
      throw DataError(source + ":" + std::to_string(lineno) + ": non-numeric field");
    }
  }
  return out;
}

inline std::vector<KittiLabel> parse_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels " + path.string());
  return parse_labels(in, path.string());
}

inline void write_labels(std::ostream& out, const std::vector<KittiLabel>& labels) {
  out << std::fixed << std::setprecision(6);
  for (const KittiLabel& l : labels) {
    out << l.frame << ' ' << l.track_id << ' ' << l.type << ' ' << l.truncated << ' ' << l.occluded
        << ' ' << l.alpha_obs;
    for (double v : l.bbox2d) out << ' ' << v;
    for (double v : l.dimensions) out << ' ' << v;
    for (double v : l.location) out << ' ' << v;
    out << ' ' << l.rotation_y << '\n';
  }
}

// ---------------------------------------------------------------------------
// Calibration

struct Calibration {
  Eigen::Matrix3d rect = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> velo_to_cam = Eigen::Matrix<double, 3, 4>::Zero();

  // Standard sensor mounting: LIDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd).
  static Calibration canonical() {
    Calibration c;
    c.velo_to_cam << 0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0;
    return c;
  }

  static Calibration identity() {
    Calibration c;
    c.velo_to_cam.leftCols<3>().setIdentity();
    return c;
  }

  void validate(const std::string& source = "calibration") const {
    auto check = [&](const Eigen::Matrix3d& r, const char* what) {
      if ((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-3) {
        throw DataError(source + ": " + what + " rotation block is not orthonormal");
      }
    };
    check(rect, "R_rect");
    check(velo_to_cam.leftCols<3>(), "Tr_velo_cam");
  }
};

inline Calibration parse_calib(std::istream& in, const std::string& source = "calib") {
  Calibration c;
  bool have_rect = false, have_tr = false;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (!key.empty() && key.back() == ':') key.pop_back();
    std::vector<double> v;
    for (double x; ls >> x;) v.push_back(x);
    if (key == "R_rect" || key == "R0_rect") {
      if (v.size() != 9) throw DataError(source + ": R_rect needs 9 values");
      for (int i = 0; i < 9; ++i) c.rect(i / 3, i % 3) = v[static_cast<std::size_t>(i)];
      have_rect = true;
    } else if (key == "Tr_velo_cam" || key == "Tr_velo_to_cam") {
      if (v.size() != 12) throw DataError(source + ": Tr_velo_cam needs 12 values");
      for (int i = 0; i < 12; ++i) c.velo_to_cam(i / 4, i % 4) = v[static_cast<std::size_t>(i)];
      have_tr = true;
    }
  }
  if (!have_rect || !have_tr) throw DataError(source + ": missing R_rect or Tr_velo_cam");
  c.validate(source);
  return c;
}

inline Calibration parse_calib(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open calibration " + path.string());
  return parse_calib(in, path.string());
}

inline void write_calib(std::ostream& out, const Calibration& c) {
  out << std::setprecision(12);
  for (int p = 0; p < 4; ++p) {
    out << 'P' << p << ':';
    for (int i = 0; i < 12; ++i) out << ' ' << (i % 5 == 0 ? 1.0 : 0.0);
    out << '\n';
  }
  out << "R_rect";
  for (int i = 0; i < 9; ++i) out << ' ' << c.rect(i / 3, i % 3);
  out << "\nTr_velo_cam";
  for (int i = 0; i < 12; ++i) out << ' ' << c.velo_to_cam(i / 4, i % 4);
  out << "\nTr_imu_velo";
  for (int i = 0; i < 12; ++i) out << ' ' << (i % 5 == 0 ? 1.0 : 0.0);
  out << '\n';
}

// LIDAR -> rectified camera (label) frame: rect * (R p + t).
inline PointCloud lidar_to_label_frame(const PointCloud& cloud, const Calibration& calib) {
  PointCloud out;
  out.points.reserve(cloud.size());
  out.intensity = cloud.intensity;
  const Eigen::Matrix3d r = calib.rect * calib.velo_to_cam.leftCols<3>();
  const Eigen::Vector3d t = calib.rect * calib.velo_to_cam.col(3);
  for (const Vec3& p : cloud.points) {
    const Eigen::Vector3d q = r * Eigen::Vector3d(p.x, p.y, p.z) + t;
    out.points.push_back({q.x(), q.y(), q.z()});
  }
  return out;
}

inline PointCloud label_to_lidar_frame(const PointCloud& cloud, const Calibration& calib) {
  PointCloud out;
  out.points.reserve(cloud.size());
  out.intensity = cloud.intensity;
  const Eigen::Matrix3d r = calib.rect * calib.velo_to_cam.leftCols<3>();
  const Eigen::Vector3d t = calib.rect * calib.velo_to_cam.col(3);
  const Eigen::Matrix3d r_inv = r.inverse();
  for (const Vec3& p : cloud.points) {
    const Eigen::Vector3d q = r_inv * (Eigen::Vector3d(p.x, p.y, p.z) - t);
    out.points.push_back({q.x(), q.y(), q.z()});
  }
  return out;
}

inline Vec3 camera_to_track(Vec3 c) { return {c.z, -c.x, -c.y}; }
inline Vec3 track_to_camera(Vec3 t) { return {-t.y, -t.z, t.x}; }

inline PointCloud camera_to_track(const PointCloud& cloud) {
  PointCloud out;
  out.points.reserve(cloud.size());
  out.intensity = cloud.intensity;
  for (const Vec3& p : cloud.points) out.points.push_back(camera_to_track(p));
  return out;
}

inline PointCloud track_to_camera(const PointCloud& cloud) {
  PointCloud out;
  out.points.reserve(cloud.size());
  out.intensity = cloud.intensity;
  for (const Vec3& p : cloud.points) out.points.push_back(track_to_camera(p));
  return out;
}

// A KITTI car heads along its length; rotation_y = 0 faces camera +x.
// In the track frame the length runs along local y, so yaw = -ry - pi.
inline Box3D label_to_box(const KittiLabel& l) {
  Box3D b;
  b.size = {l.dimensions[1], l.dimensions[0], l.dimensions[2]};
  const Vec3 bottom{l.location[0], l.location[1], l.location[2]};
  const Vec3 center_cam{bottom.x, bottom.y - 0.5 * l.dimensions[0], bottom.z};
  b.center = camera_to_track(center_cam);
  b.yaw = normalize_angle(-l.rotation_y - kPi);
  return b;
}

inline KittiLabel box_to_label(const Box3D& b, int frame, int track_id, const std::string& type = "Car") {
  KittiLabel l;
  l.frame = frame;
  l.track_id = track_id;
  l.type = type;
  l.dimensions = {b.size.height, b.size.width, b.size.length};
  const Vec3 center_cam = track_to_camera(b.center);
  l.location = {center_cam.x, center_cam.y + 0.5 * b.size.height, center_cam.z};
  l.rotation_y = normalize_angle(-b.yaw - kPi);
  l.alpha_obs = normalize_angle(l.rotation_y - std::atan2(l.location[0], l.location[2]));
  return l;
}

// ---------------------------------------------------------------------------
// Scenes, splits, tracklets

struct Scene {
  int id = 0;
  std::map<int, std::shared_ptr<const PointCloud>> frames;  // track frame
  std::vector<KittiLabel> labels;
};

enum class Split { train, val, test };

inline std::vector<int> split_scenes(Split s) {
  std::vector<int> out;
  const auto [lo, hi] = s == Split::train ? std::pair{0, 16} : s == Split::val ? std::pair{17, 18}
                                                                                 : std::pair{19, 20};
  for (int i = lo; i <= hi; ++i) out.push_back(i);
  return out;
}

inline std::optional<Split> split_of(int scene_id) {
  if (scene_id >= 0 && scene_id <= 16) return Split::train;
  if (scene_id == 17 || scene_id == 18) return Split::val;
  if (scene_id == 19 || scene_id == 20) return Split::test;
  return std::nullopt;
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

inline std::string scene_name(int id) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << id;
  return os.str();
}

inline std::string frame_name(int id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id;
  return os.str();
}

struct LoadOptions {
  // Keep only points within this planar radius of some labelled car (0 keeps all).
  double keep_radius = 12.0;
  bool keep_intensity = false;
};

inline Scene load_scene(const fs::path& root, int scene_id, const LoadOptions& opts = {}) {
  Scene scene;
  scene.id = scene_id;
  const std::string name = scene_name(scene_id);
  const fs::path label_path = root / "label_02" / (name + ".txt");
  const fs::path calib_path = root / "calib" / (name + ".txt");
  const fs::path velo_dir = root / "velodyne" / name;
  if (!fs::exists(label_path)) throw DataError("missing labels " + label_path.string());
  if (!fs::is_directory(velo_dir)) throw DataError("missing scan directory " + velo_dir.string());
  scene.labels = parse_labels(label_path);
  const Calibration calib = parse_calib(calib_path);

  std::map<int, std::vector<Box3D>> cars_by_frame;
  for (const KittiLabel& l : scene.labels)
    if (l.type == "Car") cars_by_frame[l.frame].push_back(label_to_box(l));

  for (const auto& entry : fs::directory_iterator(velo_dir)) {
    if (entry.path().extension() != ".bin") continue;
    int frame = 0;
    try {
      frame = std::stoi(entry.path().stem().string());
    } catch (const std::logic_error&) {
      continue;
    }
    const auto cars = cars_by_frame.find(frame);
    if (opts.keep_radius > 0.0 && cars == cars_by_frame.end()) continue;
    PointCloud cloud = camera_to_track(lidar_to_label_frame(read_scan(entry.path()), calib));
    if (!opts.keep_intensity) cloud.intensity.clear();
    if (opts.keep_radius > 0.0) {
      PointCloud kept;
      const double r2 = opts.keep_radius * opts.keep_radius;
      for (const Vec3& p : cloud.points) {
        for (const Box3D& b : cars->second) {
          const double dx = p.x - b.center.x, dy = p.y - b.center.y;
          if (dx * dx + dy * dy < r2) {
            kept.points.push_back(p);
            break;
          }
        }
      }
      cloud = std::move(kept);
    }
    scene.frames[frame] = std::make_shared<const PointCloud>(std::move(cloud));
  }
  return scene;
}

inline std::vector<Scene> load_scenes(const fs::path& root, const std::vector<int>& ids,
                                      const LoadOptions& opts = {}) {
  std::vector<Scene> out;
  for (int id : ids) {
    if (fs::exists(root / "label_02" / (scene_name(id) + ".txt"))) out.push_back(load_scene(root, id, opts));
  }
  return out;
}

inline void write_scene(const fs::path& root, const Scene& scene,
                        const Calibration& calib = Calibration::canonical()) {
  const std::string name = scene_name(scene.id);
  fs::create_directories(root / "label_02");
  fs::create_directories(root / "calib");
  fs::create_directories(root / "velodyne" / name);
  {
    std::ofstream out(root / "label_02" / (name + ".txt"));
    if (!out) throw DataError("cannot write labels for scene " + name);
    write_labels(out, scene.labels);
  }
  {
    std::ofstream out(root / "calib" / (name + ".txt"));
    if (!out) throw DataError("cannot write calibration for scene " + name);
    write_calib(out, calib);
  }
  for (const auto& [frame, cloud] : scene.frames) {
    write_scan(root / "velodyne" / name / (frame_name(frame) + ".bin"),
               label_to_lidar_frame(track_to_camera(*cloud), calib));
  }
}

struct TrackletFrame {
  int frame = 0;
  std::shared_ptr<const PointCloud> cloud;  // full scan, track frame
  Box3D box;
  bool occluded = false;
  double displacement = 0.0;  // center motion since the previous tracklet frame, meters
};

struct Tracklet {
  int scene_id = 0;
  int track_id = 0;
  std::vector<TrackletFrame> frames;

  std::size_t size() const { return frames.size(); }
};

inline constexpr double kStaticDisplacement = 0.7;

// One tracklet per (scene, car track id), frames in increasing order.
inline std::vector<Tracklet> extract_tracklets(const std::vector<Scene>& scenes,
                                               std::optional<Split> split = std::nullopt) {
  static const auto empty_cloud = std::make_shared<const PointCloud>();
  std::vector<Tracklet> out;
  for (const Scene& scene : scenes) {
    if (split && split_of(scene.id) != split) continue;
    std::map<int, std::vector<const KittiLabel*>> by_track;
    for (const KittiLabel& l : scene.labels)
      if (l.type == "Car") by_track[l.track_id].push_back(&l);
    for (auto& [track_id, labels] : by_track) {
      std::stable_sort(labels.begin(), labels.end(),
                       [](const KittiLabel* a, const KittiLabel* b) { return a->frame < b->frame; });
      Tracklet t;
      t.scene_id = scene.id;
      t.track_id = track_id;
      for (const KittiLabel* l : labels) {
        if (!t.frames.empty() && t.frames.back().frame == l->frame) continue;
        TrackletFrame f;
        f.frame = l->frame;
        const auto it = scene.frames.find(l->frame);
        f.cloud = it != scene.frames.end() ? it->second : empty_cloud;
        f.box = label_to_box(*l);
        f.occluded = l->occluded > 0;
        if (!t.frames.empty()) f.displacement = (f.box.center - t.frames.back().box.center).norm();
        t.frames.push_back(std::move(f));
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

inline double mean_displacement(const std::vector<Tracklet>& tracklets) {
  double total = 0.0;
  std::size_t n = 0;
  for (const Tracklet& t : tracklets)
    for (std::size_t i = 1; i < t.frames.size(); ++i) {
      total += t.frames[i].displacement;
      ++n;
    }
  return n ? total / static_cast<double>(n) : 0.0;
}

// Canonical crop of one tracklet frame.
inline PointCloud frame_shape(const TrackletFrame& f, const CropPolicy& policy = {}) {
  return canonicalize(crop(*f.cloud, f.box, policy), f.box);
}

// Aligned model shape: every frame cropped, canonicalized and concatenated.
inline PointCloud build_model_shape(const Tracklet& t, const CropPolicy& policy = {}) {
  if (t.frames.empty()) throw PreconditionError("build_model_shape: empty tracklet");
  PointCloud model;
  for (const TrackletFrame& f : t.frames) model.append(frame_shape(f, policy));
  return model;
}

// Ground-truth motion between consecutive frames, in the earlier box's frame.
inline std::vector<PoseOffset> collect_motion_offsets(const std::vector<Tracklet>& tracklets) {
  std::vector<PoseOffset> out;
  for (const Tracklet& t : tracklets)
    for (std::size_t i = 1; i < t.frames.size(); ++i)
      out.push_back(offset_between(t.frames[i - 1].box, t.frames[i].box));
  return out;
}

}  // namespace sc3d
