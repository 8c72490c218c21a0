#include <gtest/gtest.h>

#include <random>

#include "sc3d/data_io.hpp"
#include "sc3d/synthetic.hpp"
#include "support.hpp"

namespace sc3d {
namespace {

SyntheticConfig clean_config() {
  SyntheticConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.dropout = 0.0;
  cfg.falloff_range = 0.0;
  cfg.occlusion = false;
  cfg.resample_surface = false;
  cfg.ground_points = 0;
  cfg.clutter_objects = 0;
  cfg.frames = 6;
  return cfg;
}

double nearest(const Vec3& p, const std::vector<Vec3>& cloud) {
  double best = 1e300;
  for (const Vec3& q : cloud) best = std::min(best, squared_distance(p, q));
  return std::sqrt(best);
}

TEST(SyntheticConfig, DegenerateConfigsRejected) {
  auto bad = [](auto mutate) {
    SyntheticConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](SyntheticConfig& c) { c.frames = 0; });
  bad([](SyntheticConfig& c) { c.dropout = 1.0; });
  bad([](SyntheticConfig& c) { c.noise_sigma = -0.1; });
  bad([](SyntheticConfig& c) { c.mean_size.width = 0.0; });
  bad([](SyntheticConfig& c) { c.min_speed = 2.0; });
  bad([](SyntheticConfig& c) { c.speed = -1.0; });
  bad([](SyntheticConfig& c) { c.min_start = 40.0; });
  bad([](SyntheticConfig& c) { c.shell_points = 0; });
  EXPECT_NO_THROW(SyntheticConfig{}.validate());

  std::mt19937_64 rng(1);
  EXPECT_THROW(generate_synthetic_scene(SyntheticConfig{}, 0, 0, rng), ConfigError);
  EXPECT_THROW(generate_synthetic_scene(SyntheticConfig{}, 0, 99, rng), ConfigError);
}

TEST(SyntheticTracklet, StaticNoiselessObjectGivesIdenticalCrops) {
  SyntheticConfig cfg = clean_config();
  cfg.cull = false;
  cfg.speed = 0.0;
  cfg.yaw_rate_deg = 0.0;
  std::mt19937_64 rng(2);
  const Tracklet t = generate_synthetic_tracklet(cfg, rng);
  ASSERT_EQ(t.size(), cfg.frames);
  const PointCloud first = frame_shape(t.frames[0]);
  EXPECT_EQ(first.size(), cfg.shell_points);
  for (const TrackletFrame& f : t.frames) EXPECT_EQ(frame_shape(f).points, first.points);
}

TEST(SyntheticTracklet, MovingNoiselessObjectCoincidesInCanonicalFrame) {
  SyntheticConfig cfg = clean_config();
  cfg.cull = false;
  cfg.speed = 0.9;
  cfg.yaw_rate_deg = 3.0;
  std::mt19937_64 rng(3);
  const Tracklet t = generate_synthetic_tracklet(cfg, rng);
  const PointCloud first = frame_shape(t.frames[0]);
  for (const TrackletFrame& f : t.frames) {
    const PointCloud s = frame_shape(f);
    ASSERT_EQ(s.size(), first.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_LE((s.points[i] - first.points[i]).norm(), 1e-9);
  }
}

TEST(SyntheticTracklet, CullingKeepsAStrictSubsetOfTheShell) {
  SyntheticConfig cfg = clean_config();
  std::mt19937_64 rng(4);
  SyntheticCar car;
  const Tracklet t = generate_synthetic_tracklet(cfg, rng, &car);
  std::vector<Vec3> shell;
  for (const OrientedPoint& p : car.fixed_surface) shell.push_back(p.position);
  for (const TrackletFrame& f : t.frames) {
    const PointCloud s = frame_shape(f);
    EXPECT_GT(s.size(), 0u);
    EXPECT_LT(s.size(), shell.size());
    for (const Vec3& p : s.points) EXPECT_LE(nearest(p, shell), 1e-9);
  }
}

TEST(SyntheticTracklet, SpeedSetsPerFrameDisplacement) {
  SyntheticConfig cfg = clean_config();
  cfg.speed = 0.8;
  cfg.yaw_rate_deg = 0.0;
  std::mt19937_64 rng(5);
  const Tracklet t = generate_synthetic_tracklet(cfg, rng);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_NEAR(t.frames[i].displacement, 0.8, 1e-9);

  cfg.yaw_rate_deg = 2.0;
  const Tracklet turning = generate_synthetic_tracklet(cfg, rng);
  for (std::size_t i = 2; i < turning.size(); ++i) {
    const double dyaw = normalize_angle(turning.frames[i].box.yaw - turning.frames[i - 1].box.yaw);
    EXPECT_NEAR(dyaw, deg_to_rad(2.0), 1e-9);
    EXPECT_NEAR(turning.frames[i].displacement, 0.8, 1e-9);
  }
}

TEST(SyntheticTracklet, BoxesAreTheShellBounds) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10; ++i) {
    SyntheticCar car;
    const Tracklet t = generate_synthetic_tracklet(SyntheticConfig{}, rng, &car);
    Box3D canonical = t.frames[0].box;
    canonical.center = {};
    canonical.yaw = 0.0;
    EXPECT_NEAR(iou_3d(shell_bounds(car.shape), canonical), 1.0, 1e-9);
    for (std::size_t f = 0; f < t.size(); ++f) EXPECT_LE(pose_distance(t.frames[f].box, car.boxes[f]), 1e-9);
  }
}

TEST(SyntheticTracklet, BoxesRestOnTheGround) {
  std::mt19937_64 rng(7);
  const SyntheticConfig cfg;
  const Tracklet t = generate_synthetic_tracklet(cfg, rng);
  for (const TrackletFrame& f : t.frames)
    EXPECT_NEAR(f.box.center.z - 0.5 * f.box.size.height, cfg.ground_z, 1e-9);
}

TEST(SyntheticShell, SamplesLieOnTheSurfaceInsideTheBox) {
  std::mt19937_64 rng(8);
  const CarShape shape = make_car_shape({1.8, 1.5, 4.2}, rng);
  for (const OrientedPoint& p : sample_shell(shape, 2000, rng)) {
    EXPECT_LE(std::abs(p.position.x), 0.9 + 1e-9);
    EXPECT_LE(std::abs(p.position.y), 2.1 + 1e-9);
    EXPECT_LE(std::abs(p.position.z), 0.75 + 1e-9);
    EXPECT_NEAR(p.normal.norm(), 1.0, 1e-12);
  }
  const auto shapes = synthetic_shape_collection(SyntheticConfig{}, 5, 300, 9);
  ASSERT_EQ(shapes.size(), 5u);
  for (const PointCloud& s : shapes) EXPECT_EQ(s.size(), 300u);
}

TEST(SyntheticDataset, SeedReproducible) {
  const auto a = generate_synthetic_dataset(SyntheticConfig{}, 11);
  const auto b = generate_synthetic_dataset(SyntheticConfig{}, 11);
  const auto c = generate_synthetic_dataset(SyntheticConfig{}, 12);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t s = 0; s < a.size(); ++s) {
    ASSERT_EQ(a[s].frames.size(), b[s].frames.size());
    for (const auto& [f, cloud] : a[s].frames) {
      EXPECT_EQ(cloud->points, b[s].frames.at(f)->points);
      differs = differs || cloud->points != c[s].frames.at(f)->points;
    }
  }
  EXPECT_TRUE(differs);
}

TEST(SyntheticDataset, DefaultLayoutSplits) {
  const auto scenes = generate_synthetic_dataset(SyntheticConfig{}, 3);
  const auto train = extract_tracklets(scenes, Split::train);
  const auto val = extract_tracklets(scenes, Split::val);
  const auto test = extract_tracklets(scenes, Split::test);
  EXPECT_EQ(train.size(), 10u);
  EXPECT_EQ(val.size(), 3u);
  EXPECT_EQ(test.size(), 5u);
  for (const auto* set : {&train, &val, &test})
    for (const Tracklet& t : *set) EXPECT_EQ(t.size(), 20u);

  std::size_t dontcare = 0;
  for (const Scene& s : scenes)
    for (const KittiLabel& l : s.labels) dontcare += l.type == "DontCare";
  EXPECT_EQ(dontcare, scenes.size() * 20u);
}

TEST(SyntheticDataset, SurvivesTheOnDiskLayout) {
  testing::TempDir dir("synth");
  SyntheticConfig cfg;
  cfg.frames = 4;
  const SyntheticLayout layout = {{0, 1}, {17, 2}};
  const auto scenes = generate_synthetic_dataset(cfg, 5, layout);
  for (const Scene& s : scenes) write_scene(dir.path, s);
  const auto loaded = load_scenes(dir.path, {0, 17});
  const auto a = extract_tracklets(scenes);
  const auto b = extract_tracklets(loaded);
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(b.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t f = 0; f < a[i].size(); ++f) {
      EXPECT_LE(pose_distance(a[i].frames[f].box, b[i].frames[f].box), 1e-5);
      EXPECT_NEAR(static_cast<double>(frame_shape(b[i].frames[f]).size()),
                  static_cast<double>(frame_shape(a[i].frames[f]).size()), 2.0);
    }
}

TEST(SyntheticScene, OcclusionHidesPointsBehindOtherCars) {
  SyntheticConfig cfg = clean_config();
  cfg.occlusion = true;
  cfg.frames = 1;
  cfg.speed = 0.0;
  std::mt19937_64 rng(10);
  SyntheticScene s = generate_synthetic_scene(cfg, 0, 2, rng);
  // Put car 1 directly behind car 0 on the sensor ray.
  s.cars[0].boxes[0].center = {8.0, 0.0, s.cars[0].boxes[0].center.z};
  s.cars[0].boxes[0].yaw = 0.0;
  s.cars[1].boxes[0].center = {16.0, 0.0, s.cars[1].boxes[0].center.z};
  s.cars[1].boxes[0].yaw = 0.0;
  detail::Clutter none;
  std::vector<double> occ;
  render_frame(cfg, s.cars, none, 0, rng, &occ);
  EXPECT_LT(occ[0], 0.05);
  EXPECT_GT(occ[1], 0.5);
}

}  // namespace
}  // namespace sc3d
