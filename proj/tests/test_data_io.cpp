#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/QR>

#include "sc3d/data_io.hpp"
#include "support.hpp"

namespace sc3d {
namespace {

using testing::TempDir;

void write_bytes(const fs::path& p, std::size_t n) {
  std::ofstream out(p, std::ios::binary);
  const std::vector<char> zeros(n, 0);
  out.write(zeros.data(), static_cast<std::streamsize>(n));
}

KittiLabel car_label(int frame, int track, double x, double z) {
  KittiLabel l;
  l.frame = frame;
  l.track_id = track;
  l.type = "Car";
  l.dimensions = {1.5, 1.8, 4.2};
  l.location = {x, 1.7, z};
  return l;
}

// --- scans ------------------------------------------------------------------

TEST(ReadScan, EmptyFileGivesEmptyCloud) {
  TempDir dir("scan");
  write_bytes(dir.path / "e.bin", 0);
  EXPECT_TRUE(read_scan(dir.path / "e.bin").empty());
}

TEST(ReadScan, ThirtyTwoBytesGiveTwoPoints) {
  TempDir dir("scan");
  write_bytes(dir.path / "two.bin", 32);
  const PointCloud c = read_scan(dir.path / "two.bin");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[1], (Vec3{0, 0, 0}));
  EXPECT_EQ(c.intensity.size(), 2u);
}

TEST(ReadScan, SizeNotMultipleOfSixteenIsRejected) {
  TempDir dir("scan");
  write_bytes(dir.path / "bad.bin", 17);
  EXPECT_THROW(read_scan(dir.path / "bad.bin"), DataError);
  EXPECT_THROW(read_scan(dir.path / "missing.bin"), DataError);
}

TEST(ReadScan, KnownLittleEndianLayout) {
  TempDir dir("scan");
  const float vals[4] = {1.5f, -2.25f, 3.0f, 0.5f};
  unsigned char bytes[16];
  for (int i = 0; i < 4; ++i) {
    std::uint32_t u;
    std::memcpy(&u, &vals[i], 4);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xff);
  }
  {
    std::ofstream out(dir.path / "one.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes), 16);
  }
  const PointCloud c = read_scan(dir.path / "one.bin");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.points[0], (Vec3{1.5, -2.25, 3.0}));
  EXPECT_EQ(c.intensity[0], 0.5);
}

TEST(ReadScan, RoundTripIsBitIdentical) {
  TempDir dir("scan");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-80.0f, 80.0f);
  PointCloud c;
  for (int i = 0; i < 500; ++i) {
    c.points.push_back({u(rng), u(rng), u(rng)});
    c.intensity.push_back(static_cast<float>(i) / 500.0f);
  }
  write_scan(dir.path / "sub" / "rt.bin", c);
  EXPECT_EQ(fs::file_size(dir.path / "sub" / "rt.bin"), 500u * 16u);
  const PointCloud back = read_scan(dir.path / "sub" / "rt.bin");
  EXPECT_EQ(back.points, c.points);
  EXPECT_EQ(back.intensity, c.intensity);

  write_scan(dir.path / "rt2.bin", back);
  std::ifstream a(dir.path / "sub" / "rt.bin", std::ios::binary), b(dir.path / "rt2.bin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST(CloudText, RoundTripAndDispatch) {
  TempDir dir("txt");
  PointCloud c;
  c.points = {{0.125, -1.5, 2.0}, {3.0, 4.0, -5.5}};
  write_cloud(dir.path / "c.txt", c);
  EXPECT_EQ(read_cloud(dir.path / "c.txt").points, c.points);
  write_cloud(dir.path / "c.bin", c);
  EXPECT_EQ(fs::file_size(dir.path / "c.bin"), 32u);
  EXPECT_EQ(read_cloud(dir.path / "c.bin").points, c.points);

  std::ofstream(dir.path / "bad.txt") << "1 2 3\n\n4 five 6\n";
  try {
    read_cloud_text(dir.path / "bad.txt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
}

// --- labels -----------------------------------------------------------------

TEST(ParseLabels, EmptyInputGivesEmptyList) {
  std::istringstream in("");
  EXPECT_TRUE(parse_labels(in).empty());
  std::istringstream blank("\n  \n");
  EXPECT_TRUE(parse_labels(blank).empty());
}

TEST(ParseLabels, FixtureFieldsExact) {
  std::istringstream in(
      "7 3 Car 0.25 1 -1.57 100.5 120.25 300.75 250 1.52 1.63 3.88 2.5 1.65 14.75 -1.62\n");
  const auto labels = parse_labels(in);
  ASSERT_EQ(labels.size(), 1u);
  const KittiLabel& l = labels[0];
  EXPECT_EQ(l.frame, 7);
  EXPECT_EQ(l.track_id, 3);
  EXPECT_EQ(l.type, "Car");
  EXPECT_EQ(l.truncated, 0.25);
  EXPECT_EQ(l.occluded, 1);
  EXPECT_EQ(l.alpha_obs, -1.57);
  EXPECT_EQ(l.bbox2d, (std::array<double, 4>{100.5, 120.25, 300.75, 250}));
  EXPECT_EQ(l.dimensions, (std::array<double, 3>{1.52, 1.63, 3.88}));
  EXPECT_EQ(l.location, (std::array<double, 3>{2.5, 1.65, 14.75}));
  EXPECT_EQ(l.rotation_y, -1.62);
}

TEST(ParseLabels, ScoreColumnAcceptedAndUnknownClassesKept) {
  std::istringstream in(
      "0 1 Tram 0 0 0 0 0 0 0 3 2.5 12 1 1 20 0 0.9\n"
      "0 -1 DontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\n");
  const auto labels = parse_labels(in);
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[0].type, "Tram");
  EXPECT_EQ(labels[1].type, "DontCare");
}

TEST(ParseLabels, WrongColumnCountNamesTheLine) {
  std::istringstream in("0 1 Car 0 0 0 0 0 0 0 1 1 1 0 0 5 0\n0 1 Car 0 0\n");
  try {
    parse_labels(in, "fixture");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("fixture:2"), std::string::npos) << e.what();
  }
  std::istringstream nonnum("0 1 Car x 0 0 0 0 0 0 1 1 1 0 0 5 0\n");
  EXPECT_THROW(parse_labels(nonnum), DataError);
}

TEST(ParseLabels, WriteParseRoundTrip) {
  std::vector<KittiLabel> labels = {car_label(0, 2, 1.25, 10.5), car_label(1, 2, 1.5, 11.0)};
  labels[1].occluded = 2;
  labels[1].rotation_y = 0.375;
  std::stringstream ss;
  write_labels(ss, labels);
  const auto back = parse_labels(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].frame, labels[i].frame);
    EXPECT_EQ(back[i].occluded, labels[i].occluded);
    EXPECT_EQ(back[i].location, labels[i].location);
    EXPECT_EQ(back[i].rotation_y, labels[i].rotation_y);
  }
}

// --- calibration --------------------------------------------------------------

TEST(ParseCalib, FixtureAndValidation) {
  std::istringstream in(
      "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
      "R_rect 1 0 0 0 1 0 0 0 1\n"
      "Tr_velo_cam 0 -1 0 0.5 0 0 -1 -0.25 1 0 0 -1\n");
  const Calibration c = parse_calib(in);
  EXPECT_EQ(c.velo_to_cam(0, 3), 0.5);
  EXPECT_EQ(c.velo_to_cam(2, 0), 1.0);

  std::istringstream missing("R_rect 1 0 0 0 1 0 0 0 1\n");
  EXPECT_THROW(parse_calib(missing), DataError);
  std::istringstream skewed("R_rect 2 0 0 0 1 0 0 0 1\nTr_velo_cam 1 0 0 0 0 1 0 0 0 0 1 0\n");
  EXPECT_THROW(parse_calib(skewed), DataError);
  std::istringstream short_row("R_rect 1 0 0 0 1 0 0 0\nTr_velo_cam 1 0 0 0 0 1 0 0 0 0 1 0\n");
  EXPECT_THROW(parse_calib(short_row), DataError);
}

TEST(ParseCalib, WriteParseRoundTrip) {
  Calibration c = Calibration::canonical();
  c.velo_to_cam(0, 3) = -0.004069766;
  c.velo_to_cam(1, 3) = -0.07631618;
  std::stringstream ss;
  write_calib(ss, c);
  const Calibration back = parse_calib(ss);
  EXPECT_TRUE(back.velo_to_cam.isApprox(c.velo_to_cam, 1e-12));
  EXPECT_TRUE(back.rect.isApprox(c.rect, 1e-12));
}

Calibration random_calibration(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Calibration c;
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = g(rng);
  const Eigen::Matrix3d q = a.householderQr().householderQ();
  Eigen::Matrix3d b;
  for (int i = 0; i < 9; ++i) b(i / 3, i % 3) = g(rng);
  c.rect = b.householderQr().householderQ();
  c.velo_to_cam.leftCols<3>() = q;
  for (int i = 0; i < 3; ++i) c.velo_to_cam(i, 3) = 2.0 * g(rng);
  return c;
}

TEST(LidarToLabel, IdentityCalibrationIsIdentity) {
  std::mt19937_64 rng(1);
  const PointCloud c = testing::random_cloud(50, rng, 10.0);
  EXPECT_EQ(lidar_to_label_frame(c, Calibration::identity()).points, c.points);
}

TEST(LidarToLabel, PureTranslation) {
  Calibration c = Calibration::identity();
  c.velo_to_cam(0, 3) = 1.0;
  c.velo_to_cam(1, 3) = -2.0;
  c.velo_to_cam(2, 3) = 0.5;
  PointCloud p;
  p.points = {{3.0, 4.0, 5.0}};
  EXPECT_EQ(lidar_to_label_frame(p, c).points[0], (Vec3{4.0, 2.0, 5.5}));
}

TEST(LidarToLabel, RoundTripResidualBelowNanometer) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Calibration calib = random_calibration(rng);
    const PointCloud c = testing::random_cloud(200, rng, 30.0);
    const PointCloud back = label_to_lidar_frame(lidar_to_label_frame(c, calib), calib);
    double worst = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) worst = std::max(worst, (back.points[i] - c.points[i]).norm());
    EXPECT_LE(worst, 1e-9);
  }
}

TEST(LidarToLabel, CanonicalMountingMapsForwardToCameraZ) {
  PointCloud p;
  p.points = {{10.0, 2.0, 1.0}};
  const Vec3 cam = lidar_to_label_frame(p, Calibration::canonical()).points[0];
  EXPECT_EQ(cam, (Vec3{-2.0, -1.0, 10.0}));
  EXPECT_EQ(camera_to_track(cam), (Vec3{10.0, 2.0, 1.0}));
}

TEST(TrackFrame, CameraConversionsInvert) {
  std::mt19937_64 rng(3);
  const PointCloud c = testing::random_cloud(20, rng, 5.0);
  EXPECT_EQ(track_to_camera(camera_to_track(c)).points, c.points);
  EXPECT_EQ(camera_to_track(Vec3{1, 2, 3}), (Vec3{3, -1, -2}));
}

TEST(LabelBox, KnownConversion) {
  KittiLabel l = car_label(0, 0, 1.0, 10.0);
  l.location = {1.0, 1.5, 10.0};
  const Box3D b = label_to_box(l);
  EXPECT_DOUBLE_EQ(b.center.x, 10.0);
  EXPECT_DOUBLE_EQ(b.center.y, -1.0);
  EXPECT_DOUBLE_EQ(b.center.z, -0.75);
  EXPECT_EQ(b.size, (BoxSize{1.8, 1.5, 4.2}));
  EXPECT_NEAR(std::abs(b.yaw), kPi, 1e-12);
}

TEST(LabelBox, BoxLabelRoundTrip) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    Box3D b;
    b.center = {20.0 + u(rng), u(rng), -1.0 + 0.1 * u(rng)};
    b.size = {1.7 + 0.1 * u(rng), 1.4 + 0.1 * u(rng), 4.0 + 0.1 * u(rng)};
    b.yaw = normalize_angle(u(rng));
    const KittiLabel l = box_to_label(b, 3, 9);
    EXPECT_EQ(l.frame, 3);
    EXPECT_EQ(l.track_id, 9);
    EXPECT_EQ(l.type, "Car");
    const Box3D back = label_to_box(l);
    EXPECT_LE((back.center - b.center).norm(), 1e-12);
    EXPECT_NEAR(back.size.length, b.size.length, 1e-12);
    EXPECT_NEAR(std::abs(normalize_angle(back.yaw - b.yaw)), 0.0, 1e-12);
  }
}

// --- splits and scenes ----------------------------------------------------------

TEST(Splits, PartitionIsExactAndDisjoint) {
  std::vector<int> all;
  for (Split s : {Split::train, Split::val, Split::test})
    for (int id : split_scenes(s)) {
      EXPECT_EQ(split_of(id), s);
      all.push_back(id);
    }
  std::sort(all.begin(), all.end());
  std::vector<int> expected(21);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
  EXPECT_EQ(split_scenes(Split::val), (std::vector<int>{17, 18}));
  EXPECT_EQ(split_scenes(Split::test), (std::vector<int>{19, 20}));
  EXPECT_FALSE(split_of(21).has_value());
  EXPECT_FALSE(split_of(-1).has_value());
  EXPECT_EQ(parse_split("val"), Split::val);
  EXPECT_THROW(parse_split("validation"), ConfigError);
}

TEST(Splits, FileNames) {
  EXPECT_EQ(scene_name(3), "0003");
  EXPECT_EQ(frame_name(12), "000012");
}

Scene toy_scene(int id) {
  Scene s;
  s.id = id;
  for (int f : {7, 3, 4}) s.labels.push_back(car_label(f, 5, 0.0, 10.0 + f));
  s.labels.push_back(car_label(3, 6, 4.0, 20.0));
  KittiLabel dc = car_label(3, -1, 0.0, 0.0);
  dc.type = "DontCare";
  s.labels.push_back(dc);
  KittiLabel ped = car_label(4, 8, 1.0, 8.0);
  ped.type = "Pedestrian";
  s.labels.push_back(ped);
  s.labels[0].occluded = 2;
  for (int f : {3, 4, 7}) {
    auto c = std::make_shared<PointCloud>();
    c->points = {{10.0 + f, 0.0, -1.0}};
    s.frames[f] = c;
  }
  return s;
}

TEST(ExtractTracklets, FramesInOrderAndClassFiltered) {
  const auto tracklets = extract_tracklets({toy_scene(2)});
  ASSERT_EQ(tracklets.size(), 2u);
  const Tracklet& t = tracklets[0];
  EXPECT_EQ(t.track_id, 5);
  EXPECT_EQ(t.scene_id, 2);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.frames[0].frame, 3);
  EXPECT_EQ(t.frames[1].frame, 4);
  EXPECT_EQ(t.frames[2].frame, 7);
  EXPECT_DOUBLE_EQ(t.frames[0].displacement, 0.0);
  EXPECT_DOUBLE_EQ(t.frames[1].displacement, 1.0);
  EXPECT_DOUBLE_EQ(t.frames[2].displacement, 3.0);
  EXPECT_TRUE(t.frames[2].occluded);
  EXPECT_FALSE(t.frames[0].occluded);
  EXPECT_EQ(t.frames[1].cloud->points[0].x, 14.0);
  EXPECT_EQ(tracklets[1].track_id, 6);
  EXPECT_NEAR(mean_displacement(tracklets), 2.0, 1e-12);
}

TEST(ExtractTracklets, SplitRouting) {
  const std::vector<Scene> scenes = {toy_scene(3), toy_scene(17), toy_scene(19)};
  const auto val = extract_tracklets(scenes, Split::val);
  ASSERT_EQ(val.size(), 2u);
  for (const Tracklet& t : val) EXPECT_EQ(t.scene_id, 17);
  EXPECT_EQ(extract_tracklets(scenes, Split::train).size(), 2u);
  EXPECT_EQ(extract_tracklets(scenes).size(), 6u);
}

TEST(ExtractTracklets, MissingScanUsesEmptyCloud) {
  Scene s = toy_scene(0);
  s.frames.erase(4);
  const auto t = extract_tracklets({s});
  ASSERT_EQ(t[0].size(), 3u);
  EXPECT_TRUE(t[0].frames[1].cloud->empty());
}

TEST(ExtractTracklets, Deterministic) {
  const auto a = extract_tracklets({toy_scene(1)});
  const auto b = extract_tracklets({toy_scene(1)});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t f = 0; f < a[i].size(); ++f) EXPECT_EQ(a[i].frames[f].box, b[i].frames[f].box);
}

TEST(SceneFiles, WriteLoadRoundTrip) {
  TempDir dir("scene");
  Scene s = toy_scene(4);
  auto dense = std::make_shared<PointCloud>();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 300; ++i) dense->points.push_back({u(rng), u(rng), 0.1 * u(rng)});
  s.frames[3] = dense;
  write_scene(dir.path, s);
  EXPECT_TRUE(fs::exists(dir.path / "velodyne" / "0004" / "000003.bin"));
  EXPECT_TRUE(fs::exists(dir.path / "label_02" / "0004.txt"));
  EXPECT_TRUE(fs::exists(dir.path / "calib" / "0004.txt"));

  LoadOptions all;
  all.keep_radius = 0.0;
  const Scene back = load_scene(dir.path, 4, all);
  EXPECT_EQ(back.labels.size(), s.labels.size());
  ASSERT_EQ(back.frames.size(), 3u);
  ASSERT_EQ(back.frames.at(3)->size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_LE((back.frames.at(3)->points[i] - dense->points[i]).norm(), 1e-4);

  const Scene near = load_scene(dir.path, 4);
  const auto cars = extract_tracklets({near});
  ASSERT_LT(near.frames.at(3)->size(), 300u);
  for (const Vec3& p : near.frames.at(3)->points) {
    bool close = false;
    for (const Tracklet& t : cars)
      for (const TrackletFrame& f : t.frames)
        if (f.frame == 3) {
          const double dx = p.x - f.box.center.x, dy = p.y - f.box.center.y;
          close = close || dx * dx + dy * dy < 144.0;
        }
    EXPECT_TRUE(close);
  }
}

TEST(SceneFiles, MissingInputsAreDataErrors) {
  TempDir dir("scene");
  EXPECT_THROW(load_scene(dir.path, 0), DataError);
  EXPECT_TRUE(load_scenes(dir.path, {0, 1}).empty());
}

// --- model shape ------------------------------------------------------------------

Tracklet shape_tracklet() {
  std::mt19937_64 rng(8);
  Tracklet t;
  for (int f = 0; f < 4; ++f) {
    TrackletFrame fr;
    fr.frame = f;
    fr.box.center = {10.0 + f, 1.0, -1.0};
    fr.box.size = {1.8, 1.5, 4.2};
    fr.box.yaw = 0.2 * f;
    auto c = std::make_shared<PointCloud>(testing::random_cloud(300, rng, 2.0));
    for (Vec3& p : c->points) p = p + fr.box.center;
    fr.cloud = c;
    t.frames.push_back(fr);
  }
  return t;
}

TEST(BuildModelShape, SingleFrameIsItsCanonicalCrop) {
  Tracklet t = shape_tracklet();
  t.frames.resize(1);
  const PointCloud m = build_model_shape(t);
  const PointCloud expected = canonicalize(crop(*t.frames[0].cloud, t.frames[0].box, CropPolicy{}), t.frames[0].box);
  EXPECT_EQ(m.points, expected.points);
}

TEST(BuildModelShape, CountIsSumOfCrops) {
  const Tracklet t = shape_tracklet();
  std::size_t total = 0;
  for (const TrackletFrame& f : t.frames) total += crop(*f.cloud, f.box, CropPolicy{}).size();
  EXPECT_EQ(build_model_shape(t).size(), total);
  EXPECT_GT(total, 0u);
  for (const Vec3& p : build_model_shape(t).points) {
    EXPECT_LT(std::abs(p.x), 0.5 * 1.8 * 1.25);
    EXPECT_LT(std::abs(p.y), 0.5 * 4.2 * 1.25);
  }
}

TEST(BuildModelShape, EmptyTrackletRejected) {
  EXPECT_THROW(build_model_shape(Tracklet{}), PreconditionError);
}

TEST(MotionOffsets, MatchConsecutiveBoxes) {
  const Tracklet t = shape_tracklet();
  const auto offs = collect_motion_offsets({t});
  ASSERT_EQ(offs.size(), 3u);
  for (std::size_t i = 0; i < offs.size(); ++i) {
    const Box3D moved = apply_offset(t.frames[i].box, offs[i]);
    EXPECT_LE((moved.center - t.frames[i + 1].box.center).norm(), 1e-9);
  }
}

}  // namespace
}  // namespace sc3d
