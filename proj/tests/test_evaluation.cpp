#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "sc3d/evaluation.hpp"
#include "sc3d/synthetic.hpp"
#include "support.hpp"

namespace sc3d {
namespace {

TEST(SuccessAuc, ConstantOverlaps) {
  EXPECT_NEAR(success_auc(std::vector<double>(10, 1.0)), 100.0, 0.5);
  EXPECT_DOUBLE_EQ(success_auc(std::vector<double>(10, 0.0)), 0.0);
  EXPECT_NEAR(success_auc(std::vector<double>(7, 0.5)), 50.0, 0.5);
}

TEST(SuccessAuc, MatchesContinuousIntegralOfTheStepFunction) {
  // The exact area under "fraction with IoU > tau" is the mean IoU.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> o(50);
    for (double& v : o) v = u(rng);
    double mean = 0.0;
    for (double v : o) mean += v / static_cast<double>(o.size());
    EXPECT_NEAR(success_auc(o), 100.0 * mean, 1.0);
  }
}

TEST(SuccessAuc, RejectsInvalidInput) {
  EXPECT_THROW(success_auc({}), PreconditionError);
  EXPECT_THROW(success_auc({1.5}), PreconditionError);
  EXPECT_THROW(success_auc({-0.1}), PreconditionError);
}

TEST(PrecisionAuc, ConstantErrors) {
  EXPECT_NEAR(precision_auc(std::vector<double>(5, 0.0)), 100.0, 0.5);
  EXPECT_NEAR(precision_auc(std::vector<double>(5, 2.0)), 0.0, 0.5);
  EXPECT_DOUBLE_EQ(precision_auc(std::vector<double>(5, 3.5)), 0.0);
  EXPECT_NEAR(precision_auc(std::vector<double>(5, 1.0)), 50.0, 0.5);
  EXPECT_THROW(precision_auc({}), PreconditionError);
  EXPECT_THROW(precision_auc({-1.0}), PreconditionError);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_DOUBLE_EQ(precision_auc({inf, inf}), 0.0);
}

TEST(PrecisionAuc, MatchesContinuousIntegral) {
  // Area under "fraction with error <= t" over [0, 2], normalized: mean of (2 - min(e, 2)) / 2.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> e(40);
    for (double& v : e) v = u(rng);
    double area = 0.0;
    for (double v : e) area += (2.0 - std::min(v, 2.0)) / 2.0 / static_cast<double>(e.size());
    EXPECT_NEAR(precision_auc(e), 100.0 * area, 0.5);
  }
}

TEST(Curves, MonotoneAndBounded) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> o(30), e(30);
  for (double& v : o) v = u(rng);
  for (double& v : e) v = 2.5 * u(rng);
  const auto sc = success_curve(o), pc = precision_curve(e);
  ASSERT_EQ(sc.size(), kSuccessSteps + 1);
  ASSERT_EQ(pc.size(), kPrecisionSteps + 1);
  for (std::size_t i = 1; i < sc.size(); ++i) EXPECT_LE(sc[i], sc[i - 1]);
  for (std::size_t i = 1; i < pc.size(); ++i) EXPECT_GE(pc[i], pc[i - 1]);
  for (double v : sc) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  EXPECT_DOUBLE_EQ(success_threshold(50), 0.5);
  EXPECT_DOUBLE_EQ(precision_threshold(200), 2.0);
}

TEST(Metrics, OrderInvariantAndMonotoneUnderImprovement) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> o(25), e(25);
  for (double& v : o) v = u(rng);
  for (double& v : e) v = 2.0 * u(rng);
  const double s0 = success_auc(o), p0 = precision_auc(e);
  std::vector<double> os = o, es = e;
  std::shuffle(os.begin(), os.end(), rng);
  std::shuffle(es.begin(), es.end(), rng);
  EXPECT_DOUBLE_EQ(success_auc(os), s0);
  EXPECT_DOUBLE_EQ(precision_auc(es), p0);
  for (std::size_t i = 0; i < o.size(); ++i) {
    std::vector<double> better_o = o, better_e = e;
    better_o[i] = std::min(1.0, o[i] + 0.2);
    better_e[i] = std::max(0.0, e[i] - 0.3);
    EXPECT_GE(success_auc(better_o), s0);
    EXPECT_GE(precision_auc(better_e), p0);
  }
}

// --- evaluate_run ----------------------------------------------------------------

std::vector<Tracklet> test_tracklets() {
  SyntheticConfig cfg;
  cfg.frames = 6;
  std::vector<Tracklet> out;
  for (int i = 0; i < 3; ++i) {
    std::mt19937_64 rng(10 + static_cast<std::uint64_t>(i));
    cfg.speed = 0.3 * i;
    out.push_back(generate_synthetic_tracklet(cfg, rng));
    out.back().scene_id = 19;
    out.back().track_id = i;
    out.back().frames[2].occluded = true;
  }
  return out;
}

std::vector<TrackResult> perfect(const std::vector<Tracklet>& ts) {
  std::vector<TrackResult> out;
  for (const Tracklet& t : ts) {
    TrackResult r;
    r.scene_id = t.scene_id;
    r.track_id = t.track_id;
    for (const TrackletFrame& f : t.frames) r.frames.push_back({f.frame, f.box, 1.0, 1});
    out.push_back(r);
  }
  return out;
}

TEST(EvaluateRun, GroundTruthPredictionsArePerfect) {
  const auto ts = test_tracklets();
  const OpeReport r = evaluate_run(perfect(ts), ts);
  EXPECT_NEAR(r.success, 100.0, 0.5);
  EXPECT_NEAR(r.precision, 100.0, 0.5);
  EXPECT_EQ(r.frames, 18u);
  EXPECT_EQ(r.failed_tracklets, 0u);
}

TEST(EvaluateRun, FixtureOverlapAndErrorLevels) {
  const auto ts = test_tracklets();
  auto half = perfect(ts);
  auto meter = perfect(ts);
  for (auto& r : half)
    for (auto& f : r.frames) {
      // A sideways shift of w/3 overlaps 2w/3 out of a 4w/3 union.
      const Box3D g = f.box;
      f.box = apply_offset(g, {g.size.width / 3.0, 0.0, 0.0});
    }
  for (auto& r : meter)
    for (auto& f : r.frames) f.box = apply_offset(f.box, {0.0, 1.0, 0.0});
  for (auto& r : half)
    for (std::size_t i = 0; i < r.frames.size(); ++i)
      EXPECT_NEAR(iou_3d(r.frames[i].box, ts[static_cast<std::size_t>(r.track_id)].frames[i].box), 0.5, 1e-9);
  EXPECT_NEAR(evaluate_run(half, ts).success, 50.0, 0.5);
  EXPECT_NEAR(evaluate_run(meter, ts).precision, 50.0, 0.5);
}

TEST(EvaluateRun, ResultOrderDoesNotMatter) {
  const auto ts = test_tracklets();
  auto res = perfect(ts);
  for (auto& r : res) r.frames.back().box.center.x += 0.4;
  const OpeReport a = evaluate_run(res, ts);
  std::reverse(res.begin(), res.end());
  const OpeReport b = evaluate_run(res, ts);
  EXPECT_EQ(a.success, b.success);
  EXPECT_EQ(a.precision, b.precision);
}

TEST(EvaluateRun, FailedTrackletsScoreZeroAfterTheFailure) {
  const auto ts = test_tracklets();
  auto res = perfect(ts);
  res[1].frames.resize(2);
  res[1].failed = true;
  const OpeReport r = evaluate_run(res, ts);
  EXPECT_EQ(r.failed_tracklets, 1u);
  EXPECT_EQ(r.frames, 18u);
  EXPECT_NEAR(r.success, 100.0 * 14.0 / 18.0, 0.6);
  EXPECT_NEAR(r.precision, 100.0 * 14.0 / 18.0, 0.6);
}

TEST(EvaluateRun, AlignmentErrors) {
  const auto ts = test_tracklets();
  auto res = perfect(ts);
  res.pop_back();
  EXPECT_THROW(evaluate_run(res, ts), DataError);
  auto short_run = perfect(ts);
  short_run[0].frames.pop_back();
  EXPECT_THROW(evaluate_run(short_run, ts), DataError);
  auto wrong_id = perfect(ts);
  wrong_id[0].track_id = 99;
  EXPECT_THROW(evaluate_run(wrong_id, ts), DataError);
  auto wrong_frame = perfect(ts);
  wrong_frame[0].frames[3].frame = 77;
  EXPECT_THROW(evaluate_run(wrong_frame, ts), DataError);
}

TEST(EvaluateRun, BevIgnoresHeightErrors) {
  const auto ts = test_tracklets();
  auto res = perfect(ts);
  for (auto& r : res)
    for (auto& f : r.frames) f.box.center.z += 0.5;
  EvalOptions bev;
  bev.mode = EvalMode::bev;
  const OpeReport b = evaluate_run(res, ts, bev);
  const OpeReport d = evaluate_run(res, ts);
  EXPECT_NEAR(b.precision, 100.0, 0.5);
  EXPECT_NEAR(b.success, 100.0, 0.5);
  EXPECT_LT(d.precision, 90.0);
  EXPECT_LT(d.success, 90.0);
  EXPECT_EQ(parse_eval_mode("bev"), EvalMode::bev);
  EXPECT_THROW(parse_eval_mode("2d"), ConfigError);
}

TEST(EvaluateRun, Groups) {
  const auto ts = test_tracklets();
  auto res = perfect(ts);
  for (auto& r : res) r.frames[2].box = apply_offset(r.frames[2].box, {3.0, 3.0, 0.0});
  EvalOptions opts;
  opts.group_occlusion = true;
  opts.group_motion = true;
  const OpeReport r = evaluate_run(res, ts, opts);
  ASSERT_EQ(r.groups.count("occluded"), 1u);
  EXPECT_EQ(r.groups.at("occluded").frames, 3u);
  EXPECT_EQ(r.groups.at("visible").frames, 15u);
  EXPECT_DOUBLE_EQ(r.groups.at("occluded").success, 0.0);
  EXPECT_NEAR(r.groups.at("visible").success, 100.0, 0.5);
  // Speeds 0, 0.3 and 0.6 m per frame all fall under the static threshold.
  EXPECT_EQ(r.groups.at("static").frames, 18u);
  EXPECT_EQ(r.groups.count("dynamic"), 0u);
  opts.static_threshold = 0.5;
  const OpeReport r2 = evaluate_run(res, ts, opts);
  EXPECT_EQ(r2.groups.at("dynamic").frames, 6u);
}

TEST(AverageReports, MeansOfRuns) {
  const auto ts = test_tracklets();
  auto a = perfect(ts), b = perfect(ts);
  for (auto& r : b)
    for (auto& f : r.frames) f.box = apply_offset(f.box, {0.0, 1.0, 0.0});
  EvalOptions opts;
  opts.group_occlusion = true;
  const OpeReport ra = evaluate_run(a, ts, opts), rb = evaluate_run(b, ts, opts);
  const OpeReport avg = average_reports({ra, rb});
  EXPECT_EQ(avg.runs, 2u);
  EXPECT_DOUBLE_EQ(avg.success, 0.5 * (ra.success + rb.success));
  EXPECT_DOUBLE_EQ(avg.precision, 0.5 * (ra.precision + rb.precision));
  EXPECT_DOUBLE_EQ(avg.success_curve[30], 0.5 * (ra.success_curve[30] + rb.success_curve[30]));
  EXPECT_DOUBLE_EQ(avg.groups.at("visible").precision,
                   0.5 * (ra.groups.at("visible").precision + rb.groups.at("visible").precision));
  EXPECT_THROW(average_reports({}), PreconditionError);
}

TEST(Reports, JsonAndCsv) {
  const auto ts = test_tracklets();
  EvalOptions opts;
  opts.group_motion = true;
  const OpeReport r = evaluate_run(perfect(ts), ts, opts);
  const nlohmann::json j = report_to_json(r);
  EXPECT_EQ(j.at("success").get<double>(), r.success);
  EXPECT_EQ(j.at("frames").get<std::size_t>(), 18u);
  EXPECT_TRUE(j.at("groups").contains("static"));
  std::ostringstream os;
  write_curve_csv(os, r.precision_curve, true);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "error_threshold_m,fraction");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, kPrecisionSteps + 1);
}

}  // namespace
}  // namespace sc3d
