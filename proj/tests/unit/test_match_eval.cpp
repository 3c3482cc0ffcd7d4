#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "oracles.hpp"
#include "sekd/eval/evaluate.hpp"
#include "sekd/io/image_io.hpp"
#include "synthetic.hpp"

using namespace sekd;
using namespace sekd::eval;
namespace fs = std::filesystem;

namespace {

Descriptors random_descriptors(Rng& rng, int n, int dim, int levels) {
  Descriptors d(n, std::vector<float>(dim));
  for (auto& v : d)
    for (auto& x : v) x = static_cast<float>(rng.below(levels));
  return d;
}

std::vector<std::pair<int, int>> pairs(const MatchSet& m) {
  std::vector<std::pair<int, int>> v;
  for (const auto& x : m) v.emplace_back(x.a, x.b);
  return v;
}

Eigen::Matrix3d random_homography(Rng& rng) {
  Eigen::Matrix3d h;
  h << rng.uniform(0.8, 1.2), rng.uniform(-0.2, 0.2), rng.uniform(-20, 20), rng.uniform(-0.2, 0.2),
      rng.uniform(0.8, 1.2), rng.uniform(-20, 20), rng.uniform(-5e-4, 5e-4), rng.uniform(-5e-4, 5e-4), 1.0;
  return h;
}

double corner_oracle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b, int h, int w) {
  const double xs[4] = {0, double(w - 1), 0, double(w - 1)}, ys[4] = {0, 0, double(h - 1), double(h - 1)};
  double s = 0.0;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Vector3d p(xs[k], ys[k], 1.0);
    const Eigen::Vector3d qa = a * p, qb = b * p;
    s += std::hypot(qa.x() / qa.z() - qb.x() / qb.z(), qa.y() / qa.z() - qb.y() / qb.z());
  }
  return s / 4;
}

PairResult pair_with(const std::string& seq, double err, bool ok = true) {
  PairResult p;
  p.sequence = seq;
  p.subset = seq.rfind("i_", 0) == 0 ? "illumination" : "viewpoint";
  p.estimated = ok;
  p.corner_error = err;
  return p;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sekd_eval_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// --- matching -------------------------------------------------------------

TEST(NnMatch, IdenticalSetsMatchToThemselves) {
  Rng rng(1);
  auto a = random_descriptors(rng, 30, 8, 1000);
  for (bool cross : {true, false}) {
    const auto m = nn_match(a, a, cross);
    ASSERT_EQ(m.size(), a.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_EQ(m[i].a, static_cast<int>(i));
      EXPECT_EQ(m[i].b, static_cast<int>(i));
      EXPECT_EQ(m[i].distance, 0.0);
    }
  }
}

TEST(NnMatch, CrossCheckDropsOneSidedPair) {
  // both A points pick B0, but B0 only picks A0 back
  const Descriptors a = {{0.0f}, {10.0f}}, b = {{4.0f}};
  EXPECT_EQ(pairs(nn_match(a, b, false)), (std::vector<std::pair<int, int>>{{0, 0}, {1, 0}}));
  EXPECT_EQ(pairs(nn_match(a, b, true)), (std::vector<std::pair<int, int>>{{0, 0}}));
}

TEST(NnMatch, TiesGoToLowerIndex) {
  const Descriptors a = {{1.0f}}, b = {{0.0f}, {2.0f}, {0.0f}};
  const auto m = nn_match(a, b, false);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].b, 0);
  EXPECT_DOUBLE_EQ(m[0].distance, 1.0);
}

TEST(NnMatch, AgreesWithExhaustiveScan) {
  Rng rng(2);
  for (int t = 0; t < 40; ++t) {
    const int n = 1 + static_cast<int>(rng.below(128)), m = 1 + static_cast<int>(rng.below(128));
    const int levels = t % 2 ? 3 : 100;  // coarse levels force many ties
    const auto a = random_descriptors(rng, n, 6, levels), b = random_descriptors(rng, m, 6, levels);
    EXPECT_EQ(pairs(nn_match(a, b, true)), sekd::testing::brute_nn_match(a, b, true));
    EXPECT_EQ(pairs(nn_match(a, b, false)), sekd::testing::brute_nn_match(a, b, false));
  }
}

TEST(NnMatch, CrossCheckIsSymmetricAndOneToOne) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_descriptors(rng, 50, 4, 5), b = random_descriptors(rng, 70, 4, 5);
    const auto ab = nn_match(a, b, true), ba = nn_match(b, a, true);
    std::set<std::pair<int, int>> s1, s2;
    std::set<int> used_b;
    for (const auto& x : ab) {
      s1.insert({x.a, x.b});
      EXPECT_TRUE(used_b.insert(x.b).second);
      EXPECT_GE(x.distance, 0.0);
    }
    for (const auto& x : ba) s2.insert({x.b, x.a});
    EXPECT_EQ(s1, s2);
  }
}

TEST(NnMatch, EmptyInputs) {
  EXPECT_TRUE(nn_match({}, {{1.0f}}).empty());
  EXPECT_TRUE(nn_match({{1.0f}}, {}).empty());
}

TEST(RatioTest, SingleCandidateKept) {
  const auto m = ratio_test_match({{0.0f, 0.0f}}, {{3.0f, 4.0f}}, 0.8);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_DOUBLE_EQ(m[0].distance, 5.0);
}

TEST(RatioTest, EqualDistancesRejected) {
  const Descriptors a = {{0.0f}}, b = {{-1.0f}, {1.0f}};
  for (double r : {0.5, 0.8, 0.99}) EXPECT_TRUE(ratio_test_match(a, b, r).empty());
}

TEST(RatioTest, ThresholdIsStrict) {
  // d1 = 1, d2 = 2
  const Descriptors a = {{0.0f}}, b = {{1.0f}, {2.0f}};
  EXPECT_TRUE(ratio_test_match(a, b, 0.5).empty());
  EXPECT_EQ(ratio_test_match(a, b, 0.51).size(), 1u);
  EXPECT_THROW(ratio_test_match(a, b, 0.0), ConfigError);
}

TEST(RatioTest, AgreesWithExhaustiveScan) {
  Rng rng(4);
  for (int t = 0; t < 40; ++t) {
    const int n = 1 + static_cast<int>(rng.below(100)), m = 1 + static_cast<int>(rng.below(100));
    const auto a = random_descriptors(rng, n, 5, t % 2 ? 3 : 50), b = random_descriptors(rng, m, 5, t % 2 ? 3 : 50);
    EXPECT_EQ(pairs(ratio_test_match(a, b, 0.8)), sekd::testing::brute_ratio_match(a, b, 0.8));
  }
}

// --- homography -------------------------------------------------------------

TEST(Homography, DltOnFourExactPoints) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Matrix3d h = random_homography(rng);
    const std::vector<Point2> src = {{rng.uniform(0, 40), rng.uniform(0, 40)},
                                     {rng.uniform(160, 200), rng.uniform(0, 40)},
                                     {rng.uniform(0, 40), rng.uniform(110, 150)},
                                     {rng.uniform(160, 200), rng.uniform(110, 150)}};
    std::vector<Point2> dst;
    for (auto p : src) dst.push_back(project(h, p));
    const Eigen::Matrix3d e = normalize_homography(dlt(src, dst)) - normalize_homography(h);
    EXPECT_LT(e.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Homography, NormalizationFixesScale) {
  Eigen::Matrix3d h;
  h << 2, 0, 4, 0, 2, 6, 0, 0, 2;
  const auto n = normalize_homography(h);
  EXPECT_DOUBLE_EQ(n(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(n(0, 2), 2.0);
  // projection ignores scale
  EXPECT_EQ(project(h, {3, 4}), project(n, {3, 4}));
}

TEST(Homography, ExactCorrespondencesRecovered) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const Eigen::Matrix3d h = random_homography(rng);
    std::vector<Point2> a, b;
    for (int i = 0; i < 20; ++i) {
      a.push_back({rng.uniform(0, 200), rng.uniform(0, 150)});
      b.push_back(project(h, a.back()));
    }
    RansacConfig rc;
    rc.seed = t;
    const auto est = estimate_homography(a, b, rc);
    ASSERT_TRUE(est.success);
    EXPECT_EQ(est.inlier_count, 20);
    EXPECT_LT(corner_error(est.h, h, 150, 200), 0.5);
  }
}

TEST(Homography, HalfOutliersSeeded) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const Eigen::Matrix3d h = random_homography(rng);
    std::vector<Point2> a, b;
    std::vector<int> truth;
    for (int i = 0; i < 60; ++i) {
      a.push_back({rng.uniform(0, 200), rng.uniform(0, 150)});
      const bool outlier = i % 2;
      b.push_back(outlier ? Point2{rng.uniform(0, 200), rng.uniform(0, 150)} : project(h, a.back()));
      truth.push_back(!outlier);
    }
    RansacConfig rc;
    rc.max_iterations = 200;
    rc.seed = 100 + t;
    const auto est = estimate_homography(a, b, rc);
    ASSERT_TRUE(est.success);
    EXPECT_LT(corner_error(est.h, h, 150, 200), 1.0);
    EXPECT_LE(est.iterations, 200);
    int agree = 0;
    for (int i = 0; i < 60; ++i) agree += (est.inliers[i] != 0) == (truth[i] != 0);
    EXPECT_GE(agree, 57);  // a random outlier may land within 3 px
    // fixed seed, fixed answer
    const auto again = estimate_homography(a, b, rc);
    EXPECT_EQ(again.h, est.h);
  }
}

TEST(Homography, TooFewMatchesFails) {
  const std::vector<Point2> a = {{0, 0}, {1, 0}, {0, 1}}, b = a;
  const auto est = estimate_homography(a, b, {});
  EXPECT_FALSE(est.success);
  EXPECT_FALSE(est.failure.empty());
  EXPECT_THROW(estimate_homography(a, {{0, 0}}, {}), ShapeError);
  RansacConfig bad;
  bad.threshold = 0.0;
  EXPECT_THROW(estimate_homography(a, b, bad), ConfigError);
}

TEST(Homography, CollinearDataFails) {
  std::vector<Point2> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back({double(i), 2.0 * i});
    b.push_back({double(i) + 1, 2.0 * i});
  }
  EXPECT_FALSE(estimate_homography(a, b, {}).success);
}

TEST(Accuracy, IdentityAgainstItselfIsExact) {
  Rng rng(8);
  const Eigen::Matrix3d h = random_homography(rng);
  EXPECT_NEAR(corner_error(h, h, 240, 320), 0.0, 1e-12);
  for (int e = 1; e <= 10; ++e) EXPECT_TRUE(homography_accuracy(h, h, 240, 320, e));
}

TEST(Accuracy, TranslationClosedForm) {
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 2) = 5.0;
  EXPECT_DOUBLE_EQ(corner_error(Eigen::Matrix3d::Identity(), t, 100, 80), 5.0);
  for (int e = 1; e <= 10; ++e) EXPECT_EQ(homography_accuracy(Eigen::Matrix3d::Identity(), t, 100, 80, e), e >= 5);
}

TEST(Accuracy, MatchesCornerArithmetic) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_homography(rng), b = random_homography(rng);
    EXPECT_NEAR(corner_error(a, b, 120, 160), corner_oracle(a, b, 120, 160), 1e-9);
  }
}

TEST(Accuracy, CornersOrder) {
  const auto c = image_corners(10, 20);
  EXPECT_EQ(c[0], (Point2{0, 0}));
  EXPECT_EQ(c[1], (Point2{19, 0}));
  EXPECT_EQ(c[2], (Point2{0, 9}));
  EXPECT_EQ(c[3], (Point2{19, 9}));
}

// --- reports ----------------------------------------------------------------

TEST(Report, TwoSequenceFixture) {
  // i_a: 0.5, 3.2, failed; v_b: 1.0, 7.5
  const auto r = make_report({pair_with("i_a", 0.5), pair_with("i_a", 3.2), pair_with("i_a", 0.0, false),
                              pair_with("v_b", 1.0), pair_with("v_b", 7.5)});
  const std::array<double, 10> overall = {0.4, 0.4, 0.4, 0.6, 0.6, 0.6, 0.6, 0.8, 0.8, 0.8};
  const std::array<double, 10> ill = {1 / 3.0, 1 / 3.0, 1 / 3.0, 2 / 3.0, 2 / 3.0, 2 / 3.0, 2 / 3.0, 2 / 3.0, 2 / 3.0, 2 / 3.0};
  const std::array<double, 10> view = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0};
  for (int e = 0; e < 10; ++e) {
    EXPECT_NEAR(r.overall.ha[e], overall[e], 1e-12) << e;
    EXPECT_NEAR(r.subsets.at("illumination").ha[e], ill[e], 1e-12) << e;
    EXPECT_NEAR(r.subsets.at("viewpoint").ha[e], view[e], 1e-12) << e;
  }
  EXPECT_NEAR(r.overall.average, 0.6, 1e-12);
  EXPECT_NEAR(r.subsets.at("illumination").average, 17.0 / 30.0, 1e-12);
  EXPECT_NEAR(r.subsets.at("viewpoint").average, 0.65, 1e-12);
  EXPECT_EQ(r.overall.pairs, 5);
  EXPECT_EQ(r.sequences.at("i_a").pairs, 3);
  EXPECT_EQ(r.sequences.size(), 2u);

  const auto rows = report_rows(r);
  ASSERT_EQ(rows.size(), 5u + 2u + 2u + 1u);
  EXPECT_TRUE(rows[2]["corner_error"].is_null());
  EXPECT_EQ(rows.back()["type"], "overall");
  EXPECT_NEAR(rows.back()["avg"].get<double>(), 0.6, 1e-12);
}

TEST(Report, MonotoneAndAveraged) {
  Rng rng(10);
  for (int t = 0; t < 50; ++t) {
    std::vector<PairResult> ps;
    for (int k = 0; k < 12; ++k)
      ps.push_back(pair_with(rng.below(2) ? "i_x" : "v_y", rng.uniform(0, 14), rng.below(5) != 0));
    const auto r = make_report(ps);
    double s = 0.0;
    for (int e = 0; e < 10; ++e) {
      if (e) EXPECT_GE(r.overall.ha[e], r.overall.ha[e - 1]);
      EXPECT_GE(r.overall.ha[e], 0.0);
      EXPECT_LE(r.overall.ha[e], 1.0);
      s += r.overall.ha[e];
    }
    EXPECT_NEAR(r.overall.average, s / 10, 1e-12);
  }
}

TEST(Report, SubsetFromName) {
  Sequence s;
  s.name = "i_ajuntament";
  EXPECT_EQ(s.subset(), "illumination");
  s.name = "v_boat";
  EXPECT_EQ(s.subset(), "viewpoint");
  s.name = "boat";
  EXPECT_EQ(s.subset(), "other");
}

TEST(Evaluate, IdenticalPairIsPerfect) {
  Rng init(11);
  const auto p = model::init_params<float>(init, {});
  Rng rng(12);
  Sequence s;
  s.name = "v_same";
  s.images = {geometry::luminance(sekd::testing::synthetic_scene(rng, {96, 128, 30, 8, 1}))};
  s.images.push_back(s.images[0]);
  s.homographies = {Eigen::Matrix3d::Identity()};
  const auto r = evaluate_sequences(p, {s}, {});
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_TRUE(r.pairs[0].estimated);
  EXPECT_GT(r.pairs[0].matches, 4);
  EXPECT_EQ(r.pairs[0].matches, r.pairs[0].keypoints_a);
  EXPECT_EQ(r.pairs[0].target, 2);
  for (double v : r.overall.ha) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(r.overall.average, 1.0);

  s.homographies.clear();
  EXPECT_THROW(evaluate_sequences(p, {s}, {}), DataError);
}

TEST(Evaluate, TopKCapsKeypoints) {
  Rng init(13);
  const auto p = model::init_params<float>(init, model::ArchConfig::tiny(8));
  Rng rng(14);
  const auto img = geometry::luminance(sekd::testing::synthetic_scene(rng, {96, 128, 30, 8, 1}));
  const auto k = describe_image(p, img, {4, 50, 0.0f});
  EXPECT_EQ(k.size(), 50u);
  ASSERT_EQ(k.descriptors.size(), k.size());
  EXPECT_EQ(k.descriptors[0].size(), 8u);
}

// --- ingestion --------------------------------------------------------------

TEST(HPatches, LoadsSequencesAndRescalesHomographies) {
  const auto root = temp_dir("hp");
  Rng rng(15);
  Eigen::Matrix3d h;
  h << 1.1, 0.02, 3.0, -0.01, 0.95, -2.0, 1e-4, 0.0, 1.0;
  for (const std::string name : {"i_one", "v_two"}) {
    fs::create_directories(root / name);
    for (int k = 1; k <= 3; ++k) {
      io::save_image(root / name / (std::to_string(k) + ".png"), sekd::testing::synthetic_scene(rng, {100, 200, 10, 2, 1}));
      if (k > 1) io::write_homography(root / name / ("H_1_" + std::to_string(k)), h);
    }
  }
  fs::create_directories(root / "empty_dir");

  const auto seqs = io::load_hpatches(root);
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].name, "i_one");
  EXPECT_EQ(seqs[0].subset(), "illumination");
  EXPECT_EQ(seqs[1].subset(), "viewpoint");
  ASSERT_EQ(seqs[0].images.size(), 3u);
  ASSERT_EQ(seqs[0].homographies.size(), 2u);
  EXPECT_LT((seqs[0].homographies[0] - h).cwiseAbs().maxCoeff(), 1e-12);

  // half size: points scale by 0.5 on both sides
  const auto small = io::load_hpatches(root, 100);
  EXPECT_EQ(small[0].images[0].w(), 100);
  EXPECT_EQ(small[0].images[0].h(), 50);
  const Point2 p{40, 30};
  const Point2 full = project(h, {2 * p.x, 2 * p.y});
  const Point2 half = project(small[0].homographies[1], p);
  EXPECT_NEAR(half.x, full.x / 2, 1e-9);
  EXPECT_NEAR(half.y, full.y / 2, 1e-9);

  fs::remove(root / "v_two" / "H_1_3");
  EXPECT_THROW(io::load_hpatches(root), DataError);
  EXPECT_THROW(io::load_hpatches(root / "missing"), DataError);
  fs::remove_all(root);
}

// --- diagnostics ------------------------------------------------------------

TEST(Diagnostics, PerfectStubsScoreOne) {
  const auto a = geometry::AffineTransform::translation(3, -2);
  detect::KeypointSet ka, kb;
  for (int i = 0; i < 12; ++i) {
    const detect::Pixel p{10 + 7 * (i / 4), 10 + 9 * (i % 4)};
    ka.push(p, 1.0f);
    kb.push(detect::round_pixel(a.apply(detect::to_point(p))), 1.0f);
    std::vector<float> d(12, 0.0f);
    d[i] = 1.0f;
    ka.descriptors.push_back(d);
    kb.descriptors.push_back(d);
  }
  // shuffle B so matching is not positional
  std::reverse(kb.points.begin(), kb.points.end());
  std::reverse(kb.descriptors.begin(), kb.descriptors.end());
  const auto s = score_view_pair(ka, kb, a, 3.0);
  EXPECT_DOUBLE_EQ(s.repeatability, 1.0);
  EXPECT_DOUBLE_EQ(s.matching_score, 1.0);
  EXPECT_EQ(s.correct_matches, 12);
}

TEST(Diagnostics, HandCountedPair) {
  // A: (0,0), (0,10); B: (0,2), (20,20). Identity warp, radius 3.
  detect::KeypointSet ka, kb;
  ka.push({0, 0}, 1);
  ka.push({0, 10}, 1);
  kb.push({0, 2}, 1);
  kb.push({20, 20}, 1);
  ka.descriptors = {{0.0f}, {1.0f}};
  kb.descriptors = {{1.0f}, {0.0f}};  // A0 <-> B1 (wrong place), A1 <-> B0 (8 px off)
  const auto s = score_view_pair(ka, kb, {}, 3.0);
  EXPECT_EQ(s.repeated_a, 1);
  EXPECT_EQ(s.repeated_b, 1);
  EXPECT_DOUBLE_EQ(s.repeatability, 0.5);
  EXPECT_EQ(s.matches, 2);
  EXPECT_EQ(s.correct_matches, 0);
  EXPECT_DOUBLE_EQ(s.matching_score, 0.0);
}

TEST(Diagnostics, CovisibleMask) {
  Mask valid(10, 10, 1);
  const auto m = covisible_mask(geometry::AffineTransform::translation(4, 0), valid);
  for (int x = 0; x < 10; ++x) EXPECT_EQ(m(5, x) != 0, x < 6) << x;
}

TEST(Diagnostics, MetricsBoundedWithRandomBaseline) {
  Rng init(16);
  const auto p = model::init_params<float>(init, model::ArchConfig::tiny(8));
  const auto imgs = sekd::testing::synthetic_scenes(17, 2, {80, 96, 20, 6, 1});
  DiagnosticConfig cfg;
  cfg.trials = 3;
  cfg.top_k = 60;
  Rng rng(18);
  const auto d = repeatability_and_matching_score(p, imgs, cfg, rng);
  EXPECT_EQ(d.trials, 6);
  for (double v : {d.repeatability, d.matching_score, d.random_repeatability, d.random_matching_score}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_GT(d.random_repeatability, 0.0);
}
