#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sekd/train/describe.hpp"
#include "synthetic.hpp"
#include "tiny_instance.hpp"

using namespace sekd;
using namespace sekd::train;
using detect::Pixel;

namespace {

Matrix<double> orthonormal_rows(int n) {
  Matrix<double> m = Matrix<double>::Zero(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<Pixel> spread_pixels(int n) {
  std::vector<Pixel> v;
  for (int i = 0; i < n; ++i) v.push_back({10 * (i / 8), 10 * (i % 8)});
  return v;
}

}  // namespace

TEST(SampleDescriptors, ConstantMapGivesIdenticalRows) {
  Tensor<float> f(1, 3, 5, 6);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      f(0, 0, y, x) = 0.6f;
      f(0, 2, y, x) = 0.8f;
    }
  const auto m = sample_descriptors(f, 0, {{0, 0}, {4, 5}, {2, 3}});
  for (int i = 1; i < 3; ++i) EXPECT_EQ(m.row(i), m.row(0));
}

TEST(SampleDescriptors, OutOfBoundsThrows) {
  Tensor<float> f(1, 2, 4, 4);
  EXPECT_THROW(sample_descriptors(f, 0, {{4, 0}}), ShapeError);
  EXPECT_THROW(sample_descriptors(f, 0, {{0, -1}}), ShapeError);
}

TEST(SampleDescriptors, MatchesDirectIndexing) {
  Rng rng(1);
  Tensor<float> f(2, 6, 9, 7);
  for (auto& v : f.storage()) v = static_cast<float>(rng.normal());
  f = nn::l2_normalize_channels(f);
  std::vector<Pixel> pts;
  for (int k = 0; k < 20; ++k) pts.push_back({int(rng.below(9)), int(rng.below(7))});
  const auto m = sample_descriptors(f, 1, pts);
  for (int k = 0; k < 20; ++k)
    for (int c = 0; c < 6; ++c) EXPECT_NEAR(m(k, c), f(1, c, pts[k].row, pts[k].col), 1e-6f);
}

TEST(Triplet, OrthogonalDescriptorsGiveZero) {
  const auto a = orthonormal_rows(6);
  const auto r = triplet_hard_loss(a, a, spread_pixels(6), {0.8, 4});
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.active, 0);
  for (const auto& n : r.negatives) EXPECT_NEAR(n.distance, std::sqrt(2.0), 1e-12);
}

TEST(Triplet, IdenticalDescriptorsGiveMargin) {
  const Matrix<double> a = Matrix<double>::Constant(5, 4, 0.5);
  EXPECT_NEAR(triplet_hard_loss(a, a, spread_pixels(5), {0.8, 4}).loss, 0.8, 1e-12);
}

TEST(Triplet, FewerThanTwoPairsThrows) {
  const auto a = orthonormal_rows(1);
  EXPECT_THROW(triplet_hard_loss(a, a, spread_pixels(1), {0.8, 4}), DataError);
}

TEST(Triplet, MiningMatchesExhaustiveScan) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + int(rng.below(63)), dim = 1 + int(rng.below(8));
    const bool coarse = trial % 2 == 0;  // integer entries force distance ties
    Matrix<double> a(n, dim), p(n, dim);
    std::vector<std::vector<double>> va(n, std::vector<double>(dim)), vp = va;
    std::vector<Pixel> w;
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < dim; ++c) {
        const double x = rng.uniform(-2, 2), y = rng.uniform(-2, 2);
        va[i][c] = a(i, c) = coarse ? std::round(x) : x;
        vp[i][c] = p(i, c) = coarse ? std::round(y) : y;
      }
      w.push_back({int(rng.below(24)), int(rng.below(24))});
    }
    const int excl = int(rng.below(5));
    const auto r = triplet_hard_loss(a, p, w, {0.8, excl});
    const auto o = sekd::testing::brute_hardest_negatives(va, vp, w, excl);
    double expect = 0.0;
    for (int i = 0; i < n; ++i) {
      ASSERT_EQ(r.negatives[i].index, o[i].index) << "trial " << trial << " anchor " << i;
      if (o[i].index < 0) continue;
      ASSERT_EQ(r.negatives[i].anchor_side, o[i].anchor_side);
      ASSERT_NEAR(r.negatives[i].distance, o[i].distance, 1e-12);
      expect += std::max(0.0, sekd::testing::l2(va[i], vp[i]) - o[i].distance + 0.8);
    }
    ASSERT_NEAR(r.loss, expect / n, 1e-12);
  }
}

TEST(Triplet, NonNegativeAndZeroExactlyWhenEveryHingeHolds) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + int(rng.below(20));
    Matrix<double> a(n, 4), p(n, 4);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 4; ++c) {
        a(i, c) = rng.normal();
        p(i, c) = a(i, c) + rng.uniform(0, trial % 3 == 0 ? 0.05 : 1.0) * rng.normal();
      }
      a.row(i).normalize();
      p.row(i).normalize();
    }
    const auto w = spread_pixels(n);
    const double m = rng.uniform(0.05, 1.0);
    const auto r = triplet_hard_loss(a, p, w, {m, 4});
    ASSERT_GE(r.loss, 0.0);
    bool all = true;
    for (int i = 0; i < n; ++i) all = all && r.positive_distance[i] + m <= r.negatives[i].distance;
    ASSERT_EQ(r.loss == 0.0, all);
  }
}

TEST(Triplet, InvariantToPairPermutation) {
  Rng rng(4);
  const int n = 30;
  Matrix<double> a(n, 5), p(n, 5);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 5; ++c) {
      a(i, c) = rng.normal();
      p(i, c) = a(i, c) + 0.7 * rng.normal();
    }
  std::vector<Pixel> w;
  for (int i = 0; i < n; ++i) w.push_back({int(rng.below(30)), int(rng.below(30))});
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  Matrix<double> ap(n, 5), pp(n, 5);
  std::vector<Pixel> wp(n);
  for (int i = 0; i < n; ++i) {
    ap.row(i) = a.row(perm[i]);
    pp.row(i) = p.row(perm[i]);
    wp[i] = w[perm[i]];
  }
  EXPECT_NEAR(triplet_hard_loss(a, p, w, {0.8, 4}).loss, triplet_hard_loss(ap, pp, wp, {0.8, 4}).loss, 1e-12);
}

TEST(Preservation, ZeroForEqualMaps) {
  Tensor<double> x(2, 2, 4, 4);
  for (auto& v : x.storage()) v = 0.3;
  EXPECT_EQ(preservation_loss(x, x), 0.0);
}

TEST(Preservation, ConstantOffsetGivesSquare) {
  Rng rng(5);
  Tensor<double> x(2, 2, 4, 4), y(2, 2, 4, 4);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.uniform();
    y.data()[i] = x.data()[i] + 0.17;
  }
  EXPECT_NEAR(preservation_loss(x, y), 0.17 * 0.17, 1e-12);
}

TEST(Preservation, MatchesHandRolledMeanSquare) {
  Rng rng(6);
  Tensor<double> x(2, 2, 4, 4), y(2, 2, 4, 4);
  for (auto& v : x.storage()) v = rng.uniform();
  for (auto& v : y.storage()) v = rng.uniform();
  double s0 = 0.0, s1 = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        s0 += std::pow(x(0, c, i, j) - y(0, c, i, j), 2);
        s1 += std::pow(x(1, c, i, j) - y(1, c, i, j), 2);
      }
  EXPECT_NEAR(preservation_loss(x, y), 0.5 * (s0 / 32 + s1 / 32), 1e-12);
}

TEST(DescriptorObjective, AlphaZeroGradientIsPureTripletGradient) {
  auto t = sekd::testing::tiny_instance();
  auto cfg = sekd::testing::tiny_desc_config();
  cfg.alpha = 0.0;
  auto g = t.params.zeros_like();
  const auto rec = descriptor_objective(t.params, t.frozen, t.sample, cfg, &g);
  EXPECT_EQ(rec.total, rec.des);
  EXPECT_GT(rec.active, 0);

  model::Tape<double> tape;
  const auto out = model::forward_batch(t.params, t.sample.images, model::Mode::Train, {}, &tape);
  const auto fa = sample_descriptors(out.desc, 0, t.sample.points_a);
  const auto fb = sample_descriptors(out.desc, 1, t.sample.points_b);
  const auto tr = triplet_hard_loss(fa, fb, t.sample.points_b, cfg.triplet(), true);
  Tensor<double> dprob(out.prob.n(), 2, out.prob.h(), out.prob.w()), ddesc(out.desc.n(), out.desc.c(), out.desc.h(), out.desc.w());
  scatter_descriptor_grad(ddesc, 0, t.sample.points_a, tr.grad_anchor);
  scatter_descriptor_grad(ddesc, 1, t.sample.points_b, tr.grad_positive);
  auto h = t.params.zeros_like();
  model::backward(t.params, tape, dprob, ddesc, h);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t k = 0; k < g[i].size(); ++k) ASSERT_NEAR(g[i].data()[k], h[i].data()[k], 1e-12);
}

TEST(DescriptorObjective, RecordCarriesBothTerms) {
  auto t = sekd::testing::tiny_instance();
  auto cfg = sekd::testing::tiny_desc_config();
  cfg.alpha = 0.7;
  const auto r = descriptor_objective(t.params, t.frozen, t.sample, cfg);
  EXPECT_GT(r.des, 0.0);
  EXPECT_GT(r.det_reg, 0.0);
  EXPECT_NEAR(r.total, r.des + 0.7 * r.det_reg, 1e-12);
  EXPECT_EQ(r.pairs, static_cast<int>(t.sample.points_a.size()));
}

TEST(DescriptorObjective, FullGradientMatchesFiniteDifferences) {
  auto t = sekd::testing::tiny_instance();
  const auto cfg = sekd::testing::tiny_desc_config();
  auto g = t.params.zeros_like();
  descriptor_objective(t.params, t.frozen, t.sample, cfg, &g);
  const auto r = sekd::testing::check_gradients(t.params, g, [&](const model::NetworkParams<double>& q) {
    return descriptor_objective(q, t.frozen, t.sample, cfg).total;
  });
  EXPECT_TRUE(r.ok()) << r.worst_param << "[" << r.worst_index << "] analytic " << r.worst_analytic << " numeric "
                      << r.worst_numeric << " rel " << r.max_rel_error << " near-zero abs " << r.max_abs_error_near_zero;
  EXPECT_EQ(r.checked, t.params.parameter_count());
}

TEST(DescriptorUpdate, SkipsWhenFewerThanTwoPairsSurvive) {
  Rng rng(7);
  auto p = model::init_params<float>(rng, model::ArchConfig::tiny(4));
  const auto snap = p;
  nn::Adam<float> opt(p);
  const auto img = sekd::testing::synthetic_scene(rng, {16, 16, 4, 1, 1});
  const auto view = geometry::make_view(img, geometry::AffineTransform::identity(), {});
  detect::KeypointSet q;
  q.push({1, 1}, 1.0f);  // inside the 4 px border band
  q.push({8, 8}, 1.0f);
  const auto before = p;
  const auto rec = descriptor_update_step(p, snap, opt, 1e-3, geometry::luminance(img), view, q, rng, {});
  EXPECT_TRUE(rec.skipped);
  EXPECT_EQ(rec.pairs, 1);
  for (std::size_t i = 0; i < p.count(); ++i) ASSERT_EQ(p[i].storage(), before[i].storage());
}

// Ten small scenes, one step each per pass, twenty passes. Geometric
// augmentation only: with the full photometric jitter this budget gets the
// loss down by roughly 13%, too little to separate learning from noise.
TEST(DescriptorUpdate, ToySetLossDropsByThirtyPercent) {
  const int side = 64, steps = 200, set = 10;
  const auto imgs = sekd::testing::synthetic_scenes(3, set, {side, side, 40, 12, 1});
  Rng rng(1);
  auto p = model::init_params<float>(rng, model::ArchConfig{});
  const auto snap = p;
  nn::Adam<float> opt(p);
  std::vector<detect::KeypointSet> q;
  std::vector<geometry::Image> lum;
  for (int i = 0; i < set; ++i) {
    Rng r(100 + i);
    q.push_back(detect::random_keypoints(side, side, 1000, r, 4));
    lum.push_back(geometry::luminance(imgs[i]));
  }
  geometry::AugmentConfig aug;
  aug.jitter = false;
  std::vector<double> des;
  for (int s = 0; s < steps; ++s) {
    const int i = s % set;
    Rng r(1000 + s);
    const auto v = geometry::sample_view(r, imgs[i], aug);
    const auto rec = descriptor_update_step(p, snap, opt, 1e-3, lum[i], v, q[i], r, {});
    ASSERT_FALSE(rec.skipped);
    des.push_back(rec.des);
  }
  // running mean over one pass of the set
  const double first = std::accumulate(des.begin(), des.begin() + set, 0.0) / set;
  const double last = std::accumulate(des.end() - set, des.end(), 0.0) / set;
  EXPECT_LE(last, 0.7 * first) << "first " << first << " last " << last;
}
