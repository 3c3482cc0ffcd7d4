#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sekd/reliability/reliability.hpp"
#include "synthetic.hpp"

using namespace sekd;
using namespace sekd::reliability;
using geometry::AffineTransform;

namespace {

Tensor<float> unit_map(Rng& rng, int c, int h, int w) {
  Tensor<float> t(1, c, h, w);
  for (auto& v : t.storage()) v = static_cast<float>(rng.normal());
  return nn::l2_normalize_channels(t);
}

/// Basis vector e_k at every pixel.
Tensor<float> basis_map(int c, int h, int w, int k) {
  Tensor<float> t(1, c, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t(0, k, y, x) = 1.0f;
  return t;
}

ValidGrid all_valid(const Grid<float>& g) { return {g, Mask(g.h(), g.w(), 1)}; }

}  // namespace

TEST(Repeatability, IdentityWarpOfSameMapIsZero) {
  Rng rng(1);
  const auto f = unit_map(rng, 8, 12, 12);
  const auto g = dense_repeatability(f, f, AffineTransform::identity());
  for (std::size_t i = 0; i < g.value.size(); ++i) {
    EXPECT_EQ(g.value.data()[i], 0.0f);
    EXPECT_EQ(g.valid.data()[i], 1);
  }
}

TEST(Repeatability, OrthogonalDescriptorsGiveSqrtTwo) {
  const auto g = dense_repeatability(basis_map(4, 8, 8, 0), basis_map(4, 8, 8, 1), AffineTransform::identity());
  for (float v : g.value.storage()) EXPECT_NEAR(v, std::sqrt(2.0f), 1e-6f);
}

TEST(Repeatability, MatchesPerPixelComputation) {
  Rng rng(2);
  const auto fa = unit_map(rng, 6, 16, 16), fb = unit_map(rng, 6, 16, 16);
  const auto a = geometry::compose(AffineTransform::translation(0.7, 1.2), AffineTransform::rotation_deg(9));
  const auto g = dense_repeatability(fa, fb, a);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const auto t = a.apply({double(x), double(y)});
      const bool inside = t.x >= 0 && t.y >= 0 && t.x <= 15 && t.y <= 15;
      ASSERT_EQ(g.valid(y, x), inside);
      if (!inside) continue;
      const int x0 = int(std::floor(t.x)), y0 = int(std::floor(t.y));
      const int x1 = std::min(x0 + 1, 15), y1 = std::min(y0 + 1, 15);
      const double fx = t.x - x0, fy = t.y - y0;
      double s = 0.0;
      for (int c = 0; c < 6; ++c) {
        const double b = (1 - fy) * ((1 - fx) * fb(0, c, y0, x0) + fx * fb(0, c, y0, x1)) +
                         fy * ((1 - fx) * fb(0, c, y1, x0) + fx * fb(0, c, y1, x1));
        s += (fa(0, c, y, x) - b) * (fa(0, c, y, x) - b);
      }
      ASSERT_NEAR(g.value(y, x), std::sqrt(s), 1e-5);
    }
}

TEST(Distinctness, ConstantViewGivesZero) {
  const auto f = basis_map(4, 16, 16, 2);
  const auto g = dense_distinctness(f, f, AffineTransform::identity(), 4, 1);
  for (std::size_t i = 0; i < g.value.size(); ++i)
    if (g.valid.data()[i]) EXPECT_EQ(g.value.data()[i], 0.0f);
}

TEST(Distinctness, PlantedDistinctPixel) {
  auto fa = basis_map(4, 16, 16, 0);
  const auto fb = basis_map(4, 16, 16, 0);
  for (int c = 0; c < 4; ++c) fa(0, c, 8, 8) = c == 1 ? 1.0f : 0.0f;
  const auto g = dense_distinctness(fa, fb, AffineTransform::identity(), 4, 1);
  EXPECT_NEAR(g.value(8, 8), std::sqrt(2.0f), 1e-6f);
  EXPECT_EQ(g.value(3, 3), 0.0f);
}

TEST(Distinctness, MatchesExhaustiveWindowScan) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const auto fa = unit_map(rng, 5, 16, 16), fb = unit_map(rng, 5, 16, 16);
    const auto a = geometry::sample_affine(rng, {}, 16, 16);
    const int window = 3 + t % 3, excl = t % 2 + 1;
    const auto g = dense_distinctness(fa, fb, a, window, excl);
    Mask valid;
    const auto o = sekd::testing::brute_distinctness(fa, fb, a, window, excl, &valid);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        ASSERT_EQ(g.valid(y, x), valid(y, x));
        if (valid(y, x)) ASSERT_EQ(g.value(y, x), static_cast<float>(o(y, x)));
      }
  }
}

TEST(Distances, NonNegativeAndBoundedForUnitDescriptors) {
  Rng rng(4);
  const auto fa = unit_map(rng, 8, 20, 20), fb = unit_map(rng, 8, 20, 20);
  const auto a = geometry::sample_affine(rng, {}, 20, 20);
  for (const auto& g : {dense_repeatability(fa, fb, a), dense_distinctness(fa, fb, a, 8, 2)})
    for (std::size_t i = 0; i < g.value.size(); ++i)
      if (g.valid.data()[i]) {
        ASSERT_GE(g.value.data()[i], 0.0f);
        ASSERT_LE(g.value.data()[i], 2.0f + 1e-6f);
      }
}

TEST(Ratio, ClosedFormsAndCap) {
  auto rep = all_valid(Grid<float>(1, 2, 0.2f));
  rep.value(0, 1) = 0.0f;
  const auto dis = all_valid(Grid<float>(1, 2, 1.0f));
  const auto r = ratio_map(rep, dis, 0.0, 100.0);
  EXPECT_NEAR(r.value(0, 0), 5.0f, 1e-6f);
  EXPECT_EQ(r.value(0, 1), 100.0f);
  EXPECT_EQ(ratio_map(rep, dis, 1e-6, 100.0).value(0, 1), 100.0f);
}

TEST(Ratio, MonotoneInBothDistances) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const float r0 = static_cast<float>(rng.uniform(0, 2)), d0 = static_cast<float>(rng.uniform(0, 2));
    const float dr = static_cast<float>(rng.uniform(0, 0.5)), dd = static_cast<float>(rng.uniform(0, 0.5));
    auto one = [](float rep, float dis) {
      return ratio_map(all_valid(Grid<float>(1, 1, rep)), all_valid(Grid<float>(1, 1, dis)), 1e-6, 100.0).value(0, 0);
    };
    ASSERT_LE(one(r0, d0), one(r0, d0 + dd));
    ASSERT_GE(one(r0, d0), one(r0 + dr, d0));
  }
}

TEST(Fusion, ConstantMapNormalizesToZero) {
  const auto c = all_valid(Grid<float>(4, 4, 3.0f));
  const auto cn = minmax_normalize(c);
  for (float v : cn.storage()) EXPECT_EQ(v, 0.0f);
  Rng rng(6);
  Grid<float> f(16, 16);
  for (auto& v : f.storage()) v = static_cast<float>(rng.uniform(0, 10));
  const auto fused = fuse_scales(c, all_valid(f), 0.5, 0.5);
  const auto fn = minmax_normalize(all_valid(f));
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(fused.value.data()[i], 0.5f * fn.data()[i], 1e-6f);
}

TEST(Fusion, IdenticalScalesFuseToEither) {
  Rng rng(7);
  Grid<float> coarse(4, 4);
  for (auto& v : coarse.storage()) v = static_cast<float>(rng.uniform(1, 2));
  coarse(0, 0) = 0.0f;  // extremes in corner cells survive upsampling exactly
  coarse(3, 3) = 5.0f;
  const auto fine = to_grid(nn::upsample_bilinear(to_tensor(coarse), 4));
  const auto fused = fuse_scales(all_valid(coarse), all_valid(fine));
  const auto fn = minmax_normalize(all_valid(fine));
  for (std::size_t i = 0; i < fine.size(); ++i) EXPECT_NEAR(fused.value.data()[i], fn.data()[i], 1e-6f);
}

TEST(Fusion, BoundedInUnitInterval) {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    Grid<float> c(5, 6), f(20, 24);
    for (auto& v : c.storage()) v = static_cast<float>(rng.uniform(-5, 5));
    for (auto& v : f.storage()) v = static_cast<float>(rng.uniform(-5, 5));
    const auto fused = fuse_scales(all_valid(c), all_valid(f), rng.uniform(), rng.uniform() + 0.1);
    for (float v : fused.value.storage()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f + 1e-6f);
    }
  }
}

namespace {

model::NetworkParams<float> small_net() {
  Rng rng(9);
  return model::init_params<float>(rng, model::ArchConfig::tiny(8));
}

}  // namespace

TEST(Averaging, ForcedIdentityIsDegenerateCap) {
  const auto p = small_net();
  Rng rng(10);
  const auto img = sekd::testing::synthetic_scene(rng, {32, 32, 8, 2, 1});
  ReliabilityConfig cfg;
  cfg.warps = 1;
  auto aug = geometry::AugmentConfig::identity();
  aug.jitter = false;
  Rng r(11);
  const auto m = averaged_ratio_map(p, img, cfg, aug, r);
  // D_rep vanishes, so the ratio degenerates to min(cap, D_dis / eps).
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      ASSERT_EQ(m.rep_fine(y, x), 0.0f);
      const double expect = std::min(100.0, double(m.dis_fine(y, x)) / 1e-6);
      ASSERT_NEAR(m.ratio_fine(y, x), expect, 1e-4 * expect + 1e-6);
    }
}

TEST(Averaging, MeanWithinRoundsAndFullCoverageForSmallWarps) {
  const auto p = small_net();
  Rng rng(12);
  const auto img = sekd::testing::synthetic_scene(rng, {32, 40, 8, 2, 1});
  ReliabilityConfig cfg;
  cfg.warps = 3;
  geometry::AugmentConfig aug = geometry::AugmentConfig::identity();
  aug.rotation_deg = {-3, 3};
  aug.translation = {-0.02, 0.02};
  Rng r(13), replay(13);
  const auto m = averaged_ratio_map(p, img, cfg, aug, r);
  const auto fa = scale_features(p, geometry::luminance(img));
  std::vector<ValidGrid> rounds;
  for (int k = 0; k < 3; ++k) {
    const auto v = geometry::sample_view(replay, img, aug);
    rounds.push_back(round_maps(fa, scale_features(p, v.image), v, cfg).fused);
  }
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 40; ++x) {
      float lo = 2.0f, hi = -1.0f;
      int n = 0;
      for (const auto& g : rounds)
        if (g.valid(y, x)) {
          lo = std::min(lo, g.value(y, x));
          hi = std::max(hi, g.value(y, x));
          ++n;
        }
      ASSERT_EQ(m.coverage(y, x), n);
      if (n > 0) {
        ASSERT_GE(m.r(y, x), lo - 1e-6f);
        ASSERT_LE(m.r(y, x), hi + 1e-6f);
      }
      if (y >= 6 && y < 26 && x >= 6 && x < 34) ASSERT_EQ(n, 3);
    }
}

TEST(Averaging, FiniteAndCapBoundedUnderDefaultSampling) {
  const auto p = small_net();
  Rng rng(14);
  const auto img = sekd::testing::synthetic_scene(rng, {32, 32, 8, 2, 1});
  Rng r(15);
  const auto m = averaged_ratio_map(p, img, ReliabilityConfig{}, {}, r);
  for (std::size_t i = 0; i < m.r.size(); ++i) {
    ASSERT_TRUE(std::isfinite(m.r.data()[i]));
    ASSERT_TRUE(std::isfinite(m.ratio_fine.data()[i]));
    ASSERT_LE(m.ratio_fine.data()[i], 100.0f);
  }
}

TEST(Keypoints, PlantedBlobSelectedFirst) {
  ReliabilityMap m;
  m.r = Grid<float>(40, 40, 0.1f);
  m.coverage = Grid<int>(40, 40, 2);
  m.r(20, 13) = 0.9f;
  m.r(20, 14) = 0.6f;
  m.r(3, 3) = 1.0f;  // inside the border, ignored
  ReliabilityConfig cfg;
  const auto k = reliable_keypoints(m, cfg);
  ASSERT_FALSE(k.empty());
  EXPECT_EQ(k.points[0], (detect::Pixel{20, 13}));
  for (std::size_t i = 0; i < k.size(); ++i) {
    EXPECT_GE(k.points[i].row, 8);
    EXPECT_LT(k.points[i].row, 32);
    for (std::size_t j = i + 1; j < k.size(); ++j) ASSERT_GT(detect::chebyshev(k.points[i], k.points[j]), 4);
  }
}

TEST(Keypoints, DeterministicUnderSeed) {
  const auto p = small_net();
  Rng rng(16);
  const auto img = sekd::testing::synthetic_scene(rng, {32, 32, 8, 2, 1});
  Rng a(17), b(17);
  EXPECT_EQ(compute_reliable_keypoints(p, img, {}, {}, a), compute_reliable_keypoints(p, img, {}, {}, b));
}

TEST(Ablation, UnitFlagsReplaceDistances) {
  const auto p = small_net();
  Rng rng(18);
  const auto img = sekd::testing::synthetic_scene(rng, {32, 32, 8, 2, 1});
  ReliabilityConfig cfg;
  cfg.warps = 1;
  cfg.unit_repeatability = true;
  Rng r1(19);
  auto m = averaged_ratio_map(p, img, cfg, {}, r1);
  for (std::size_t i = 0; i < m.rep_fine.size(); ++i)
    if (m.coverage.data()[i]) ASSERT_EQ(m.rep_fine.data()[i], 1.0f);
  cfg.unit_repeatability = false;
  cfg.unit_distinctness = true;
  Rng r2(19);
  m = averaged_ratio_map(p, img, cfg, {}, r2);
  for (std::size_t i = 0; i < m.dis_fine.size(); ++i)
    if (m.coverage.data()[i]) ASSERT_EQ(m.dis_fine.data()[i], 1.0f);
}
