#pragma once

// Quick oracle and invariant checks run by `sekd selftest`.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sekd/sekd.hpp"

namespace selftest {

using namespace sekd;

inline bool check_nms(Rng& rng) {
  for (int t = 0; t < 20; ++t) {
    Grid<float> s(50, 50);
    for (auto& v : s.storage()) v = static_cast<float>(rng.below(20)) / 20.0f;  // many ties
    const auto k = detect::nms(s, {4, 1000, 0.0f});
    if (k.points != testing::brute_nms(s, 4, 1000, 0.0f)) return false;
  }
  return true;
}

inline bool check_mining(Rng& rng) {
  for (int t = 0; t < 10; ++t) {
    const int n = 32, dim = 8;
    train::Matrix<double> a(n, dim), p(n, dim);
    std::vector<std::vector<double>> va(n, std::vector<double>(dim)), vp = va;
    std::vector<detect::Pixel> w;
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < dim; ++c) {
        va[i][c] = a(i, c) = std::round(rng.uniform(-2, 2));
        vp[i][c] = p(i, c) = std::round(rng.uniform(-2, 2));
      }
      w.push_back({static_cast<int>(rng.below(20)), static_cast<int>(rng.below(20))});
    }
    const auto r = train::triplet_hard_loss(a, p, w, {0.8, 4});
    const auto o = testing::brute_hardest_negatives(va, vp, w, 4);
    for (int i = 0; i < n; ++i)
      if (r.negatives[i].index != o[i].index ||
          (o[i].index >= 0 && (r.negatives[i].anchor_side != o[i].anchor_side ||
                               r.negatives[i].distance != o[i].distance)))
        return false;
  }
  return true;
}

inline bool check_distinctness(Rng& rng) {
  Tensor<float> fa(1, 4, 16, 16), fb(1, 4, 16, 16);
  for (auto& v : fa.storage()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : fb.storage()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto A = geometry::compose(geometry::AffineTransform::translation(1.3, -0.6),
                                   geometry::AffineTransform::rotation_deg(12));
  const auto g = reliability::dense_distinctness(fa, fb, A, 4, 1);
  Mask valid;
  const auto o = testing::brute_distinctness(fa, fb, A, 4, 1, &valid);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      if (g.valid(y, x) != valid(y, x)) return false;
      if (valid(y, x) && g.value(y, x) != static_cast<float>(o(y, x))) return false;
    }
  return true;
}

inline bool check_matching(Rng& rng) {
  eval::Descriptors a(40, std::vector<float>(6)), b(50, std::vector<float>(6));
  for (auto& d : a)
    for (auto& v : d) v = static_cast<float>(rng.below(3));
  for (auto& d : b)
    for (auto& v : d) v = static_cast<float>(rng.below(3));
  auto pairs = [](const eval::MatchSet& m) {
    std::vector<std::pair<int, int>> v;
    for (const auto& x : m) v.emplace_back(x.a, x.b);
    return v;
  };
  return pairs(eval::nn_match(a, b, true)) == testing::brute_nn_match(a, b, true) &&
         pairs(eval::nn_match(a, b, false)) == testing::brute_nn_match(a, b, false) &&
         pairs(eval::ratio_test_match(a, b, 0.8)) == testing::brute_ratio_match(a, b, 0.8);
}

inline bool check_closed_forms() {
  Tensor<double> prob(1, 2, 1, 1, 0.5);
  Grid<float> y(1, 1, 1.0f);
  const double fl = train::focal_loss(prob, 0, y, {2.0, 0.25});
  Tensor<double> two(2, 2, 1, 1);
  two(0, 0, 0, 0) = 0.1;
  two(0, 1, 0, 0) = 0.9;
  two(1, 0, 0, 0) = 0.5;
  two(1, 1, 0, 0) = 0.5;
  const double kl = train::repeatability_loss(two, {{{0, 0}, {0, 0}}}).first;
  train::Matrix<double> d = train::Matrix<double>::Constant(4, 3, 0.5);
  const double tl = train::triplet_hard_loss(d, d, {{0, 0}, {0, 10}, {10, 0}, {10, 10}}, {0.8, 4}).loss;
  return std::abs(fl - 0.04332) < 1e-5 && std::abs(kl - 0.4394) < 1e-4 && std::abs(tl - 0.8) < 1e-9;
}

inline bool check_geometry(Rng& rng) {
  for (int t = 0; t < 20; ++t) {
    const auto a = geometry::sample_affine(rng, {}, 64, 64);
    const Eigen::Matrix3d e = geometry::compose(a, geometry::invert(a)).matrix() - Eigen::Matrix3d::Identity();
    if (e.cwiseAbs().maxCoeff() >= 1e-8) return false;
  }
  return true;
}

inline bool check_homography(Rng& rng) {
  Eigen::Matrix3d h;
  h << 1.05, 0.08, 4.0, -0.05, 0.97, -3.0, 1e-4, -2e-4, 1.0;
  std::vector<geometry::Point2> a, b;
  for (int i = 0; i < 40; ++i) {
    const geometry::Point2 p{rng.uniform(0, 200), rng.uniform(0, 150)};
    a.push_back(p);
    b.push_back(i % 2 ? geometry::Point2{rng.uniform(0, 200), rng.uniform(0, 150)} : eval::project(h, p));
  }
  eval::RansacConfig rc;
  rc.seed = 3;
  const auto est = eval::estimate_homography(a, b, rc);
  if (!est.success || eval::corner_error(est.h, h, 150, 200) >= 1.0) return false;
  std::vector<eval::PairResult> pairs(3);
  for (int k = 0; k < 3; ++k) {
    pairs[k].sequence = "v_x";
    pairs[k].corner_error = 2.5 * k;
    pairs[k].subset = "viewpoint";
    pairs[k].estimated = true;
  }
  const auto r = eval::make_report(pairs);
  for (int e = 1; e < eval::kThresholds; ++e)
    if (r.overall.ha[e] < r.overall.ha[e - 1]) return false;
  return true;
}

/// Prints one line per check; true when all pass.
inline bool run(std::ostream& os) {
  Rng rng(derive_seed(0, "selftest"));
  const std::vector<std::pair<std::string, std::function<bool()>>> checks = {
      {"nms vs brute force", [&] { return check_nms(rng); }},
      {"hardest negatives vs exhaustive scan", [&] { return check_mining(rng); }},
      {"dense distinctness vs window scan", [&] { return check_distinctness(rng); }},
      {"nn / ratio matching vs exhaustive scan", [&] { return check_matching(rng); }},
      {"loss closed forms", [] { return check_closed_forms(); }},
      {"compose / invert", [&] { return check_geometry(rng); }},
      {"homography recovery and HA monotonicity", [&] { return check_homography(rng); }},
  };
  bool all = true;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      os << "  exception: " << e.what() << '\n';
    }
    os << (ok ? "PASS " : "FAIL ") << name << '\n';
    all = all && ok;
  }
  return all;
}

}  // namespace selftest
