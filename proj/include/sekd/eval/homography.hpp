#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "sekd/core/error.hpp"
#include "sekd/core/random.hpp"
#include "sekd/geometry/affine.hpp"

namespace sekd::eval {

using geometry::Point2;

/// 3×3 projective map scaled so H(2,2) = 1 when that entry is nonzero.
inline Eigen::Matrix3d normalize_homography(Eigen::Matrix3d h) {
  if (std::abs(h(2, 2)) > 1e-12) h /= h(2, 2);
  return h;
}

inline Point2 project(const Eigen::Matrix3d& h, Point2 p) {
  const Eigen::Vector3d v = h * Eigen::Vector3d(p.x, p.y, 1.0);
  return {v.x() / v.z(), v.y() / v.z()};
}

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

namespace detail {

/// Similarity moving the centroid to the origin with mean distance √2.
inline Eigen::Matrix3d hartley(const std::vector<Point2>& pts) {
  double cx = 0.0, cy = 0.0;
  for (auto p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= pts.size();
  cy /= pts.size();
  double md = 0.0;
  for (auto p : pts) md += std::hypot(p.x - cx, p.y - cy);
  md /= pts.size();
  const double s = md > 0.0 ? std::sqrt(2.0) / md : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

/// Twice the signed area of triangle abc.
inline double cross(Point2 a, Point2 b, Point2 c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

}  // namespace detail

/// Normalized direct linear transform: H with dst ~ H·src, from ≥ 4 pairs.
inline Eigen::Matrix3d dlt(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  if (src.size() != dst.size()) throw ShapeError("dlt: point count mismatch");
  if (src.size() < 4) throw DataError("dlt needs at least 4 correspondences");
  const Eigen::Matrix3d ts = detail::hartley(src), td = detail::hartley(dst);
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::MatrixXd a(std::max<Eigen::Index>(2 * n, 9), 9);
  a.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ts * Eigen::Vector3d(src[i].x, src[i].y, 1.0);
    const Eigen::Vector3d q = td * Eigen::Vector3d(dst[i].x, dst[i].y, 1.0);
    const double x = p.x() / p.z(), y = p.y() / p.z(), u = q.x() / q.z(), v = q.y() / q.z();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return normalize_homography(td.inverse() * hn * ts);
}

struct RansacConfig {
  double threshold = 3.0;  // forward transfer error, px
  int max_iterations = 2000;
  double confidence = 0.995;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(threshold > 0.0)) throw ConfigError("ransac threshold must be > 0");
    if (max_iterations < 1) throw ConfigError("ransac max_iterations must be >= 1");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("ransac confidence must lie in (0, 1)");
  }
};

struct HomographyEstimate {
  bool success = false;
  std::string failure;
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  std::vector<unsigned char> inliers;
  int inlier_count = 0;
  int iterations = 0;
};

namespace detail {

inline int count_inliers(const Eigen::Matrix3d& h, const std::vector<Point2>& a, const std::vector<Point2>& b,
                         double thr, std::vector<unsigned char>* mask) {
  int n = 0;
  if (mask) mask->assign(a.size(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Point2 p = project(h, a[i]);
    if (std::isfinite(p.x) && std::isfinite(p.y) && distance(p, b[i]) <= thr) {
      ++n;
      if (mask) (*mask)[i] = 1;
    }
  }
  return n;
}

}  // namespace detail

/// RANSAC over minimal 4-point samples with a normalized-DLT model; the best
/// model is refit on all of its inliers. Fails with fewer than 4 pairs or when
/// no model reaches 4 inliers.
inline HomographyEstimate estimate_homography(const std::vector<Point2>& a, const std::vector<Point2>& b,
                                              const RansacConfig& cfg) {
  cfg.validate();
  if (a.size() != b.size()) throw ShapeError("estimate_homography: point count mismatch");
  HomographyEstimate est;
  if (a.size() < 4) {
    est.failure = "fewer than 4 matches";
    return est;
  }
  Rng rng(cfg.seed);
  const std::size_t n = a.size();
  int best = 0;
  Eigen::Matrix3d best_h = Eigen::Matrix3d::Identity();
  double needed = cfg.max_iterations;
  int it = 0;
  for (; it < cfg.max_iterations && it < needed; ++it) {
    std::array<std::size_t, 4> idx;
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = rng.below(n);
        fresh = true;
        for (int m = 0; m < k; ++m) fresh = fresh && idx[m] != idx[k];
      } while (!fresh);
    }
    std::vector<Point2> sa, sb;
    for (auto i : idx) {
      sa.push_back(a[i]);
      sb.push_back(b[i]);
    }
    // Reject samples with three collinear points on either side.
    bool degenerate = false;
    for (const auto* s : {&sa, &sb})
      for (int i = 0; i < 4 && !degenerate; ++i) {
        const auto& p = *s;
        if (std::abs(detail::cross(p[(i + 1) % 4], p[(i + 2) % 4], p[(i + 3) % 4])) < 1e-6) degenerate = true;
      }
    if (degenerate) continue;
    const Eigen::Matrix3d h = dlt(sa, sb);
    if (!h.allFinite()) continue;
    const int c = detail::count_inliers(h, a, b, cfg.threshold, nullptr);
    if (c > best) {
      best = c;
      best_h = h;
      const double w = static_cast<double>(c) / n;
      const double p_fail = 1.0 - std::pow(w, 4);
      if (p_fail <= 0.0)
        needed = 0;
      else
        needed = std::log(1.0 - cfg.confidence) / std::log(p_fail);
    }
  }
  est.iterations = it;
  if (best < 4) {
    est.failure = "no model with 4 inliers";
    return est;
  }
  std::vector<unsigned char> mask;
  detail::count_inliers(best_h, a, b, cfg.threshold, &mask);
  std::vector<Point2> ia, ib;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) {
      ia.push_back(a[i]);
      ib.push_back(b[i]);
    }
  Eigen::Matrix3d refit = dlt(ia, ib);
  if (!refit.allFinite()) refit = best_h;
  est.h = refit;
  est.inlier_count = detail::count_inliers(refit, a, b, cfg.threshold, &est.inliers);
  if (est.inlier_count < best) {
    est.h = best_h;
    est.inlier_count = detail::count_inliers(best_h, a, b, cfg.threshold, &est.inliers);
  }
  est.success = true;
  return est;
}

/// Image corners in the order (0,0), (W-1,0), (0,H-1), (W-1,H-1).
inline std::array<Point2, 4> image_corners(int h, int w) {
  return {Point2{0.0, 0.0}, Point2{double(w - 1), 0.0}, Point2{0.0, double(h - 1)},
          Point2{double(w - 1), double(h - 1)}};
}

/// Mean distance between the corners mapped by the two matrices.
inline double corner_error(const Eigen::Matrix3d& est, const Eigen::Matrix3d& gt, int h, int w) {
  double s = 0.0;
  for (auto c : image_corners(h, w)) s += distance(project(est, c), project(gt, c));
  return s / 4.0;
}

inline bool homography_accuracy(const Eigen::Matrix3d& est, const Eigen::Matrix3d& gt, int h, int w, double eps) {
  const double e = corner_error(est, gt, h, w);
  return std::isfinite(e) && e <= eps;
}

}  // namespace sekd::eval
