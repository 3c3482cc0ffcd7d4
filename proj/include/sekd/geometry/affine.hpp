#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "sekd/core/error.hpp"
#include "sekd/core/random.hpp"

namespace sekd::geometry {

/// Continuous image position, x to the right (column), y down (row).
struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Closed interval used by every sampling range.
struct Range {
  double lo = 0.0;
  double hi = 0.0;

  void validate(const char* what) const {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw ConfigError(std::string("invalid range for ") + what);
  }
  double sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  friend bool operator==(const Range&, const Range&) = default;
};

/// Planar affine map on pixel coordinates, stored as a 3×3 homogeneous matrix
/// with last row (0, 0, 1) in corner-origin convention.
class AffineTransform {
 public:
  AffineTransform() : m_(Eigen::Matrix3d::Identity()) {}
  explicit AffineTransform(const Eigen::Matrix3d& m) : m_(m) {
    if (m(2, 0) != 0.0 || m(2, 1) != 0.0 || m(2, 2) != 1.0)
      throw NumericError("affine transform must have last row (0, 0, 1)");
    if (!m.allFinite()) throw NumericError("affine transform has non-finite entries");
  }

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return AffineTransform(m);
  }
  static AffineTransform rotation_deg(double deg) {
    const double r = deg * std::numbers::pi / 180.0;
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = std::cos(r);
    m(0, 1) = -std::sin(r);
    m(1, 0) = std::sin(r);
    m(1, 1) = std::cos(r);
    return AffineTransform(m);
  }
  static AffineTransform shear_deg(double deg) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 1) = std::tan(deg * std::numbers::pi / 180.0);
    return AffineTransform(m);
  }
  static AffineTransform scaling(double sx, double sy) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = sx;
    m(1, 1) = sy;
    return AffineTransform(m);
  }

  const Eigen::Matrix3d& matrix() const { return m_; }
  double linear_det() const { return m_(0, 0) * m_(1, 1) - m_(0, 1) * m_(1, 0); }
  bool invertible() const { return std::abs(linear_det()) > 1e-8; }

  Point2 apply(Point2 p) const {
    return {m_(0, 0) * p.x + m_(0, 1) * p.y + m_(0, 2), m_(1, 0) * p.x + m_(1, 1) * p.y + m_(1, 2)};
  }

 private:
  Eigen::Matrix3d m_;
};

inline AffineTransform invert(const AffineTransform& a) {
  if (!a.invertible()) throw NumericError("affine transform is not invertible");
  const auto& m = a.matrix();
  const double det = a.linear_det();
  Eigen::Matrix3d inv = Eigen::Matrix3d::Identity();
  inv(0, 0) = m(1, 1) / det;
  inv(0, 1) = -m(0, 1) / det;
  inv(1, 0) = -m(1, 0) / det;
  inv(1, 1) = m(0, 0) / det;
  inv(0, 2) = -(inv(0, 0) * m(0, 2) + inv(0, 1) * m(1, 2));
  inv(1, 2) = -(inv(1, 0) * m(0, 2) + inv(1, 1) * m(1, 2));
  return AffineTransform(inv);
}

/// a∘b: applies b first, then a.
inline AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  Eigen::Matrix3d m = a.matrix() * b.matrix();
  m.row(2) << 0.0, 0.0, 1.0;
  return AffineTransform(m);
}

inline std::vector<Point2> transform_points(std::span<const Point2> pts, const AffineTransform& a) {
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(a.apply(p));
  return out;
}

/// Re-expresses a full-resolution transform on the grid of a map downsampled
/// by `stride`, whose cell u covers full-resolution position stride*u + (stride-1)/2.
inline AffineTransform for_stride(const AffineTransform& a, int stride) {
  const double s = stride;
  const double off = (s - 1.0) / 2.0;
  Eigen::Matrix3d up = Eigen::Matrix3d::Identity();
  up(0, 0) = up(1, 1) = s;
  up(0, 2) = up(1, 2) = off;
  Eigen::Matrix3d down = Eigen::Matrix3d::Identity();
  down(0, 0) = down(1, 1) = 1.0 / s;
  down(0, 2) = down(1, 2) = -off / s;
  Eigen::Matrix3d m = down * a.matrix() * up;
  m.row(2) << 0.0, 0.0, 1.0;
  return AffineTransform(m);
}

/// Ranges for random affine synthesis. Defaults follow the training recipe.
struct AugmentConfig {
  Range rotation_deg{-40.0, 40.0};
  Range shear_deg{-40.0, 40.0};
  Range translation{-0.04, 0.04};  // fraction of image width / height
  Range scale{0.7, 1.4};
  Range brightness{0.6, 1.4};
  Range contrast{0.6, 1.4};
  Range saturation{0.6, 1.4};
  Range hue{-0.2, 0.2};
  bool jitter = true;

  void validate() const {
    rotation_deg.validate("rotation");
    shear_deg.validate("shear");
    translation.validate("translation");
    scale.validate("scale");
    brightness.validate("brightness");
    contrast.validate("contrast");
    saturation.validate("saturation");
    hue.validate("hue");
    if (scale.lo <= 0.0) throw ConfigError("scale range must be positive");
    if (brightness.lo <= 0.0 || contrast.lo <= 0.0 || saturation.lo <= 0.0)
      throw ConfigError("jitter factors must be positive");
    if (hue.lo < -0.5 || hue.hi > 0.5) throw ConfigError("hue shift must lie in [-0.5, 0.5]");
    if (std::abs(shear_deg.lo) >= 90.0 || std::abs(shear_deg.hi) >= 90.0)
      throw ConfigError("shear must lie strictly inside (-90, 90) degrees");
  }

  /// All ranges collapsed so sampling yields the identity warp and jitter.
  static AugmentConfig identity() {
    AugmentConfig c;
    c.rotation_deg = c.shear_deg = c.translation = {0.0, 0.0};
    c.scale = c.brightness = c.contrast = c.saturation = {1.0, 1.0};
    c.hue = {0.0, 0.0};
    return c;
  }
};

/// Random affine warp composed as Translate∘Rotate∘Shear∘Scale about the
/// image center and returned in corner-origin pixel coordinates.
inline AffineTransform sample_affine(Rng& rng, const AugmentConfig& cfg, int height, int width) {
  cfg.validate();
  if (height < 8 || width < 8) throw ShapeError("image too small for affine sampling (< 8 px)");
  const double rot = cfg.rotation_deg.sample(rng);
  const double shear = cfg.shear_deg.sample(rng);
  const double tx = cfg.translation.sample(rng) * width;
  const double ty = cfg.translation.sample(rng) * height;
  const double s = cfg.scale.sample(rng);

  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  AffineTransform centered = compose(
      AffineTransform::translation(tx, ty),
      compose(AffineTransform::rotation_deg(rot),
              compose(AffineTransform::shear_deg(shear), AffineTransform::scaling(s, s))));
  return compose(AffineTransform::translation(cx, cy),
                 compose(centered, AffineTransform::translation(-cx, -cy)));
}

}  // namespace sekd::geometry
