#pragma once

// Per-pixel descriptor reliability: the ratio between a descriptor's distance
// to its nearest non-corresponding neighbour in a second view (distinctness)
// and its distance to its true correspondence (repeatability).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sekd/detect/keypoints.hpp"
#include "sekd/geometry/view.hpp"
#include "sekd/model/network.hpp"

namespace sekd::reliability {

struct ReliabilityConfig {
  int warps = 4;  // rounds averaged per image
  int window_fine = 8;
  int window_coarse = 4;  // in cells of the 1/4 grid
  int exclusion_fine = 2;
  int exclusion_coarse = 1;
  double eps = 1e-6;
  double cap = 100.0;
  double weight_coarse = 0.5;
  double weight_fine = 0.5;
  int border = 8;  // keypoints are not taken closer than this to the edge
  /// Ablations: replace the repeatability / distinctness distance by 1.
  bool unit_repeatability = false;
  bool unit_distinctness = false;
  detect::NmsConfig nms{4, 1000, 0.0f};

  void validate() const {
    if (warps < 1) throw ConfigError("reliability warps must be >= 1");
    if (window_fine < 2 || window_coarse < 2) throw ConfigError("reliability window must be >= 2");
    if (exclusion_fine < 0 || exclusion_fine >= window_fine || exclusion_coarse < 0 ||
        exclusion_coarse >= window_coarse)
      throw ConfigError("reliability exclusion must lie in [0, window)");
    if (!(eps > 0.0)) throw ConfigError("reliability eps must be > 0");
    if (!(cap > 0.0)) throw ConfigError("reliability cap must be > 0");
    if (weight_coarse < 0.0 || weight_fine < 0.0 || weight_coarse + weight_fine <= 0.0)
      throw ConfigError("reliability fusion weights must be >= 0 and not both 0");
    if (border < 0) throw ConfigError("reliability border must be >= 0");
    nms.validate();
  }
};

/// Scalar map with per-pixel validity.
struct ValidGrid {
  Grid<float> value;
  Mask valid;
};

namespace detail {

inline void check_maps(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.n() != 1 || b.n() != 1 || a.c() != b.c() || !a.same_shape(b))
    throw ShapeError("reliability: descriptor maps must be 1×C×H×W of equal shape");
}

}  // namespace detail

/// D_rep(p) = ‖F_a[:, p] − F_b(A(p))‖ with F_b read bilinearly; invalid where
/// A(p) leaves the map.
inline ValidGrid dense_repeatability(const Tensor<float>& fa, const Tensor<float>& fb,
                                     const geometry::AffineTransform& a) {
  detail::check_maps(fa, fb);
  const int h = fa.h(), w = fa.w(), nc = fa.c();
  ValidGrid out{Grid<float>(h, w, 0.0f), Mask(h, w, 0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto f = geometry::footprint(a.apply({double(x), double(y)}), h, w);
      if (!f) continue;
      double s = 0.0;
      for (int c = 0; c < nc; ++c) {
        const double d = double(fa(0, c, y, x)) - double(geometry::bilinear(fb.plane_ptr(0, c), w, *f));
        s += d * d;
      }
      out.value(y, x) = static_cast<float>(std::sqrt(s));
      out.valid(y, x) = 1;
    }
  return out;
}

/// D_dis(p) = min ‖F_a[:, p] − F_b[:, q]‖ over integer q in the square of
/// half-width `window` around round(A(p)), excluding q within Chebyshev
/// distance `exclusion` of that centre (and q outside `valid_b` when given).
/// Invalid where no candidate exists.
inline ValidGrid dense_distinctness(const Tensor<float>& fa, const Tensor<float>& fb,
                                    const geometry::AffineTransform& a, int window, int exclusion = 2,
                                    const Mask* valid_b = nullptr) {
  detail::check_maps(fa, fb);
  const int h = fa.h(), w = fa.w(), nc = fa.c();
  const std::size_t hw = fa.plane();
  ValidGrid out{Grid<float>(h, w, 0.0f), Mask(h, w, 0)};
  std::vector<float> va(nc);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto t = a.apply({double(x), double(y)});
      if (!std::isfinite(t.x) || !std::isfinite(t.y)) continue;
      const long cy = std::lround(t.y), cx = std::lround(t.x);
      if (cy + window < 0 || cx + window < 0 || cy - window >= h || cx - window >= w) continue;
      for (int c = 0; c < nc; ++c) va[c] = fa(0, c, y, x);
      const float* base = fb.data();
      double best = std::numeric_limits<double>::infinity();
      for (long qy = std::max(0L, cy - window); qy <= std::min<long>(h - 1, cy + window); ++qy)
        for (long qx = std::max(0L, cx - window); qx <= std::min<long>(w - 1, cx + window); ++qx) {
          if (std::max(std::abs(qy - cy), std::abs(qx - cx)) <= exclusion) continue;
          if (valid_b && !(*valid_b)(static_cast<int>(qy), static_cast<int>(qx))) continue;
          const float* q = base + qy * w + qx;
          double s = 0.0;
          for (int c = 0; c < nc; ++c) {
            const double d = double(va[c]) - double(q[c * hw]);
            s += d * d;
          }
          best = std::min(best, s);
        }
      if (!std::isfinite(best)) continue;
      out.value(y, x) = static_cast<float>(std::sqrt(best));
      out.valid(y, x) = 1;
    }
  return out;
}

/// R = min(cap, D_dis / (D_rep + eps)) on pixels valid in both inputs.
inline ValidGrid ratio_map(const ValidGrid& rep, const ValidGrid& dis, double eps, double cap) {
  if (!rep.value.same_shape(dis.value)) throw ShapeError("ratio_map: shape mismatch");
  if (!(eps >= 0.0) || !(cap > 0.0)) throw ConfigError("ratio_map: bad eps / cap");
  const int h = rep.value.h(), w = rep.value.w();
  ValidGrid out{Grid<float>(h, w, 0.0f), Mask(h, w, 0)};
  for (std::size_t i = 0; i < out.value.size(); ++i) {
    if (!rep.valid.data()[i] || !dis.valid.data()[i]) continue;
    const double den = double(rep.value.data()[i]) + eps;
    const double num = dis.value.data()[i];
    const double r = den > 0.0 ? std::min(cap, num / den) : (num > 0.0 ? cap : 0.0);
    out.value.data()[i] = static_cast<float>(r);
    out.valid.data()[i] = 1;
  }
  return out;
}

/// Min-max normalization over valid pixels; a constant map becomes 0.
inline Grid<float> minmax_normalize(const ValidGrid& g) {
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < g.value.size(); ++i)
    if (g.valid.data()[i]) {
      lo = std::min(lo, g.value.data()[i]);
      hi = std::max(hi, g.value.data()[i]);
    }
  Grid<float> out(g.value.h(), g.value.w(), 0.0f);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (g.valid.data()[i]) out.data()[i] = (g.value.data()[i] - lo) / (hi - lo);
  return out;
}

/// Weighted sum of the min-max normalized fine map and the ×4 bilinearly
/// upsampled, normalized coarse map. Valid where the fine pixel and its
/// coarse cell are both valid. Weights are renormalized to sum to 1.
inline ValidGrid fuse_scales(const ValidGrid& coarse, const ValidGrid& fine, double weight_coarse = 0.5,
                             double weight_fine = 0.5) {
  const int h = fine.value.h(), w = fine.value.w();
  if (coarse.value.h() * 4 < h || coarse.value.w() * 4 < w) throw ShapeError("fuse_scales: coarse map too small");
  const double total = weight_coarse + weight_fine;
  if (!(total > 0.0)) throw ConfigError("fuse_scales: weights sum to zero");
  const Grid<float> cn = minmax_normalize(coarse);
  const Grid<float> fn = minmax_normalize(fine);
  const Tensor<float> up = nn::upsample_bilinear(to_tensor(cn), 4);
  ValidGrid out{Grid<float>(h, w, 0.0f), Mask(h, w, 0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!fine.valid(y, x) || !coarse.valid(y / 4, x / 4)) continue;
      out.value(y, x) =
          static_cast<float>((weight_coarse * up(0, 0, y, x) + weight_fine * fn(y, x)) / total);
      out.valid(y, x) = 1;
    }
  return out;
}

/// Ratio maps of one round at both scales.
struct RoundMaps {
  ValidGrid rep_fine, dis_fine, ratio_fine, ratio_coarse, fused;
};

/// Per-pixel unit-norm descriptor features used for the ratio: the backbone's
/// full-resolution map (cropped to H×W) and its 1/4-resolution map.
struct ScaleFeatures {
  Tensor<float> fine, coarse;
};

template <typename T>
ScaleFeatures scale_features(const model::NetworkParams<T>& p, const geometry::Image& img) {
  const auto pyr = model::backbone_forward(p, img, true);
  ScaleFeatures f;
  f.fine = nn::crop(nn::l2_normalize_channels(pyr.full), img.h(), img.w()).template cast<float>();
  f.coarse = nn::l2_normalize_channels(pyr.quarter).template cast<float>();
  return f;
}

inline ValidGrid unit_grid(const ValidGrid& like) {
  ValidGrid g{Grid<float>(like.value.h(), like.value.w(), 1.0f), Mask(like.value.h(), like.value.w(), 1)};
  return g;
}

/// Stride-4 validity of the view: a coarse cell is valid when the view pixel
/// at its centre is.
inline Mask coarse_valid(const Mask& valid, int ch, int cw) {
  Mask m(ch, cw, 0);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) {
      const int py = std::min(4 * y + 2, valid.h() - 1), px = std::min(4 * x + 2, valid.w() - 1);
      m(y, x) = valid(py, px);
    }
  return m;
}

inline RoundMaps round_maps(const ScaleFeatures& a, const ScaleFeatures& b, const geometry::View& view,
                            const ReliabilityConfig& cfg) {
  RoundMaps r;
  const auto& A = view.transform;
  auto rep = [&](const Tensor<float>& fa, const Tensor<float>& fb, const geometry::AffineTransform& t) {
    auto g = dense_repeatability(fa, fb, t);
    if (cfg.unit_repeatability)
      for (auto& v : g.value.storage()) v = 1.0f;
    return g;
  };
  auto dis = [&](const Tensor<float>& fa, const Tensor<float>& fb, const geometry::AffineTransform& t,
                 int window, int excl, const Mask& vb, const ValidGrid& like) {
    if (cfg.unit_distinctness) {
      auto g = like;
      for (auto& v : g.value.storage()) v = 1.0f;
      return g;
    }
    return dense_distinctness(fa, fb, t, window, excl, &vb);
  };
  r.rep_fine = rep(a.fine, b.fine, A);
  r.dis_fine = dis(a.fine, b.fine, A, cfg.window_fine, cfg.exclusion_fine, view.valid, r.rep_fine);
  r.ratio_fine = ratio_map(r.rep_fine, r.dis_fine, cfg.eps, cfg.cap);
  const auto A4 = geometry::for_stride(A, 4);
  const Mask vb4 = coarse_valid(view.valid, b.coarse.h(), b.coarse.w());
  const auto rep_c = rep(a.coarse, b.coarse, A4);
  const auto dis_c = dis(a.coarse, b.coarse, A4, cfg.window_coarse, cfg.exclusion_coarse, vb4, rep_c);
  r.ratio_coarse = ratio_map(rep_c, dis_c, cfg.eps, cfg.cap);
  r.fused = fuse_scales(r.ratio_coarse, r.ratio_fine, cfg.weight_coarse, cfg.weight_fine);
  return r;
}

struct ReliabilityMap {
  Grid<float> r;  // averaged fused map; 0 where uncovered
  Grid<int> coverage;
  // Averaged per-scale quantities before normalization (for inspection).
  Grid<float> ratio_fine, ratio_coarse, rep_fine, dis_fine;
};

namespace detail {

struct Accumulator {
  std::vector<double> sum;
  std::vector<int> count;
  explicit Accumulator(std::size_t n) : sum(n, 0.0), count(n, 0) {}
  void add(const ValidGrid& g) {
    for (std::size_t i = 0; i < sum.size(); ++i)
      if (g.valid.data()[i]) {
        sum[i] += g.value.data()[i];
        ++count[i];
      }
  }
  Grid<float> mean(int h, int w) const {
    Grid<float> out(h, w, 0.0f);
    for (std::size_t i = 0; i < sum.size(); ++i)
      if (count[i]) out.data()[i] = static_cast<float>(sum[i] / count[i]);
    return out;
  }
};

}  // namespace detail

/// Reliability of every pixel of `img` averaged over `cfg.warps` random
/// jittered warps: each round's two-scale ratio maps are fused, then the
/// fused maps are averaged over the rounds covering each pixel.
template <typename T>
ReliabilityMap averaged_ratio_map(const model::NetworkParams<T>& p, const geometry::ColorImage& img,
                                  const ReliabilityConfig& cfg, const geometry::AugmentConfig& augment,
                                  Rng& rng) {
  cfg.validate();
  const int h = img.h(), w = img.w();
  const auto fa = scale_features(p, geometry::luminance(img));
  const int ch = fa.coarse.h(), cw = fa.coarse.w();
  detail::Accumulator fused(h * w), rf(h * w), rc(ch * cw), drep(h * w), ddis(h * w);
  for (int k = 0; k < cfg.warps; ++k) {
    const auto view = geometry::sample_view(rng, img, augment);
    const auto fb = scale_features(p, view.image);
    const auto m = round_maps(fa, fb, view, cfg);
    fused.add(m.fused);
    rf.add(m.ratio_fine);
    rc.add(m.ratio_coarse);
    drep.add(m.rep_fine);
    ddis.add(m.dis_fine);
  }
  ReliabilityMap out;
  out.r = fused.mean(h, w);
  out.coverage = Grid<int>(h, w);
  std::copy(fused.count.begin(), fused.count.end(), out.coverage.data());
  out.ratio_fine = rf.mean(h, w);
  out.ratio_coarse = rc.mean(ch, cw);
  out.rep_fine = drep.mean(h, w);
  out.dis_fine = ddis.mean(h, w);
  return out;
}

/// Keypoints Y: NMS on the averaged reliability map over covered pixels away
/// from the border.
inline detect::KeypointSet reliable_keypoints(const ReliabilityMap& m, const ReliabilityConfig& cfg) {
  const int h = m.r.h(), w = m.r.w(), b = cfg.border;
  Mask mask(h, w, 0);
  for (int y = b; y < h - b; ++y)
    for (int x = b; x < w - b; ++x) mask(y, x) = m.coverage(y, x) > 0;
  return detect::nms(m.r, cfg.nms, &mask);
}

template <typename T>
detect::KeypointSet compute_reliable_keypoints(const model::NetworkParams<T>& p,
                                               const geometry::ColorImage& img, const ReliabilityConfig& cfg,
                                               const geometry::AugmentConfig& augment, Rng& rng) {
  return reliable_keypoints(averaged_ratio_map(p, img, cfg, augment, rng), cfg);
}

}  // namespace sekd::reliability
