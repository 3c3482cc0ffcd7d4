#pragma once

#include "sekd/geometry/affine.hpp"
#include "sekd/geometry/color.hpp"
#include "sekd/geometry/warp.hpp"

namespace sekd::geometry {

/// A synthetic second view Î = A(jitter(I)) of a source image.
struct View {
  AffineTransform transform;  // source pixel → view pixel
  ColorJitter jitter;
  Image image;  // luminance
  Mask valid;
};

/// Jitter is applied to the colour source before luminance conversion, the
/// warp afterwards.
inline View make_view(const ColorImage& src, const AffineTransform& a, const ColorJitter& j) {
  View v;
  v.transform = a;
  v.jitter = j;
  auto w = warp_image(luminance(j.is_identity() ? src : apply_jitter(src, j)), a);
  v.image = std::move(w.image);
  v.valid = std::move(w.valid);
  return v;
}

/// Draws the warp first, then the jitter (when enabled).
inline View sample_view(Rng& rng, const ColorImage& src, const AugmentConfig& cfg) {
  const auto a = sample_affine(rng, cfg, src.h(), src.w());
  const ColorJitter j = cfg.jitter ? sample_jitter(rng, cfg) : ColorJitter{};
  return make_view(src, a, j);
}

}  // namespace sekd::geometry
