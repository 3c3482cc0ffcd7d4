#pragma once

#include <cmath>
#include <optional>

#include "sekd/core/tensor.hpp"
#include "sekd/geometry/affine.hpp"
#include "sekd/geometry/color.hpp"

namespace sekd::geometry {

/// Bilinear footprint of a continuous position inside an H×W raster.
struct Footprint {
  int x0, y0, x1, y1;
  double fx, fy;
};

/// Footprint of p, or nullopt when p leaves [0, W-1]×[0, H-1].
inline std::optional<Footprint> footprint(Point2 p, int h, int w) {
  if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1 && p.y <= h - 1)) return std::nullopt;
  Footprint f;
  f.x0 = static_cast<int>(std::floor(p.x));
  f.y0 = static_cast<int>(std::floor(p.y));
  f.fx = p.x - f.x0;
  f.fy = p.y - f.y0;
  // At the last row/column the second tap carries zero weight.
  f.x1 = std::min(f.x0 + 1, w - 1);
  f.y1 = std::min(f.y0 + 1, h - 1);
  return f;
}

template <typename T>
inline T bilinear(const T* plane, int w, const Footprint& f) {
  const double a = plane[f.y0 * w + f.x0];
  const double b = plane[f.y0 * w + f.x1];
  const double c = plane[f.y1 * w + f.x0];
  const double d = plane[f.y1 * w + f.x1];
  return static_cast<T>((1.0 - f.fy) * ((1.0 - f.fx) * a + f.fx * b) +
                        f.fy * ((1.0 - f.fx) * c + f.fx * d));
}

struct WarpResult {
  Image image;
  Mask valid;
};

/// Warps every channel of every sample: output pixel p samples the input at
/// A⁻¹(p). Pixels whose sample point leaves the source rectangle are zero and
/// flagged invalid in the returned mask.
template <typename T>
std::pair<Tensor<T>, Mask> warp_tensor(const Tensor<T>& src, const AffineTransform& a) {
  const AffineTransform inv = invert(a);
  const int h = src.h(), w = src.w();
  Tensor<T> out(src.n(), src.c(), h, w);
  Mask valid(h, w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto f = footprint(inv.apply({double(x), double(y)}), h, w);
      if (!f) continue;
      valid(y, x) = 1;
      for (int n = 0; n < src.n(); ++n)
        for (int c = 0; c < src.c(); ++c) out(n, c, y, x) = bilinear(src.plane_ptr(n, c), w, *f);
    }
  }
  return {std::move(out), std::move(valid)};
}

inline WarpResult warp_image(const Image& img, const AffineTransform& a) {
  for (float v : img.storage())
    if (!std::isfinite(v)) throw NumericError("warp_image: non-finite pixel value");
  auto [t, mask] = warp_tensor(to_tensor(img), a);
  return {to_grid(t), std::move(mask)};
}

/// Shrinks a validity mask by `radius` pixels (Chebyshev); also clears the
/// outer `radius`-pixel frame of the raster.
inline Mask erode(const Mask& m, int radius) {
  if (radius <= 0) return m;
  const int h = m.h(), w = m.w();
  // Separable min filter.
  Mask rows(h, w, 0), out(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      unsigned char v = (x >= radius && x < w - radius) ? 1 : 0;
      for (int dx = -radius; v && dx <= radius; ++dx) v = m(y, x + dx);
      rows(y, x) = v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      unsigned char v = (y >= radius && y < h - radius) ? 1 : 0;
      for (int dy = -radius; v && dy <= radius; ++dy) v = rows(y + dy, x);
      out(y, x) = v;
    }
  return out;
}

}  // namespace sekd::geometry
