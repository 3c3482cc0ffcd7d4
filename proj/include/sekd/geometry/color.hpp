#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "sekd/core/error.hpp"
#include "sekd/core/random.hpp"
#include "sekd/core/tensor.hpp"
#include "sekd/geometry/affine.hpp"

namespace sekd::geometry {

/// Luminance image in [0, 1].
using Image = Grid<float>;

/// Source-color image stored as a 1×3×H×W tensor (1×1×H×W for grayscale
/// sources). Values in [0, 1].
using ColorImage = Tensor<float>;

inline ColorImage make_color_image(int h, int w, float fill = 0.0f) {
  return ColorImage(1, 3, h, w, fill);
}

inline ColorImage color_from_gray(const Image& g) {
  ColorImage c(1, 3, g.h(), g.w());
  for (int ch = 0; ch < 3; ++ch) std::copy_n(g.data(), g.size(), c.plane_ptr(0, ch));
  return c;
}

inline Image luminance(const ColorImage& img) {
  Image out(img.h(), img.w());
  if (img.c() == 1) {
    std::copy_n(img.plane_ptr(0, 0), out.size(), out.data());
    return out;
  }
  if (img.c() != 3) throw ShapeError("color image must have 1 or 3 channels");
  const float* r = img.plane_ptr(0, 0);
  const float* g = img.plane_ptr(0, 1);
  const float* b = img.plane_ptr(0, 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
  return out;
}

struct ColorJitter {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;

  bool is_identity() const {
    return brightness == 1.0 && contrast == 1.0 && saturation == 1.0 && hue == 0.0;
  }
  void validate() const {
    if (!(brightness > 0.0 && contrast > 0.0 && saturation > 0.0))
      throw ConfigError("jitter factors must be positive");
    if (hue < -0.5 || hue > 0.5) throw ConfigError("hue shift must lie in [-0.5, 0.5]");
  }
};

inline ColorJitter sample_jitter(Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  ColorJitter j;
  j.brightness = cfg.brightness.sample(rng);
  j.contrast = cfg.contrast.sample(rng);
  j.saturation = cfg.saturation.sample(rng);
  j.hue = cfg.hue.sample(rng);
  return j;
}

/// HSV with all channels in [0, 1].
inline std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double maxc = std::max({r, g, b});
  const double minc = std::min({r, g, b});
  const double v = maxc;
  if (maxc == minc) return {0.0, 0.0, v};
  const double span = maxc - minc;
  const double s = span / maxc;
  const double rc = (maxc - r) / span;
  const double gc = (maxc - g) / span;
  const double bc = (maxc - b) / span;
  double h;
  if (r == maxc)
    h = bc - gc;
  else if (g == maxc)
    h = 2.0 + rc - bc;
  else
    h = 4.0 + gc - rc;
  h = h / 6.0;
  h -= std::floor(h);
  return {h, s, v};
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  if (s == 0.0) return {v, v, v};
  h -= std::floor(h);
  const double h6 = h * 6.0;
  const int i = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

/// Applies brightness, contrast, saturation and hue in that order, clamping
/// to [0, 1] after each stage. Grayscale inputs only see brightness/contrast.
inline ColorImage apply_jitter(const ColorImage& img, const ColorJitter& j) {
  j.validate();
  ColorImage out = img;
  if (j.is_identity()) return out;
  auto clamp01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
  auto& d = out.storage();

  if (j.brightness != 1.0)
    for (auto& v : d) v = clamp01(v * j.brightness);

  if (j.contrast != 1.0) {
    const Image lum = luminance(out);
    double mean = 0.0;
    for (float v : lum.storage()) mean += v;
    mean /= static_cast<double>(lum.size());
    for (auto& v : d) v = clamp01(j.contrast * v + (1.0 - j.contrast) * mean);
  }

  if (out.c() != 3) return out;

  if (j.saturation != 1.0) {
    const Image lum = luminance(out);
    for (int ch = 0; ch < 3; ++ch) {
      float* p = out.plane_ptr(0, ch);
      for (std::size_t i = 0; i < lum.size(); ++i)
        p[i] = clamp01(j.saturation * p[i] + (1.0 - j.saturation) * lum.data()[i]);
    }
  }

  if (j.hue != 0.0) {
    float* r = out.plane_ptr(0, 0);
    float* g = out.plane_ptr(0, 1);
    float* b = out.plane_ptr(0, 2);
    for (std::size_t i = 0; i < out.plane(); ++i) {
      auto hsv = rgb_to_hsv(r[i], g[i], b[i]);
      auto rgb = hsv_to_rgb(hsv[0] + j.hue, hsv[1], hsv[2]);
      r[i] = clamp01(rgb[0]);
      g[i] = clamp01(rgb[1]);
      b[i] = clamp01(rgb[2]);
    }
  }
  return out;
}

}  // namespace sekd::geometry
