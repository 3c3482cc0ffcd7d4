#pragma once

#include <vector>

#include "sekd/detect/keypoints.hpp"
#include "sekd/geometry/view.hpp"
#include "sekd/model/network.hpp"

namespace sekd::detect {

/// Keypoint channel of the probability map for one image.
template <typename T>
Grid<float> keypoint_probability(const model::NetworkParams<T>& p, const geometry::Image& img) {
  auto out = model::forward_batch(p, model::image_batch<T>(img), model::Mode::Eval,
                                  model::Heads{true, false});
  return to_grid(out.prob.template cast<float>(), 0, 1);
}

template <typename T>
KeypointSet detect(const model::NetworkParams<T>& p, const geometry::Image& img, const NmsConfig& cfg,
                   const Mask* mask = nullptr) {
  return nms(keypoint_probability(p, img), cfg, mask);
}

/// Attaches descriptors read from a C×H×W map (sample 0 of `desc`).
template <typename T>
void attach_descriptors(KeypointSet& k, const Tensor<T>& desc) {
  k.descriptors.assign(k.size(), std::vector<float>(desc.c()));
  for (std::size_t i = 0; i < k.size(); ++i)
    for (int c = 0; c < desc.c(); ++c)
      k.descriptors[i][c] = static_cast<float>(desc(0, c, k.points[i].row, k.points[i].col));
}

struct AdaptationResult {
  Grid<float> probability;
  Grid<int> coverage;  // number of views (including the unwarped one) seen per pixel
};

/// Keypoint probability averaged over the unwarped image and m-1 random
/// jittered warps mapped back to the reference frame. Each pixel averages
/// only the views whose validity covers it.
template <typename T>
AdaptationResult affine_adapted_probability(const model::NetworkParams<T>& p,
                                            const geometry::ColorImage& img, int m, Rng& rng,
                                            const geometry::AugmentConfig& cfg) {
  if (m < 1) throw ConfigError("affine adaptation needs at least one view");
  const int h = img.h(), w = img.w();
  const Grid<float> base = keypoint_probability(p, geometry::luminance(img));
  std::vector<double> acc(base.storage().begin(), base.storage().end());
  Grid<int> count(h, w, 1);
  for (int k = 1; k < m; ++k) {
    const auto view = geometry::sample_view(rng, img, cfg);
    const Grid<float> pk = keypoint_probability(p, view.image);
    // Back-warp: reference pixel x reads the view's map at A(x).
    const auto& a = view.transform;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto f = geometry::footprint(a.apply({double(x), double(y)}), h, w);
        if (!f) continue;
        acc[static_cast<std::size_t>(y) * w + x] += geometry::bilinear(pk.data(), w, *f);
        ++count(y, x);
      }
  }
  AdaptationResult r{Grid<float>(h, w), std::move(count)};
  for (std::size_t i = 0; i < acc.size(); ++i)
    r.probability.data()[i] =
        r.coverage.data()[i] > 0 ? static_cast<float>(acc[i] / r.coverage.data()[i]) : base.data()[i];
  return r;
}

}  // namespace sekd::detect
