#pragma once

#include <algorithm>
#include <vector>

#include "sekd/detect/keypoints.hpp"
#include "sekd/geometry/view.hpp"
#include "sekd/model/network.hpp"

namespace sekd::train {

/// Reference image and its synthetic view stacked as a two-sample batch,
/// together with keypoint correspondences between them.
template <typename T>
struct PairSample {
  Tensor<T> images;  // 2×1×H×W: [I, Î]
  geometry::AffineTransform transform;
  Mask valid;  // validity of Î
  std::vector<Pixel> points_a, points_b;
};

/// Correspondences Q → round(A(Q)) that land on valid pixels of the view at
/// least `border` pixels from its edge. At most `cap` pairs are kept (a random
/// subset, original order preserved) when cap > 0.
inline std::pair<std::vector<Pixel>, std::vector<Pixel>> correspondences(
    const detect::KeypointSet& q, const geometry::AffineTransform& a, const Mask& valid, int border,
    int cap = 0, Rng* rng = nullptr) {
  std::vector<Pixel> pa, pb;
  const int h = valid.h(), w = valid.w();
  for (auto p : q.points) {
    const Pixel t = detect::round_pixel(a.apply(detect::to_point(p)));
    if (t.row < border || t.col < border || t.row >= h - border || t.col >= w - border) continue;
    if (!valid(t.row, t.col)) continue;
    pa.push_back(p);
    pb.push_back(t);
  }
  if (cap > 0 && static_cast<int>(pa.size()) > cap) {
    if (!rng) throw Error("correspondences: subsampling needs a random source");
    std::vector<std::size_t> idx(pa.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng->shuffle(idx.begin(), idx.end());
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<Pixel> sa, sb;
    for (auto i : idx) {
      sa.push_back(pa[i]);
      sb.push_back(pb[i]);
    }
    pa.swap(sa);
    pb.swap(sb);
  }
  return {std::move(pa), std::move(pb)};
}

template <typename T>
PairSample<T> make_pair_sample(const geometry::Image& ref, const geometry::View& view) {
  PairSample<T> s;
  s.images = model::image_batch<T>(std::vector<geometry::Image>{ref, view.image});
  s.transform = view.transform;
  s.valid = view.valid;
  return s;
}

/// Outputs of the phase snapshot on the same batch; batch statistics are used
/// (as in the live forward) and the snapshot's running buffers stay untouched.
template <typename T>
struct FrozenOutputs {
  Tensor<T> prob, desc;
};

template <typename T>
FrozenOutputs<T> frozen_outputs(const model::NetworkParams<T>& snapshot, const Tensor<T>& images) {
  auto o = model::forward_batch(snapshot, images, model::Mode::Train);
  return {std::move(o.prob), std::move(o.desc)};
}

}  // namespace sekd::train
