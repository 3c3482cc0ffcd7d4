#pragma once

// Loss terms of the two training phases. Each returns its value and, when a
// gradient buffer is given, accumulates d(loss)/d(input) into it.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sekd/core/error.hpp"
#include "sekd/core/tensor.hpp"
#include "sekd/detect/keypoints.hpp"

namespace sekd::train {

using detect::Pixel;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Descriptor rows of sample `n` of an N×C×H×W map at integer pixels.
/// Rows are re-normalized to unit length.
template <typename T>
Matrix<T> sample_descriptors(const Tensor<T>& f, int n, const std::vector<Pixel>& pts) {
  Matrix<T> out(static_cast<Eigen::Index>(pts.size()), f.c());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto p = pts[i];
    if (p.row < 0 || p.col < 0 || p.row >= f.h() || p.col >= f.w())
      throw ShapeError("sample_descriptors: point outside the map");
    for (int c = 0; c < f.c(); ++c) out(i, c) = f(n, c, p.row, p.col);
    const T norm = out.row(i).norm();
    if (norm > T(0)) out.row(i) /= norm;
  }
  return out;
}

/// Scatters row gradients back onto the map. The re-normalization is treated
/// as the identity since the map is already unit-norm per pixel.
template <typename T>
void scatter_descriptor_grad(Tensor<T>& grad, int n, const std::vector<Pixel>& pts, const Matrix<T>& g) {
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int c = 0; c < grad.c(); ++c) grad(n, c, pts[i].row, pts[i].col) += g(i, c);
}

struct TripletConfig {
  double margin = 0.8;
  int exclusion_radius = 4;
};

/// Hardest negative of one anchor. `index` is -1 when no candidate exists;
/// `anchor_side` tells whether the minimum came from D(i, j) (true) or D(j, i).
struct HardNegative {
  int index = -1;
  bool anchor_side = true;
  double distance = std::numeric_limits<double>::infinity();
};

template <typename T>
struct TripletResult {
  double loss = 0.0;
  std::vector<HardNegative> negatives;
  std::vector<double> positive_distance;
  int active = 0;  // anchors with a positive hinge
  Matrix<T> grad_anchor, grad_positive;
};

/// Pairwise distances D(i, j) = ‖anchor_i − positive_j‖.
template <typename T>
std::vector<double> pairwise_distances(const Matrix<T>& a, const Matrix<T>& b) {
  const auto n = a.rows(), m = b.rows();
  std::vector<double> d(static_cast<std::size_t>(n * m));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double t = double(a(i, c)) - double(b(j, c));
        s += t * t;
      }
      d[i * m + j] = std::sqrt(s);
    }
  return d;
}

/// Triplet margin loss with hardest-negative mining inside the batch.
/// Row i of `anchors` corresponds to row i of `positives`; `warped` are the
/// positive-side coordinates used to exclude spatial neighbours of the true
/// correspondence from the negatives.
template <typename T>
TripletResult<T> triplet_hard_loss(const Matrix<T>& anchors, const Matrix<T>& positives,
                                   const std::vector<Pixel>& warped, const TripletConfig& cfg,
                                   bool want_grad = false) {
  const auto n = anchors.rows();
  if (n < 2) throw DataError("triplet loss needs at least two pairs");
  if (positives.rows() != n || positives.cols() != anchors.cols() ||
      static_cast<Eigen::Index>(warped.size()) != n)
    throw ShapeError("triplet loss: mismatched batch");
  const auto d = pairwise_distances(anchors, positives);
  TripletResult<T> r;
  r.negatives.resize(n);
  r.positive_distance.resize(n);
  if (want_grad) {
    r.grad_anchor = Matrix<T>::Zero(n, anchors.cols());
    r.grad_positive = Matrix<T>::Zero(n, anchors.cols());
  }
  // d(‖x − y‖)/dx, zero at coincidence.
  auto add_dist_grad = [&](Eigen::Index ia, Eigen::Index ip, double dist, double scale) {
    if (dist < 1e-12) return;
    const double s = scale / dist;
    for (Eigen::Index c = 0; c < anchors.cols(); ++c) {
      const double diff = double(anchors(ia, c)) - double(positives(ip, c));
      r.grad_anchor(ia, c) += static_cast<T>(s * diff);
      r.grad_positive(ip, c) -= static_cast<T>(s * diff);
    }
  };
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    HardNegative& hn = r.negatives[i];
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i || detect::chebyshev(warped[j], warped[i]) <= cfg.exclusion_radius) continue;
      const double dij = d[i * n + j], dji = d[j * n + i];
      if (dij < hn.distance) hn = {static_cast<int>(j), true, dij};
      if (dji < hn.distance) hn = {static_cast<int>(j), false, dji};
    }
    const double dpos = d[i * n + i];
    r.positive_distance[i] = dpos;
    if (hn.index < 0) continue;
    const double hinge = dpos - hn.distance + cfg.margin;
    if (hinge <= 0.0) continue;
    r.loss += hinge * inv_n;
    ++r.active;
    if (want_grad) {
      add_dist_grad(i, i, dpos, inv_n);
      if (hn.anchor_side)
        add_dist_grad(i, hn.index, hn.distance, -inv_n);
      else
        add_dist_grad(hn.index, i, hn.distance, -inv_n);
    }
  }
  return r;
}

/// Mean squared difference averaged per sample, then over samples:
/// ½(MSE(X₀, X₀') + MSE(X₁, X₁')) for a two-view batch.
template <typename T>
double preservation_loss(const Tensor<T>& live, const Tensor<T>& frozen, Tensor<T>* grad = nullptr) {
  if (!live.same_shape(frozen)) throw ShapeError("preservation loss: shape mismatch");
  if (live.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < live.size(); ++i) {
    const double t = double(live.data()[i]) - double(frozen.data()[i]);
    s += t * t;
  }
  const double inv = 1.0 / static_cast<double>(live.size());
  if (grad)
    for (std::size_t i = 0; i < live.size(); ++i)
      grad->data()[i] += static_cast<T>(2.0 * inv * (double(live.data()[i]) - double(frozen.data()[i])));
  return s * inv;
}

/// Four-map form: ½(MSE(X, X') + MSE(X̂, X̂')) for single maps of equal size.
template <typename T>
double preservation_loss(const Tensor<T>& x, const Tensor<T>& xp, const Tensor<T>& xh, const Tensor<T>& xhp) {
  return 0.5 * (preservation_loss(x, xp) + preservation_loss(xh, xhp));
}

struct FocalConfig {
  double gamma = 2.0;
  double alpha = 0.25;  // weight of the keypoint class
};

inline constexpr double kProbClamp = 1e-7;

/// Focal loss of sample `n` of an N×2×H×W probability map against binary
/// labels, averaged over pixels with mask 1 (all pixels without a mask).
template <typename T>
double focal_loss(const Tensor<T>& prob, int n, const Grid<float>& labels, const FocalConfig& cfg,
                  const Mask* mask = nullptr, Tensor<T>* grad = nullptr, double weight = 1.0) {
  if (prob.c() != 2 || labels.h() != prob.h() || labels.w() != prob.w())
    throw ShapeError("focal loss: shape mismatch");
  if (cfg.gamma < 0.0 || !(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("focal loss: bad parameters");
  const std::size_t hw = prob.plane();
  std::size_t counted = 0;
  for (std::size_t i = 0; i < hw; ++i) counted += (!mask || mask->data()[i]);
  if (counted == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(counted);
  double total = 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    if (mask && !mask->data()[i]) continue;
    const int cls = labels.data()[i] > 0.5f ? 1 : 0;
    const double at = cls ? cfg.alpha : 1.0 - cfg.alpha;
    const double pt = prob.plane_ptr(n, cls)[i];
    const double q = 1.0 - pt;
    const double lp = std::log(std::max(pt, kProbClamp));
    const double mod = cfg.gamma == 0.0 ? 1.0 : std::pow(std::max(q, 0.0), cfg.gamma);
    total += -at * mod * lp;
    if (grad) {
      double dmod = 0.0;
      if (cfg.gamma != 0.0 && q > 0.0) dmod = -cfg.gamma * std::pow(q, cfg.gamma - 1.0);
      const double dlp = pt > kProbClamp ? 1.0 / pt : 0.0;
      const double g = -at * (dmod * lp + mod * dlp);
      grad->plane_ptr(n, cls)[i] += static_cast<T>(weight * g * inv);
    }
  }
  return total * inv;
}

/// Symmetric KL divergence between two-class distributions at matched pixels
/// of samples 0 and 1. Returns {sum over pairs, mean over pairs}; gradients are
/// those of the sum scaled by `weight`.
template <typename T>
std::pair<double, double> repeatability_loss(const Tensor<T>& prob,
                                             const std::vector<std::pair<Pixel, Pixel>>& pairs,
                                             Tensor<T>* grad = nullptr, double weight = 1.0) {
  if (prob.n() != 2 || prob.c() != 2) throw ShapeError("repeatability loss needs a 2×2×H×W map");
  double sum = 0.0;
  auto clamp = [](double v, double& d) {
    if (v < kProbClamp) {
      d = 0.0;
      return kProbClamp;
    }
    if (v > 1.0 - kProbClamp) {
      d = 0.0;
      return 1.0 - kProbClamp;
    }
    d = 1.0;
    return v;
  };
  for (const auto& [a, b] : pairs) {
    double p[2], q[2], dp[2], dq[2];
    for (int c = 0; c < 2; ++c) {
      p[c] = clamp(prob(0, c, a.row, a.col), dp[c]);
      q[c] = clamp(prob(1, c, b.row, b.col), dq[c]);
    }
    double kl = 0.0;
    for (int c = 0; c < 2; ++c) kl += 0.5 * ((p[c] - q[c]) * (std::log(p[c]) - std::log(q[c])));
    sum += kl;
    if (grad) {
      // d/dp of ½[p log(p/q) + q log(q/p)] = ½[log(p/q) + 1 − q/p].
      for (int c = 0; c < 2; ++c) {
        const double gp = 0.5 * (std::log(p[c] / q[c]) + 1.0 - q[c] / p[c]);
        const double gq = 0.5 * (std::log(q[c] / p[c]) + 1.0 - p[c] / q[c]);
        (*grad)(0, c, a.row, a.col) += static_cast<T>(weight * gp * dp[c]);
        (*grad)(1, c, b.row, b.col) += static_cast<T>(weight * gq * dq[c]);
      }
    }
  }
  const double mean = pairs.empty() ? 0.0 : sum / static_cast<double>(pairs.size());
  return {sum, mean};
}

}  // namespace sekd::train
