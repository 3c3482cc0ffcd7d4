#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "sekd/core/error.hpp"
#include "sekd/core/random.hpp"
#include "sekd/core/tensor.hpp"
#include "sekd/geometry/affine.hpp"

namespace sekd::detect {

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

inline int chebyshev(Pixel a, Pixel b) { return std::max(std::abs(a.row - b.row), std::abs(a.col - b.col)); }

inline geometry::Point2 to_point(Pixel p) { return {double(p.col), double(p.row)}; }

/// Nearest pixel of a continuous position.
inline Pixel round_pixel(geometry::Point2 p) {
  return {static_cast<int>(std::lround(p.y)), static_cast<int>(std::lround(p.x))};
}

struct KeypointSet {
  std::vector<Pixel> points;
  std::vector<float> scores;
  /// Optional per-point descriptors (empty or one vector per point).
  std::vector<std::vector<float>> descriptors;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void push(Pixel p, float s) {
    points.push_back(p);
    scores.push_back(s);
  }
  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

/// Flattened (row, col) pairs, the form stored in checkpoints.
inline std::vector<std::int32_t> flatten(const KeypointSet& k) {
  std::vector<std::int32_t> v;
  v.reserve(2 * k.size());
  for (auto p : k.points) {
    v.push_back(p.row);
    v.push_back(p.col);
  }
  return v;
}

inline KeypointSet unflatten(const std::vector<std::int32_t>& v) {
  if (v.size() % 2) throw DataError("keypoint array has odd length");
  KeypointSet k;
  for (std::size_t i = 0; i < v.size(); i += 2) k.push({v[i], v[i + 1]}, 1.0f);
  return k;
}

struct NmsConfig {
  int radius = 4;
  int max_n = 1000;
  float min_score = 0.0f;

  void validate() const {
    if (radius < 1) throw ConfigError("nms radius must be >= 1");
    if (max_n < 0) throw ConfigError("nms max_n must be >= 0");
  }
};

/// Greedy non-maximum suppression. Candidates are visited by descending score,
/// ties by (row, col); a candidate survives unless an already kept point lies
/// within Chebyshev distance `radius`. Pixels with mask 0 are never selected.
inline KeypointSet nms(const Grid<float>& score, const NmsConfig& cfg, const Mask* mask = nullptr) {
  cfg.validate();
  const int h = score.h(), w = score.w();
  if (mask && (mask->h() != h || mask->w() != w)) throw ShapeError("nms: mask size mismatch");
  std::vector<std::uint32_t> order;
  order.reserve(score.size());
  for (std::uint32_t i = 0; i < score.size(); ++i) {
    if (mask && !mask->data()[i]) continue;
    const float s = score.data()[i];
    if (std::isnan(s)) throw NumericError("nms: NaN score");
    if (s >= cfg.min_score) order.push_back(i);
  }
  // Row-major index order is (row, col) order, so a stable sort on score
  // gives the lexicographic tie rule.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return score.data()[a] > score.data()[b]; });
  KeypointSet out;
  Mask blocked(h, w, 0);
  const int r = cfg.radius;
  for (auto i : order) {
    if (static_cast<int>(out.size()) >= cfg.max_n) break;
    if (blocked.data()[i]) continue;
    const int row = static_cast<int>(i / w), col = static_cast<int>(i % w);
    out.push({row, col}, score.data()[i]);
    for (int y = std::max(0, row - r); y <= std::min(h - 1, row + r); ++y)
      for (int x = std::max(0, col - r); x <= std::min(w - 1, col + r); ++x) blocked(y, x) = 1;
  }
  return out;
}

/// Up to `n` distinct random pixels, pairwise Chebyshev distance > radius,
/// each with score 1. Pixels with mask 0 are skipped.
inline KeypointSet random_keypoints(int h, int w, int n, Rng& rng, int radius = 4,
                                    const Mask* mask = nullptr) {
  if (h <= 0 || w <= 0) throw ShapeError("random_keypoints: empty shape");
  if (radius < 0) throw ConfigError("random_keypoints: negative radius");
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(h) * w);
  std::iota(idx.begin(), idx.end(), 0u);
  Mask blocked(h, w, 0);
  KeypointSet out;
  // Incremental Fisher-Yates: draw without replacement until n accepted.
  for (std::size_t k = 0; k < idx.size() && static_cast<int>(out.size()) < n; ++k) {
    std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
    const auto i = idx[k];
    if (blocked.data()[i] || (mask && !mask->data()[i])) continue;
    const int row = static_cast<int>(i / w), col = static_cast<int>(i % w);
    out.push({row, col}, 1.0f);
    for (int y = std::max(0, row - radius); y <= std::min(h - 1, row + radius); ++y)
      for (int x = std::max(0, col - radius); x <= std::min(w - 1, col + radius); ++x) blocked(y, x) = 1;
  }
  return out;
}

/// Binary label raster with ones at the keypoints.
inline Grid<float> label_map(const KeypointSet& k, int h, int w) {
  Grid<float> y(h, w, 0.0f);
  for (auto p : k.points) {
    if (!y.contains(p.row, p.col)) throw ShapeError("label_map: keypoint outside the image");
    y(p.row, p.col) = 1.0f;
  }
  return y;
}

// Keypoint export: JSON lines, one object per keypoint
//   {"v": 1, "x": col, "y": row, "score": s, "descriptor": [...]}
// "descriptor" is present only when descriptors are attached.
inline constexpr int kKeypointSchemaVersion = 1;

inline void write_jsonl(std::ostream& os, const KeypointSet& k) {
  for (std::size_t i = 0; i < k.size(); ++i) {
    nlohmann::json j = {{"v", kKeypointSchemaVersion},
                        {"x", k.points[i].col},
                        {"y", k.points[i].row},
                        {"score", k.scores[i]}};
    if (!k.descriptors.empty()) j["descriptor"] = k.descriptors.at(i);
    os << j.dump() << '\n';
  }
}

inline KeypointSet read_jsonl(std::istream& is) {
  KeypointSet k;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.at("v").get<int>() != kKeypointSchemaVersion) throw DataError("unsupported keypoint schema version");
      k.push({j.at("y").get<int>(), j.at("x").get<int>()}, j.value("score", 1.0f));
      if (j.contains("descriptor")) k.descriptors.push_back(j["descriptor"].get<std::vector<float>>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad keypoint record: ") + e.what());
    }
  }
  if (!k.descriptors.empty() && k.descriptors.size() != k.size())
    throw DataError("keypoint records mix entries with and without descriptors");
  return k;
}

}  // namespace sekd::detect
