#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sekd/detect/detector.hpp"
#include "sekd/eval/homography.hpp"
#include "sekd/eval/matching.hpp"

namespace sekd::eval {

inline constexpr int kThresholds = 10;  // HA@1 .. HA@10

/// One image sequence: images[0] is the reference, homographies[k-1] maps the
/// reference onto images[k].
struct Sequence {
  std::string name;
  std::vector<geometry::Image> images;
  std::vector<Eigen::Matrix3d> homographies;

  /// "illumination" for names starting i_, "viewpoint" for v_, else "other".
  std::string subset() const {
    if (name.rfind("i_", 0) == 0) return "illumination";
    if (name.rfind("v_", 0) == 0) return "viewpoint";
    return "other";
  }
};

struct PairResult {
  std::string sequence;
  std::string subset;
  int target = 0;
  bool estimated = false;
  double corner_error = 0.0;  // meaningful only when estimated
  int keypoints_a = 0, keypoints_b = 0, matches = 0, inliers = 0;

  bool correct(double eps) const { return estimated && corner_error <= eps; }
};

struct HACurve {
  std::array<double, kThresholds> ha{};  // fractions in [0, 1]
  double average = 0.0;
  int pairs = 0;
};

struct HAReport {
  HACurve overall;
  std::map<std::string, HACurve> subsets;
  std::map<std::string, HACurve> sequences;
  std::vector<PairResult> pairs;
};

inline HACurve ha_curve(const std::vector<const PairResult*>& pairs) {
  HACurve c;
  c.pairs = static_cast<int>(pairs.size());
  if (pairs.empty()) return c;
  for (int e = 0; e < kThresholds; ++e) {
    int ok = 0;
    for (const auto* p : pairs) ok += p->correct(e + 1);
    c.ha[e] = static_cast<double>(ok) / pairs.size();
  }
  double s = 0.0;
  for (double v : c.ha) s += v;
  c.average = s / kThresholds;
  return c;
}

inline HAReport make_report(std::vector<PairResult> pairs) {
  HAReport r;
  std::vector<const PairResult*> all;
  std::map<std::string, std::vector<const PairResult*>> by_subset, by_seq;
  r.pairs = std::move(pairs);
  for (const auto& p : r.pairs) {
    all.push_back(&p);
    by_subset[p.subset].push_back(&p);
    by_seq[p.sequence].push_back(&p);
  }
  r.overall = ha_curve(all);
  for (const auto& [k, v] : by_subset) r.subsets[k] = ha_curve(v);
  for (const auto& [k, v] : by_seq) r.sequences[k] = ha_curve(v);
  return r;
}

inline nlohmann::json to_json(const HACurve& c) {
  return {{"ha", c.ha}, {"avg", c.average}, {"pairs", c.pairs}};
}

/// Structured rows: one per pair, then one summary row per scope.
inline std::vector<nlohmann::json> report_rows(const HAReport& r) {
  std::vector<nlohmann::json> rows;
  for (const auto& p : r.pairs)
    rows.push_back({{"type", "pair"},
                    {"sequence", p.sequence},
                    {"subset", p.subset},
                    {"target", p.target},
                    {"estimated", p.estimated},
                    {"corner_error", p.estimated ? nlohmann::json(p.corner_error) : nlohmann::json(nullptr)},
                    {"keypoints_a", p.keypoints_a},
                    {"keypoints_b", p.keypoints_b},
                    {"matches", p.matches},
                    {"inliers", p.inliers}});
  for (const auto& [k, c] : r.sequences) {
    auto j = to_json(c);
    j["type"] = "sequence";
    j["name"] = k;
    rows.push_back(j);
  }
  for (const auto& [k, c] : r.subsets) {
    auto j = to_json(c);
    j["type"] = "subset";
    j["name"] = k;
    rows.push_back(j);
  }
  auto j = to_json(r.overall);
  j["type"] = "overall";
  rows.push_back(j);
  return rows;
}

struct EvalConfig {
  detect::NmsConfig nms{4, 500, 0.0f};
  bool cross_check = true;
  RansacConfig ransac;
};

/// Detections with attached descriptors of one image (no affine adaptation).
template <typename T>
detect::KeypointSet describe_image(const model::NetworkParams<T>& p, const geometry::Image& img,
                                   const detect::NmsConfig& nms, const Mask* mask = nullptr) {
  auto [prob, desc] = model::forward(p, img);
  auto k = detect::nms(to_grid(prob.template cast<float>(), 0, 1), nms, mask);
  detect::attach_descriptors(k, desc);
  return k;
}

inline std::vector<Point2> points_of(const detect::KeypointSet& k) {
  std::vector<Point2> v;
  for (auto p : k.points) v.push_back(detect::to_point(p));
  return v;
}

/// Homography estimate between two described keypoint sets.
inline PairResult score_pair(const detect::KeypointSet& ka, const detect::KeypointSet& kb,
                             const Eigen::Matrix3d& h_gt, int h, int w, const EvalConfig& cfg) {
  PairResult r;
  r.keypoints_a = static_cast<int>(ka.size());
  r.keypoints_b = static_cast<int>(kb.size());
  const auto m = nn_match(ka.descriptors, kb.descriptors, cfg.cross_check);
  r.matches = static_cast<int>(m.size());
  std::vector<Point2> pa, pb;
  for (const auto& mm : m) {
    pa.push_back(detect::to_point(ka.points[mm.a]));
    pb.push_back(detect::to_point(kb.points[mm.b]));
  }
  const auto est = estimate_homography(pa, pb, cfg.ransac);
  r.estimated = est.success;
  r.inliers = est.inlier_count;
  if (est.success) r.corner_error = corner_error(est.h, h_gt, h, w);
  if (!std::isfinite(r.corner_error)) r.estimated = false;
  return r;
}

template <typename T>
HAReport evaluate_sequences(const model::NetworkParams<T>& p, const std::vector<Sequence>& data,
                            const EvalConfig& cfg) {
  std::vector<PairResult> pairs;
  for (const auto& s : data) {
    if (s.images.size() != s.homographies.size() + 1) throw DataError("sequence " + s.name + ": image/homography count mismatch");
    if (s.images.empty()) continue;
    const auto ka = describe_image(p, s.images[0], cfg.nms);
    for (std::size_t k = 1; k < s.images.size(); ++k) {
      const auto kb = describe_image(p, s.images[k], cfg.nms);
      auto r = score_pair(ka, kb, s.homographies[k - 1], s.images[0].h(), s.images[0].w(), cfg);
      r.sequence = s.name;
      r.subset = s.subset();
      r.target = static_cast<int>(k + 1);
      pairs.push_back(r);
    }
  }
  return make_report(std::move(pairs));
}

// ---------------------------------------------------------------------------
// Repeatability / matching-score diagnostic on synthetic warps.

struct ViewPairScore {
  int keypoints_a = 0, keypoints_b = 0;
  int repeated_a = 0, repeated_b = 0;
  int matches = 0, correct_matches = 0;
  double repeatability = 0.0;
  double matching_score = 0.0;
};

/// Scores keypoints of a reference and of its view under A. A reference point
/// is repeated when some view point lies within `radius` (Euclidean) of its
/// transform, and symmetrically for view points; repeatability is the repeated
/// fraction of both sets. When descriptors are attached, the matching score is
/// the number of mutual-NN matches landing within `radius` of the true
/// location over the mean set size.
inline ViewPairScore score_view_pair(const detect::KeypointSet& ka, const detect::KeypointSet& kb,
                                     const geometry::AffineTransform& a, double radius = 3.0) {
  ViewPairScore s;
  s.keypoints_a = static_cast<int>(ka.size());
  s.keypoints_b = static_cast<int>(kb.size());
  if (ka.empty() || kb.empty()) return s;
  std::vector<Point2> ta;
  for (auto p : ka.points) ta.push_back(a.apply(detect::to_point(p)));
  std::vector<unsigned char> hit_b(kb.size(), 0);
  for (std::size_t i = 0; i < ka.size(); ++i) {
    bool hit = false;
    for (std::size_t j = 0; j < kb.size(); ++j)
      if (distance(ta[i], detect::to_point(kb.points[j])) <= radius) {
        hit = true;
        hit_b[j] = 1;
      }
    s.repeated_a += hit;
  }
  for (auto v : hit_b) s.repeated_b += v;
  s.repeatability = static_cast<double>(s.repeated_a + s.repeated_b) / (s.keypoints_a + s.keypoints_b);
  if (!ka.descriptors.empty() && !kb.descriptors.empty()) {
    const auto m = nn_match(ka.descriptors, kb.descriptors, true);
    s.matches = static_cast<int>(m.size());
    for (const auto& mm : m)
      s.correct_matches += distance(ta[mm.a], detect::to_point(kb.points[mm.b])) <= radius;
    s.matching_score = 2.0 * s.correct_matches / (s.keypoints_a + s.keypoints_b);
  }
  return s;
}

struct DiagnosticConfig {
  int top_k = 200;
  int nms_radius = 4;
  double radius = 3.0;
  int trials = 20;
  int margin = 4;  // detections kept this far inside the view's valid region
  geometry::AugmentConfig augment;
};

struct Diagnostics {
  double repeatability = 0.0, matching_score = 0.0;
  double random_repeatability = 0.0, random_matching_score = 0.0;
  int trials = 0;
};

/// Pixels of the reference whose transform lands inside the eroded valid
/// region of the view.
inline Mask covisible_mask(const geometry::AffineTransform& a, const Mask& valid_b_eroded) {
  const int h = valid_b_eroded.h(), w = valid_b_eroded.w();
  Mask m(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto q = detect::round_pixel(a.apply({double(x), double(y)}));
      m(y, x) = valid_b_eroded.contains(q.row, q.col) && valid_b_eroded(q.row, q.col);
    }
  return m;
}

/// Averages over `cfg.trials` random warps of each image: the trained
/// detector/descriptor, and uniformly random keypoints (same spacing, same
/// regions, descriptors read from the same maps) through the same scoring.
template <typename T>
Diagnostics repeatability_and_matching_score(const model::NetworkParams<T>& p,
                                             const std::vector<geometry::ColorImage>& images,
                                             const DiagnosticConfig& cfg, Rng& rng) {
  Diagnostics d;
  const detect::NmsConfig nms{cfg.nms_radius, cfg.top_k, 0.0f};
  for (const auto& img : images) {
    const auto ref = geometry::luminance(img);
    auto [prob_a, desc_a] = model::forward(p, ref);
    const auto score_a = to_grid(prob_a.template cast<float>(), 0, 1);
    for (int t = 0; t < cfg.trials; ++t) {
      const auto view = geometry::sample_view(rng, img, cfg.augment);
      const Mask vb = geometry::erode(view.valid, cfg.margin);
      const Mask va = covisible_mask(view.transform, vb);
      auto [prob_b, desc_b] = model::forward(p, view.image);
      auto ka = detect::nms(score_a, nms, &va);
      auto kb = detect::nms(to_grid(prob_b.template cast<float>(), 0, 1), nms, &vb);
      detect::attach_descriptors(ka, desc_a);
      detect::attach_descriptors(kb, desc_b);
      const auto s = score_view_pair(ka, kb, view.transform, cfg.radius);
      auto ra = detect::random_keypoints(ref.h(), ref.w(), cfg.top_k, rng, cfg.nms_radius, &va);
      auto rb = detect::random_keypoints(ref.h(), ref.w(), cfg.top_k, rng, cfg.nms_radius, &vb);
      detect::attach_descriptors(ra, desc_a);
      detect::attach_descriptors(rb, desc_b);
      const auto sr = score_view_pair(ra, rb, view.transform, cfg.radius);
      d.repeatability += s.repeatability;
      d.matching_score += s.matching_score;
      d.random_repeatability += sr.repeatability;
      d.random_matching_score += sr.matching_score;
      ++d.trials;
    }
  }
  if (d.trials > 0) {
    d.repeatability /= d.trials;
    d.matching_score /= d.trials;
    d.random_repeatability /= d.trials;
    d.random_matching_score /= d.trials;
  }
  return d;
}

}  // namespace sekd::eval
