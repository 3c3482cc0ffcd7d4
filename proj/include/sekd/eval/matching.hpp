#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "sekd/core/error.hpp"

namespace sekd::eval {

/// Descriptor set: one row per keypoint.
using Descriptors = std::vector<std::vector<float>>;

struct Match {
  int a = 0;
  int b = 0;
  double distance = 0.0;
  friend bool operator==(const Match&, const Match&) = default;
};

using MatchSet = std::vector<Match>;

inline double l2_distance(const std::vector<float>& x, const std::vector<float>& y) {
  if (x.size() != y.size()) throw ShapeError("descriptor length mismatch");
  double s = 0.0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double d = double(x[c]) - double(y[c]);
    s += d * d;
  }
  return std::sqrt(s);
}

/// Row-major |A|×|B| distance table.
inline std::vector<double> distance_table(const Descriptors& a, const Descriptors& b) {
  std::vector<double> d(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) d[i * b.size() + j] = l2_distance(a[i], b[j]);
  return d;
}

namespace detail {

/// Nearest column of each row (ties: lower index), -1 for an empty table.
inline std::vector<int> row_argmin(const std::vector<double>& d, std::size_t rows, std::size_t cols) {
  std::vector<int> best(rows, -1);
  for (std::size_t i = 0; i < rows; ++i) {
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (d[i * cols + j] < bd) {
        bd = d[i * cols + j];
        best[i] = static_cast<int>(j);
      }
  }
  return best;
}

}  // namespace detail

/// Nearest-neighbour matching under L2; with `cross_check` only mutual
/// nearest neighbours are kept. Sorted by index in A.
inline MatchSet nn_match(const Descriptors& a, const Descriptors& b, bool cross_check = true) {
  MatchSet out;
  if (a.empty() || b.empty()) return out;
  const auto d = distance_table(a, b);
  const auto ab = detail::row_argmin(d, a.size(), b.size());
  std::vector<int> ba;
  if (cross_check) {
    std::vector<double> dt(d.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) dt[j * a.size() + i] = d[i * b.size() + j];
    ba = detail::row_argmin(dt, b.size(), a.size());
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int j = ab[i];
    if (cross_check && ba[j] != static_cast<int>(i)) continue;
    out.push_back({static_cast<int>(i), j, d[i * b.size() + j]});
  }
  return out;
}

/// Nearest neighbour kept iff d1 / d2 < ratio, where d2 is the second-nearest
/// distance (+inf when B has a single element).
inline MatchSet ratio_test_match(const Descriptors& a, const Descriptors& b, double ratio = 0.8) {
  if (!(ratio > 0.0)) throw ConfigError("ratio test threshold must be > 0");
  MatchSet out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    int best = -1;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = l2_distance(a[i], b[j]);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = static_cast<int>(j);
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (best < 0) continue;
    const bool keep = std::isinf(d2) ? true : (d2 > 0.0 && d1 / d2 < ratio);
    if (keep) out.push_back({static_cast<int>(i), best, d1});
  }
  return out;
}

}  // namespace sekd::eval
