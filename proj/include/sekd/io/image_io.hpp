#pragma once

// Image, dataset and plot I/O (OpenCV).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sekd/eval/evaluate.hpp"
#include "sekd/evolve/evolve.hpp"

namespace sekd::io {

namespace fs = std::filesystem;

inline bool is_image_file(const fs::path& p) {
  static const std::set<std::string> ext = {".png", ".jpg", ".jpeg", ".ppm", ".pgm", ".bmp", ".tif", ".tiff"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext.count(e) > 0;
}

inline geometry::ColorImage from_mat(const cv::Mat& bgr) {
  cv::Mat f;
  bgr.convertTo(f, CV_32F, bgr.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0);
  const int h = f.rows, w = f.cols;
  if (f.channels() == 1) {
    geometry::ColorImage out(1, 1, h, w);
    for (int y = 0; y < h; ++y) std::copy_n(f.ptr<float>(y), w, out.plane_ptr(0, 0) + static_cast<std::size_t>(y) * w);
    return out;
  }
  geometry::ColorImage out(1, 3, h, w);
  for (int y = 0; y < h; ++y) {
    const float* row = f.ptr<float>(y);
    const int ch = f.channels();
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out(0, c, y, x) = row[x * ch + (2 - c)];  // BGR → RGB
  }
  return out;
}

inline cv::Mat to_mat(const geometry::ColorImage& img) {
  const int h = img.h(), w = img.w();
  if (img.c() == 1) {
    cv::Mat m(h, w, CV_8U);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        m.at<unsigned char>(y, x) = cv::saturate_cast<unsigned char>(img(0, 0, y, x) * 255.0f + 0.5f);
    return m;
  }
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        m.at<cv::Vec3b>(y, x)[2 - c] = cv::saturate_cast<unsigned char>(img(0, c, y, x) * 255.0f + 0.5f);
  return m;
}

/// RGB (or gray) image in [0, 1]; DataError when unreadable.
inline geometry::ColorImage load_image(const fs::path& p) {
  const cv::Mat m = cv::imread(p.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (m.empty()) throw DataError("cannot read image: " + p.string());
  return from_mat(m);
}

inline void save_image(const fs::path& p, const geometry::ColorImage& img) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (!cv::imwrite(p.string(), to_mat(img))) throw DataError("cannot write image: " + p.string());
}

/// Scale factor applied so the long side does not exceed `max_side` (1 if it already fits).
inline double fit_scale(int h, int w, int max_side) {
  const int side = std::max(h, w);
  return (max_side > 0 && side > max_side) ? static_cast<double>(max_side) / side : 1.0;
}

inline geometry::ColorImage resize(const geometry::ColorImage& img, int h, int w) {
  if (img.h() == h && img.w() == w) return img;
  cv::Mat m = to_mat(img), r;
  cv::resize(m, r, cv::Size(w, h), 0, 0, cv::INTER_AREA);
  return from_mat(r);
}

inline geometry::ColorImage resize_long_side(const geometry::ColorImage& img, int max_side) {
  const double s = fit_scale(img.h(), img.w(), max_side);
  if (s == 1.0) return img;
  return resize(img, std::max(1, static_cast<int>(std::lround(img.h() * s))),
                std::max(1, static_cast<int>(std::lround(img.w() * s))));
}

/// Every image file directly inside `dir`, sorted by name, resized so the
/// long side is at most `max_side`. Images under 64×64 are rejected.
inline evolve::Dataset load_dataset(const fs::path& dir, int max_side, int max_images = 0) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (max_images > 0 && static_cast<int>(files.size()) > max_images) files.resize(max_images);
  evolve::Dataset d;
  for (const auto& f : files) {
    auto img = load_image(f);
    if (img.h() < 64 || img.w() < 64)
      throw DataError("image smaller than 64×64: " + f.string());
    img = resize_long_side(img, max_side);
    if (img.h() < 64 || img.w() < 64)
      throw DataError("image smaller than 64×64 after resizing: " + f.string());
    d.ids.push_back(f.filename().string());
    d.images.push_back(std::move(img));
  }
  if (d.size() == 0) throw DataError("no images found in " + dir.string());
  return d;
}

inline Eigen::Matrix3d read_homography(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot read homography file: " + p.string());
  Eigen::Matrix3d h;
  for (int i = 0; i < 9; ++i)
    if (!(is >> h(i / 3, i % 3))) throw DataError("homography file needs 9 numbers: " + p.string());
  return h;
}

inline void write_homography(const fs::path& p, const Eigen::Matrix3d& h) {
  std::ofstream os(p);
  os.precision(17);
  for (int r = 0; r < 3; ++r) os << h(r, 0) << ' ' << h(r, 1) << ' ' << h(r, 2) << '\n';
}

/// Sequence directories `<seq>/1..6.(ppm|png|...)` with `H_1_k` files. With
/// `max_side` > 0 images are downscaled and the homographies re-expressed.
inline std::vector<eval::Sequence> load_hpatches(const fs::path& root, int max_side = 0) {
  if (!fs::is_directory(root)) throw DataError("sequence directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<eval::Sequence> out;
  for (const auto& d : dirs) {
    auto find_image = [&](int k) -> fs::path {
      for (const auto& e : fs::directory_iterator(d))
        if (e.path().stem() == std::to_string(k) && is_image_file(e.path())) return e.path();
      return {};
    };
    eval::Sequence s;
    s.name = d.filename().string();
    const fs::path first = find_image(1);
    if (first.empty()) continue;
    std::vector<double> scale_x, scale_y;
    for (int k = 1;; ++k) {
      const fs::path f = find_image(k);
      if (f.empty()) break;
      auto img = load_image(f);
      const double s0 = fit_scale(img.h(), img.w(), max_side);
      auto r = resize_long_side(img, max_side);
      scale_x.push_back(s0 == 1.0 ? 1.0 : double(r.w()) / img.w());
      scale_y.push_back(s0 == 1.0 ? 1.0 : double(r.h()) / img.h());
      s.images.push_back(geometry::luminance(r));
      if (k > 1) {
        Eigen::Matrix3d h = read_homography(d / ("H_1_" + std::to_string(k)));
        Eigen::Matrix3d sa = Eigen::Matrix3d::Identity(), sb = Eigen::Matrix3d::Identity();
        sa(0, 0) = scale_x[0];
        sa(1, 1) = scale_y[0];
        sb(0, 0) = scale_x[k - 1];
        sb(1, 1) = scale_y[k - 1];
        s.homographies.push_back(eval::normalize_homography(sb * h * sa.inverse()));
      }
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("no sequences found in " + root.string());
  return out;
}

/// Colour-mapped heat map of a scalar grid (min-max scaled).
inline void save_heatmap(const fs::path& p, const Grid<float>& g) {
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (float v : g.storage())
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  cv::Mat m(g.h(), g.w(), CV_8U, cv::Scalar(0));
  if (hi > lo)
    for (int y = 0; y < g.h(); ++y)
      for (int x = 0; x < g.w(); ++x)
        m.at<unsigned char>(y, x) = cv::saturate_cast<unsigned char>(255.0f * (g(y, x) - lo) / (hi - lo));
  cv::Mat c;
  cv::applyColorMap(m, c, cv::COLORMAP_JET);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (!cv::imwrite(p.string(), c)) throw DataError("cannot write image: " + p.string());
}

/// Side-by-side match visualization.
inline void save_match_image(const fs::path& p, const geometry::Image& a, const geometry::Image& b,
                             const detect::KeypointSet& ka, const detect::KeypointSet& kb, const eval::MatchSet& m) {
  cv::Mat ma = to_mat(geometry::ColorImage(to_tensor(a))), mb = to_mat(geometry::ColorImage(to_tensor(b)));
  cv::Mat ca, cb;
  cv::cvtColor(ma, ca, cv::COLOR_GRAY2BGR);
  cv::cvtColor(mb, cb, cv::COLOR_GRAY2BGR);
  const int h = std::max(ca.rows, cb.rows);
  cv::Mat canvas(h, ca.cols + cb.cols, CV_8UC3, cv::Scalar(0, 0, 0));
  ca.copyTo(canvas(cv::Rect(0, 0, ca.cols, ca.rows)));
  cb.copyTo(canvas(cv::Rect(ca.cols, 0, cb.cols, cb.rows)));
  for (const auto& mm : m) {
    const auto pa = ka.points[mm.a], pb = kb.points[mm.b];
    cv::line(canvas, {pa.col, pa.row}, {pb.col + ca.cols, pb.row}, cv::Scalar(0, 255, 0), 1, cv::LINE_AA);
  }
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (!cv::imwrite(p.string(), canvas)) throw DataError("cannot write image: " + p.string());
}

/// HA@ε curve for ε = 1..10, one polyline per scope.
inline void save_ha_plot(const fs::path& p, const eval::HAReport& r) {
  const int W = 640, H = 420, L = 60, R = 20, T = 20, B = 50;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  auto px = [&](double eps) { return L + static_cast<int>((eps - 1.0) / 9.0 * (W - L - R)); };
  auto py = [&](double v) { return H - B - static_cast<int>(v * (H - T - B)); };
  cv::rectangle(img, {L, T}, {W - R, H - B}, cv::Scalar(0, 0, 0));
  for (int e = 1; e <= 10; ++e)
    cv::putText(img, std::to_string(e), {px(e) - 5, H - B + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
  for (int k = 0; k <= 4; ++k)
    cv::putText(img, std::to_string(25 * k) + "%", {5, py(k / 4.0) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                cv::Scalar(0, 0, 0));
  const cv::Scalar colours[] = {{200, 0, 0}, {0, 150, 0}, {0, 0, 200}, {120, 0, 120}};
  std::vector<std::pair<std::string, const eval::HACurve*>> curves = {{"overall", &r.overall}};
  for (const auto& [k, c] : r.subsets) curves.emplace_back(k, &c);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& col = colours[i % 4];
    for (int e = 1; e < eval::kThresholds; ++e)
      cv::line(img, {px(e), py(curves[i].second->ha[e - 1])}, {px(e + 1), py(curves[i].second->ha[e])}, col, 2,
               cv::LINE_AA);
    cv::putText(img, curves[i].first, {L + 10, T + 18 + 16 * static_cast<int>(i)}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                col);
  }
  cv::putText(img, "threshold (px)", {W / 2 - 40, H - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (!cv::imwrite(p.string(), img)) throw DataError("cannot write image: " + p.string());
}

}  // namespace sekd::io
