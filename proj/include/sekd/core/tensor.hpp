#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "sekd/core/error.hpp"

namespace sekd {

/// Cache-line aligned allocation. Eigen's vectorized kernels pick their
/// scalar/packet split from the data address, so unaligned buffers make sums
/// depend on where the heap happened to put them.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t n) { ::operator delete(p, n * sizeof(T), kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense N×C×H×W array in row-major (NCHW) order.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw ShapeError("negative tensor dimension");
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  Buffer<T>& storage() { return data_; }
  const Buffer<T>& storage() const { return data_; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w;
  }
  T& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  const T& operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  /// Pointer to the H×W plane of (sample, channel).
  T* plane_ptr(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane_ptr(int n, int c) const { return data_.data() + index(n, c, 0, 0); }
  /// Pointer to the C×H×W block of one sample.
  T* sample_ptr(int n) { return data_.data() + index(n, 0, 0, 0); }
  const T* sample_ptr(int n) const { return data_.data() + index(n, 0, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    assert(same_shape(o));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  /// Copy of a single sample as a batch of one.
  Tensor sample(int n) const {
    Tensor out(1, c_, h_, w_);
    std::copy_n(sample_ptr(n), out.size(), out.data());
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n_, c_, h_, w_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    return std::to_string(n_) + "x" + std::to_string(c_) + "x" + std::to_string(h_) + "x" +
           std::to_string(w_);
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Buffer<T> data_;
};

/// Single-channel H×W raster (score maps, masks, distance maps).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int h, int w, T fill = T{}) : h_(h), w_(w), data_(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw ShapeError("negative grid dimension");
  }

  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Grid& o) const { return h_ == o.h_ && w_ == o.w_; }
  bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < h_ && col < w_; }

  T& operator()(int row, int col) { return data_[static_cast<std::size_t>(row) * w_ + col]; }
  const T& operator()(int row, int col) const {
    return data_[static_cast<std::size_t>(row) * w_ + col];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Buffer<T>& storage() { return data_; }
  const Buffer<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  int h_ = 0, w_ = 0;
  Buffer<T> data_;
};

using Mask = Grid<unsigned char>;

/// Channel plane of a tensor copied into a grid.
template <typename T>
Grid<T> to_grid(const Tensor<T>& t, int n = 0, int c = 0) {
  Grid<T> g(t.h(), t.w());
  std::copy_n(t.plane_ptr(n, c), g.size(), g.data());
  return g;
}

template <typename T>
Tensor<T> to_tensor(const Grid<T>& g) {
  Tensor<T> t(1, 1, g.h(), g.w());
  std::copy_n(g.data(), g.size(), t.data());
  return t;
}

}  // namespace sekd
