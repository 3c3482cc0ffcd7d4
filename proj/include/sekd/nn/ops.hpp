#pragma once

// Forward/backward kernels for the layers the network uses. All kernels work
// on NCHW tensors; GEMMs go through Eigen on row-major maps.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "sekd/core/error.hpp"
#include "sekd/core/tensor.hpp"

namespace sekd::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int channels, height, width;  // input image
  int kernel, stride, pad;
  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h() * out_w(); }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * oh * ow;
        const T* src = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* row = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(row, ow, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : T(0);
          }
        }
      }
}

/// Adjoint of im2col: scatters columns back into (accumulates onto) img.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* src =
            col + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * oh * ow;
        T* dst = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const T* srow = src + static_cast<std::size_t>(oy) * ow;
          T* drow = dst + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
}

struct ConvSpec {
  int cin, cout, kernel, stride, pad;
};

/// y = W * x + b. weight: (cout, cin, k, k); bias: (1, 1, 1, cout).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         const ConvSpec& s) {
  if (x.c() != s.cin) throw ShapeError("conv2d: channel mismatch " + x.shape_string());
  const ConvGeometry g{s.cin, x.h(), x.w(), s.kernel, s.stride, s.pad};
  const int oh = g.out_h(), ow = g.out_w();
  Tensor<T> y(x.n(), s.cout, oh, ow);
  ConstMatMap<T> wm(weight.data(), s.cout, g.rows());
  const bool direct = s.kernel == 1 && s.stride == 1 && s.pad == 0;
  Buffer<T> col(direct ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
  for (int n = 0; n < x.n(); ++n) {
    MatMap<T> ym(y.sample_ptr(n), s.cout, g.cols());
    if (direct) {
      ym.noalias() = wm * ConstMatMap<T>(x.sample_ptr(n), s.cin, g.cols());
    } else {
      im2col(x.sample_ptr(n), g, col.data());
      ym.noalias() = wm * ConstMatMap<T>(col.data(), g.rows(), g.cols());
    }
    for (int c = 0; c < s.cout; ++c) ym.row(c).array() += bias.data()[c];
  }
  return y;
}

/// Accumulates dW, db and (if dx != nullptr) writes dx.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     const ConvSpec& s, Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>& dbias) {
  const ConvGeometry g{s.cin, x.h(), x.w(), s.kernel, s.stride, s.pad};
  ConstMatMap<T> wm(weight.data(), s.cout, g.rows());
  MatMap<T> dwm(dweight.data(), s.cout, g.rows());
  const bool direct = s.kernel == 1 && s.stride == 1 && s.pad == 0;
  Buffer<T> col(direct ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
  if (dx) *dx = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  for (int n = 0; n < x.n(); ++n) {
    ConstMatMap<T> dym(dy.sample_ptr(n), s.cout, g.cols());
    for (int c = 0; c < s.cout; ++c) dbias.data()[c] += dym.row(c).sum();
    if (direct) {
      ConstMatMap<T> xm(x.sample_ptr(n), s.cin, g.cols());
      dwm.noalias() += dym * xm.transpose();
      if (dx) MatMap<T>(dx->sample_ptr(n), s.cin, g.cols()).noalias() = wm.transpose() * dym;
    } else {
      im2col(x.sample_ptr(n), g, col.data());
      MatMap<T> cm(col.data(), g.rows(), g.cols());
      dwm.noalias() += dym * cm.transpose();
      if (dx) {
        cm.noalias() = wm.transpose() * dym;
        col2im(col.data(), g, dx->sample_ptr(n));
      }
    }
  }
}

/// Transposed convolution; output size (in-1)*stride - 2*pad + kernel.
/// weight: (cin, cout, k, k); bias: (1, 1, 1, cout).
template <typename T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& s) {
  if (x.c() != s.cin) throw ShapeError("deconv2d: channel mismatch " + x.shape_string());
  const int oh = (x.h() - 1) * s.stride - 2 * s.pad + s.kernel;
  const int ow = (x.w() - 1) * s.stride - 2 * s.pad + s.kernel;
  const ConvGeometry g{s.cout, oh, ow, s.kernel, s.stride, s.pad};
  if (g.out_h() != x.h() || g.out_w() != x.w()) throw ShapeError("deconv2d: geometry mismatch");
  Tensor<T> y(x.n(), s.cout, oh, ow);
  ConstMatMap<T> wm(weight.data(), s.cin, g.rows());
  Buffer<T> col(static_cast<std::size_t>(g.rows()) * g.cols());
  for (int n = 0; n < x.n(); ++n) {
    MatMap<T> cm(col.data(), g.rows(), g.cols());
    cm.noalias() = wm.transpose() * ConstMatMap<T>(x.sample_ptr(n), s.cin, g.cols());
    col2im(col.data(), g, y.sample_ptr(n));
    for (int c = 0; c < s.cout; ++c) {
      T* p = y.plane_ptr(n, c);
      for (std::size_t i = 0; i < y.plane(); ++i) p[i] += bias.data()[c];
    }
  }
  return y;
}

template <typename T>
void deconv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                       const ConvSpec& s, Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>& dbias) {
  const ConvGeometry g{s.cout, dy.h(), dy.w(), s.kernel, s.stride, s.pad};
  ConstMatMap<T> wm(weight.data(), s.cin, g.rows());
  MatMap<T> dwm(dweight.data(), s.cin, g.rows());
  Buffer<T> col(static_cast<std::size_t>(g.rows()) * g.cols());
  if (dx) *dx = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < s.cout; ++c) {
      const T* p = dy.plane_ptr(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < dy.plane(); ++i) acc += p[i];
      dbias.data()[c] += acc;
    }
    im2col(dy.sample_ptr(n), g, col.data());
    ConstMatMap<T> cm(col.data(), g.rows(), g.cols());
    dwm.noalias() += ConstMatMap<T>(x.sample_ptr(n), s.cin, g.cols()) * cm.transpose();
    if (dx) MatMap<T>(dx->sample_ptr(n), s.cin, g.cols()).noalias() = wm * cm;
  }
}

// ---------------------------------------------------------------------------
// Batch normalization

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> invstd;
};

/// Batch statistics observed by a training-mode forward, applied to the
/// running buffers after the step.
struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var_unbiased;
};

/// Training mode: normalizes with per-channel statistics over N×H×W.
template <typename T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                  BatchNormCache<T>* cache, BatchStats* stats) {
  const int C = x.c();
  const std::size_t m = static_cast<std::size_t>(x.n()) * x.plane();
  Tensor<T> y(x.n(), C, x.h(), x.w());
  Tensor<T> xhat(x.n(), C, x.h(), x.w());
  std::vector<T> invstd(C);
  if (stats) {
    stats->mean.assign(C, 0.0);
    stats->var_unbiased.assign(C, 0.0);
  }
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane_ptr(n, c);
      for (std::size_t i = 0; i < x.plane(); ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane_ptr(n, c);
      for (std::size_t i = 0; i < x.plane(); ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    invstd[c] = static_cast<T>(is);
    if (stats) {
      stats->mean[c] = mean;
      stats->var_unbiased[c] = m > 1 ? sq / static_cast<double>(m - 1) : var;
    }
    const T g = gamma.data()[c], b = beta.data()[c];
    const T mu = static_cast<T>(mean);
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane_ptr(n, c);
      T* xh = xhat.plane_ptr(n, c);
      T* q = y.plane_ptr(n, c);
      for (std::size_t i = 0; i < x.plane(); ++i) {
        xh[i] = (p[i] - mu) * invstd[c];
        q[i] = g * xh[i] + b;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_forward_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                 const Tensor<T>& running_mean, const Tensor<T>& running_var) {
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  for (int c = 0; c < x.c(); ++c) {
    const T scale =
        gamma.data()[c] / static_cast<T>(std::sqrt(double(running_var.data()[c]) + kBatchNormEps));
    const T shift = beta.data()[c] - running_mean.data()[c] * scale;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane_ptr(n, c);
      T* q = y.plane_ptr(n, c);
      for (std::size_t i = 0; i < x.plane(); ++i) q[i] = p[i] * scale + shift;
    }
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                             const Tensor<T>& dy, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const auto& xhat = cache.xhat;
  const double m = static_cast<double>(xhat.n()) * xhat.plane();
  Tensor<T> dx(xhat.n(), xhat.c(), xhat.h(), xhat.w());
  for (int c = 0; c < xhat.c(); ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < xhat.n(); ++n) {
      const T* g = dy.plane_ptr(n, c);
      const T* xh = xhat.plane_ptr(n, c);
      for (std::size_t i = 0; i < xhat.plane(); ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    dgamma.data()[c] += static_cast<T>(sum_dy_xhat);
    dbeta.data()[c] += static_cast<T>(sum_dy);
    const T k = gamma.data()[c] * cache.invstd[c];
    const T mean_dy = static_cast<T>(sum_dy / m);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
    for (int n = 0; n < xhat.n(); ++n) {
      const T* g = dy.plane_ptr(n, c);
      const T* xh = xhat.plane_ptr(n, c);
      T* d = dx.plane_ptr(n, c);
      for (std::size_t i = 0; i < xhat.plane(); ++i) d[i] = k * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise and layout ops

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.storage()) v = v > T(0) ? v : T(0);
  return y;
}

/// dy masked by the forward output y (or input, equivalently) being positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(y.data()[i] > T(0))) dx.data()[i] = T(0);
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) throw ShapeError("concat: shape mismatch");
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.sample_ptr(n), static_cast<std::size_t>(a.c()) * a.plane(), y.sample_ptr(n));
    std::copy_n(b.sample_ptr(n), static_cast<std::size_t>(b.c()) * b.plane(), y.plane_ptr(n, a.c()));
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int ca) {
  const int cb = dy.c() - ca;
  Tensor<T> da(dy.n(), ca, dy.h(), dy.w()), db(dy.n(), cb, dy.h(), dy.w());
  for (int n = 0; n < dy.n(); ++n) {
    std::copy_n(dy.sample_ptr(n), static_cast<std::size_t>(ca) * dy.plane(), da.sample_ptr(n));
    std::copy_n(dy.plane_ptr(n, ca), static_cast<std::size_t>(cb) * dy.plane(), db.sample_ptr(n));
  }
  return {std::move(da), std::move(db)};
}

/// Interpolation taps for bilinear upsampling with half-pixel centers.
struct UpsampleTaps {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};

inline UpsampleTaps upsample_taps(int in, int factor) {
  UpsampleTaps t;
  const int out = in * factor;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.resize(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    t.i0[o] = i0;
    t.i1[o] = std::min(i0 + 1, in - 1);
    t.frac[o] = src - i0;
  }
  return t;
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int factor) {
  const auto ty = upsample_taps(x.h(), factor);
  const auto tx = upsample_taps(x.w(), factor);
  const int oh = x.h() * factor, ow = x.w() * factor;
  Tensor<T> y(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane_ptr(n, c);
      T* q = y.plane_ptr(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        const T* r0 = p + static_cast<std::size_t>(ty.i0[oy]) * x.w();
        const T* r1 = p + static_cast<std::size_t>(ty.i1[oy]) * x.w();
        const T fy = static_cast<T>(ty.frac[oy]);
        for (int ox = 0; ox < ow; ++ox) {
          const T fx = static_cast<T>(tx.frac[ox]);
          const int a = tx.i0[ox], b = tx.i1[ox];
          const T top = r0[a] + fx * (r0[b] - r0[a]);
          const T bot = r1[a] + fx * (r1[b] - r1[a]);
          q[static_cast<std::size_t>(oy) * ow + ox] = top + fy * (bot - top);
        }
      }
    }
  return y;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& dy, int in_h, int in_w, int factor) {
  const auto ty = upsample_taps(in_h, factor);
  const auto tx = upsample_taps(in_w, factor);
  Tensor<T> dx(dy.n(), dy.c(), in_h, in_w);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      const T* g = dy.plane_ptr(n, c);
      T* d = dx.plane_ptr(n, c);
      for (int oy = 0; oy < dy.h(); ++oy) {
        T* r0 = d + static_cast<std::size_t>(ty.i0[oy]) * in_w;
        T* r1 = d + static_cast<std::size_t>(ty.i1[oy]) * in_w;
        const T fy = static_cast<T>(ty.frac[oy]);
        for (int ox = 0; ox < dy.w(); ++ox) {
          const T fx = static_cast<T>(tx.frac[ox]);
          const T v = g[static_cast<std::size_t>(oy) * dy.w() + ox];
          const int a = tx.i0[ox], b = tx.i1[ox];
          r0[a] += (1 - fy) * (1 - fx) * v;
          r0[b] += (1 - fy) * fx * v;
          r1[a] += fy * (1 - fx) * v;
          r1[b] += fy * fx * v;
        }
      }
    }
  return dx;
}

/// Softmax over the channel axis at every pixel.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  const std::size_t hw = x.plane();
  for (int n = 0; n < x.n(); ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      T mx = x.plane_ptr(n, 0)[i];
      for (int c = 1; c < x.c(); ++c) mx = std::max(mx, x.plane_ptr(n, c)[i]);
      T sum = 0;
      for (int c = 0; c < x.c(); ++c) {
        const T e = std::exp(x.plane_ptr(n, c)[i] - mx);
        y.plane_ptr(n, c)[i] = e;
        sum += e;
      }
      for (int c = 0; c < x.c(); ++c) y.plane_ptr(n, c)[i] /= sum;
    }
  return y;
}

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.n(), y.c(), y.h(), y.w());
  const std::size_t hw = y.plane();
  for (int n = 0; n < y.n(); ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      T dot = 0;
      for (int c = 0; c < y.c(); ++c) dot += y.plane_ptr(n, c)[i] * dy.plane_ptr(n, c)[i];
      for (int c = 0; c < y.c(); ++c)
        dx.plane_ptr(n, c)[i] = y.plane_ptr(n, c)[i] * (dy.plane_ptr(n, c)[i] - dot);
    }
  return dx;
}

inline constexpr double kNormalizeEps = 1e-12;

/// Per-pixel L2 normalization over channels. `norms` receives ‖x‖ per pixel.
template <typename T>
Tensor<T> l2_normalize_channels(const Tensor<T>& x, std::vector<T>* norms = nullptr) {
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  const std::size_t hw = x.plane();
  if (norms) norms->assign(static_cast<std::size_t>(x.n()) * hw, T(0));
  std::vector<double> acc(hw);
  for (int n = 0; n < x.n(); ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane_ptr(n, c);
      for (std::size_t i = 0; i < hw; ++i) acc[i] += double(p[i]) * p[i];
    }
    for (std::size_t i = 0; i < hw; ++i) acc[i] = std::max(std::sqrt(acc[i]), kNormalizeEps);
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane_ptr(n, c);
      T* q = y.plane_ptr(n, c);
      for (std::size_t i = 0; i < hw; ++i) q[i] = static_cast<T>(p[i] / acc[i]);
    }
    if (norms)
      for (std::size_t i = 0; i < hw; ++i) (*norms)[n * hw + i] = static_cast<T>(acc[i]);
  }
  return y;
}

/// Backward of y = x / ‖x‖ given y and the forward norms.
template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& y, const std::vector<T>& norms, const Tensor<T>& dy) {
  Tensor<T> dx(y.n(), y.c(), y.h(), y.w());
  const std::size_t hw = y.plane();
  std::vector<double> dot(hw);
  for (int n = 0; n < y.n(); ++n) {
    std::fill(dot.begin(), dot.end(), 0.0);
    for (int c = 0; c < y.c(); ++c) {
      const T* p = y.plane_ptr(n, c);
      const T* g = dy.plane_ptr(n, c);
      for (std::size_t i = 0; i < hw; ++i) dot[i] += double(p[i]) * g[i];
    }
    for (int c = 0; c < y.c(); ++c) {
      const T* p = y.plane_ptr(n, c);
      const T* g = dy.plane_ptr(n, c);
      T* d = dx.plane_ptr(n, c);
      for (std::size_t i = 0; i < hw; ++i)
        d[i] = static_cast<T>((g[i] - p[i] * dot[i]) / norms[n * hw + i]);
    }
  }
  return dx;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  Tensor<T> y = a;
  y += b;
  return y;
}

/// Top-left crop of every plane to h×w.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, int h, int w) {
  if (h == x.h() && w == x.w()) return x;
  Tensor<T> y(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int r = 0; r < h; ++r)
        std::copy_n(x.plane_ptr(n, c) + static_cast<std::size_t>(r) * x.w(), w,
                    y.plane_ptr(n, c) + static_cast<std::size_t>(r) * w);
  return y;
}

/// Adjoint of crop: embeds dy in a zero tensor of size h×w.
template <typename T>
Tensor<T> uncrop(const Tensor<T>& dy, int h, int w) {
  if (h == dy.h() && w == dy.w()) return dy;
  Tensor<T> y(dy.n(), dy.c(), h, w);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c)
      for (int r = 0; r < dy.h(); ++r)
        std::copy_n(dy.plane_ptr(n, c) + static_cast<std::size_t>(r) * dy.w(), dy.w(),
                    y.plane_ptr(n, c) + static_cast<std::size_t>(r) * w);
  return y;
}

/// Reflect-pads the bottom/right edges so H and W become multiples of `m`.
template <typename T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& x, int m) {
  const int h = (x.h() + m - 1) / m * m;
  const int w = (x.w() + m - 1) / m * m;
  if (h == x.h() && w == x.w()) return x;
  if (h - x.h() >= x.h() || w - x.w() >= x.w()) throw ShapeError("image too small to reflect-pad");
  auto reflect = [](int i, int n) { return i < n ? i : 2 * (n - 1) - i; };
  Tensor<T> y(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q) y(n, c, r, q) = x(n, c, reflect(r, x.h()), reflect(q, x.w()));
  return y;
}

}  // namespace sekd::nn
