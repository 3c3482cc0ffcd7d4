#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sekd/core/error.hpp"
#include "sekd/core/random.hpp"
#include "sekd/core/tensor.hpp"
#include "sekd/nn/ops.hpp"

namespace sekd::model {

/// Channel plan of the network. The backbone is a stem convolution followed
/// by three stages of pre-activation residual blocks at strides 1, 2 and 4.
struct ArchConfig {
  int stem_channels = 32;
  std::array<int, 3> stage_channels{32, 64, 128};
  int blocks_per_stage = 3;
  /// Bottleneck blocks (1×1, 3×3, 1×1) with inner width out/bottleneck_ratio;
  /// otherwise basic blocks (3×3, 3×3).
  bool bottleneck = true;
  int bottleneck_ratio = 2;
  int descriptor_dim = 128;
  /// Widths of the detector head at 1/2 and full resolution.
  std::array<int, 2> head_channels{64, 32};
  int deconv_kernel = 4;

  void validate() const {
    if (stem_channels < 1 || descriptor_dim < 1 || blocks_per_stage < 1)
      throw ConfigError("arch: channel counts must be positive");
    for (int c : stage_channels)
      if (c < 1) throw ConfigError("arch: stage width must be positive");
    for (int c : head_channels)
      if (c < 1) throw ConfigError("arch: head width must be positive");
    if (bottleneck && bottleneck_ratio < 1) throw ConfigError("arch: bottleneck ratio must be >= 1");
    if (deconv_kernel != 2 && deconv_kernel != 4) throw ConfigError("arch: deconv kernel must be 2 or 4");
  }

  /// Tiny plan used for finite-difference gradient checks.
  static ArchConfig tiny(int width = 4) {
    ArchConfig a;
    a.stem_channels = width;
    a.stage_channels = {width, width, width};
    a.blocks_per_stage = 3;
    a.descriptor_dim = width;
    a.head_channels = {width, width};
    return a;
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct ConvLayer {
  nn::ConvSpec spec{};
  std::size_t weight = 0, bias = 0;
};

struct BatchNormLayer {
  int channels = 0;
  std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  int stats_slot = 0;  // position in the per-forward statistics list
};

/// Pre-activation residual block.
struct ResidualBlock {
  bool bottleneck = true;
  int cin = 0, cout = 0, stride = 1;
  std::vector<BatchNormLayer> norms;  // one per convolution on the main path
  std::vector<ConvLayer> convs;
  bool has_projection = false;
  ConvLayer projection;
};

struct DetectorHead {
  BatchNormLayer norm_coarse, norm_fuse_half, norm_half, norm_fuse_full, norm_out;
  ConvLayer up_half, fuse_half, up_full, fuse_full, classifier;
};

struct DescriptorHead {
  ResidualBlock block;
};

struct Layout {
  ConvLayer stem;
  std::vector<ResidualBlock> blocks;  // 3 stages × blocks_per_stage
  DetectorHead detector;
  DescriptorHead descriptor;
  int num_norms = 0;
};

/// Training bookkeeping carried with a parameter set.
struct ParamsMeta {
  int iteration = 0;
  int epoch = 0;
  std::string phase = "init";
  std::int64_t step = 0;
};

/// Named real-valued arrays of the network (trainable weights plus the
/// normalization running statistics) together with the layout that indexes them.
template <typename T>
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(const ArchConfig& arch);

  const ArchConfig& arch() const { return arch_; }
  const Layout& layout() const { return layout_; }
  ParamsMeta& meta() { return meta_; }
  const ParamsMeta& meta() const { return meta_; }

  std::size_t count() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool trainable(std::size_t i) const { return trainable_[i]; }
  Tensor<T>& operator[](std::size_t i) { return values_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return values_[i]; }
  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter: " + name);
    return it->second;
  }

  /// Number of trainable scalars.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (trainable_[i]) n += values_[i].size();
    return n;
  }

  bool all_finite() const {
    for (const auto& v : values_)
      if (!v.all_finite()) return false;
    return true;
  }

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out(arch_);
    for (std::size_t i = 0; i < values_.size(); ++i) out[i] = values_[i].template cast<U>();
    out.meta() = meta_;
    return out;
  }

  /// Zero-initialized gradient buffers aligned with the parameters.
  std::vector<Tensor<T>> zeros_like() const {
    std::vector<Tensor<T>> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.emplace_back(v.n(), v.c(), v.h(), v.w());
    return g;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (!(a.arch_ == b.arch_) || a.values_.size() != b.values_.size()) return false;
    for (std::size_t i = 0; i < a.values_.size(); ++i)
      if (!a.values_[i].same_shape(b.values_[i]) || a.values_[i].storage() != b.values_[i].storage())
        return false;
    return true;
  }

 private:
  std::size_t add(const std::string& name, Tensor<T> value, bool trainable) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
    trainable_.push_back(trainable);
    return values_.size() - 1;
  }
  ConvLayer add_conv(const std::string& name, nn::ConvSpec spec, bool transposed = false);
  BatchNormLayer add_norm(const std::string& name, int channels);
  ResidualBlock add_block(const std::string& name, int cin, int cout, int stride);

  ArchConfig arch_;
  Layout layout_;
  ParamsMeta meta_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::vector<bool> trainable_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
ConvLayer NetworkParams<T>::add_conv(const std::string& name, nn::ConvSpec spec, bool transposed) {
  ConvLayer l;
  l.spec = spec;
  const int k = spec.kernel;
  l.weight = transposed ? add(name + ".weight", Tensor<T>(spec.cin, spec.cout, k, k), true)
                        : add(name + ".weight", Tensor<T>(spec.cout, spec.cin, k, k), true);
  l.bias = add(name + ".bias", Tensor<T>(1, 1, 1, spec.cout), true);
  return l;
}

template <typename T>
BatchNormLayer NetworkParams<T>::add_norm(const std::string& name, int channels) {
  BatchNormLayer l;
  l.channels = channels;
  l.gamma = add(name + ".gamma", Tensor<T>(1, 1, 1, channels, T(1)), true);
  l.beta = add(name + ".beta", Tensor<T>(1, 1, 1, channels, T(0)), true);
  l.running_mean = add(name + ".running_mean", Tensor<T>(1, 1, 1, channels, T(0)), false);
  l.running_var = add(name + ".running_var", Tensor<T>(1, 1, 1, channels, T(1)), false);
  l.stats_slot = layout_.num_norms++;
  return l;
}

template <typename T>
ResidualBlock NetworkParams<T>::add_block(const std::string& name, int cin, int cout, int stride) {
  ResidualBlock b;
  b.bottleneck = arch_.bottleneck;
  b.cin = cin;
  b.cout = cout;
  b.stride = stride;
  if (arch_.bottleneck) {
    const int mid = std::max(1, cout / arch_.bottleneck_ratio);
    b.norms.push_back(add_norm(name + ".norm1", cin));
    b.convs.push_back(add_conv(name + ".conv1", {cin, mid, 1, 1, 0}));
    b.norms.push_back(add_norm(name + ".norm2", mid));
    b.convs.push_back(add_conv(name + ".conv2", {mid, mid, 3, stride, 1}));
    b.norms.push_back(add_norm(name + ".norm3", mid));
    b.convs.push_back(add_conv(name + ".conv3", {mid, cout, 1, 1, 0}));
  } else {
    b.norms.push_back(add_norm(name + ".norm1", cin));
    b.convs.push_back(add_conv(name + ".conv1", {cin, cout, 3, stride, 1}));
    b.norms.push_back(add_norm(name + ".norm2", cout));
    b.convs.push_back(add_conv(name + ".conv2", {cout, cout, 3, 1, 1}));
  }
  if (cin != cout || stride != 1) {
    b.has_projection = true;
    b.projection = add_conv(name + ".proj", {cin, cout, 1, stride, 0});
  }
  return b;
}

template <typename T>
NetworkParams<T>::NetworkParams(const ArchConfig& arch) : arch_(arch) {
  arch.validate();
  layout_.stem = add_conv("stem", {1, arch.stem_channels, 3, 1, 1});
  int cin = arch.stem_channels;
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < arch.blocks_per_stage; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "backbone.block" + std::to_string(s * arch.blocks_per_stage + b + 1);
      layout_.blocks.push_back(add_block(name, cin, arch.stage_channels[s], stride));
      cin = arch.stage_channels[s];
    }
  }
  const int c1 = arch.stage_channels[0], c2 = arch.stage_channels[1], c4 = arch.stage_channels[2];
  const int h2 = arch.head_channels[0], h1 = arch.head_channels[1];
  const int k = arch.deconv_kernel, p = (k - 2) / 2;
  auto& d = layout_.detector;
  d.norm_coarse = add_norm("detector.norm_coarse", c4);
  d.up_half = add_conv("detector.up_half", {c4, h2, k, 2, p}, true);
  d.norm_fuse_half = add_norm("detector.norm_fuse_half", h2 + c2);
  d.fuse_half = add_conv("detector.fuse_half", {h2 + c2, h2, 3, 1, 1});
  d.norm_half = add_norm("detector.norm_half", h2);
  d.up_full = add_conv("detector.up_full", {h2, h1, k, 2, p}, true);
  d.norm_fuse_full = add_norm("detector.norm_fuse_full", h1 + c1);
  d.fuse_full = add_conv("detector.fuse_full", {h1 + c1, h1, 3, 1, 1});
  d.norm_out = add_norm("detector.norm_out", h1);
  d.classifier = add_conv("detector.classifier", {h1, 2, 1, 1, 0});
  layout_.descriptor.block = add_block("descriptor.block", c4, arch.descriptor_dim, 1);
}

/// Fan-in scaled normal initialization of convolution weights, zero biases,
/// unit/zero normalization scale/shift.
template <typename T>
NetworkParams<T> init_params(Rng& rng, const ArchConfig& arch) {
  NetworkParams<T> p(arch);
  for (std::size_t i = 0; i < p.count(); ++i) {
    const std::string& n = p.name(i);
    if (n.size() < 7 || n.compare(n.size() - 7, 7, ".weight") != 0) continue;
    auto& w = p[i];
    // Regular conv weights are (cout, cin, k, k); transposed are (cin, cout, k, k)
    // where each output receives cin * (k/stride)^2 taps.
    const bool transposed = n.find(".up_") != std::string::npos;
    const double fan_in = transposed ? double(w.n()) * (w.h() / 2) * (w.w() / 2)
                                     : double(w.c()) * w.h() * w.w();
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : w.storage()) v = static_cast<T>(rng.normal() * std);
  }
  return p;
}

}  // namespace sekd::model
