#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "sekd/core/tensor.hpp"
#include "sekd/geometry/color.hpp"
#include "sekd/model/params.hpp"
#include "sekd/nn/ops.hpp"

namespace sekd::model {

enum class Mode {
  Train,  // batch statistics in normalization layers
  Eval,   // running statistics
};

template <typename T>
struct FeaturePyramid {
  Tensor<T> full;     // C1 × H × W
  Tensor<T> half;     // C2 × H/2 × W/2
  Tensor<T> quarter;  // C4 × H/4 × W/4
};

/// Which outputs a forward pass must produce.
struct Heads {
  bool detector = true;
  bool descriptor = true;
};

/// Activations kept by a training-mode forward for the backward pass.
template <typename T>
struct BlockCache {
  std::vector<nn::BatchNormCache<T>> norms;
  std::vector<Tensor<T>> activations;  // post-ReLU input of each conv
  int in_h = 0, in_w = 0;
};

template <typename T>
struct Tape {
  Mode mode = Mode::Eval;
  bool record = false;
  Heads heads;
  int padded_h = 0, padded_w = 0, out_h = 0, out_w = 0;
  Tensor<T> input;
  std::vector<BlockCache<T>> blocks;
  // detector head
  nn::BatchNormCache<T> n_coarse, n_fuse_half, n_half, n_fuse_full, n_out;
  Tensor<T> a_coarse, a_fuse_half, a_half, a_fuse_full, a_out;
  Tensor<T> prob_padded;
  // descriptor head
  BlockCache<T> desc_block;
  Tensor<T> desc_coarse, desc_up, desc_padded;
  std::vector<T> desc_norms;
  FeaturePyramid<T> pyramid;
  /// Batch statistics per normalization layer (training mode only).
  std::vector<nn::BatchStats> stats;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> prob;  // N × 2 × H × W (empty when the detector head is skipped)
  Tensor<T> desc;  // N × C × H × W, unit norm per pixel
  FeaturePyramid<T> pyramid;
  /// Descriptor head output before upsampling (N × C × H/4 × W/4).
  Tensor<T> desc_coarse;
};

namespace detail {

template <typename T>
Tensor<T> norm_forward(const NetworkParams<T>& p, const BatchNormLayer& l, const Tensor<T>& x,
                       Tape<T>& tape, nn::BatchNormCache<T>* cache) {
  if (tape.mode == Mode::Eval)
    return nn::batchnorm_forward_eval(x, p[l.gamma], p[l.beta], p[l.running_mean], p[l.running_var]);
  return nn::batchnorm_forward_train(x, p[l.gamma], p[l.beta], tape.record ? cache : nullptr,
                                     &tape.stats[l.stats_slot]);
}

template <typename T>
Tensor<T> conv(const NetworkParams<T>& p, const ConvLayer& l, const Tensor<T>& x) {
  return nn::conv2d_forward(x, p[l.weight], p[l.bias], l.spec);
}

template <typename T>
Tensor<T> deconv(const NetworkParams<T>& p, const ConvLayer& l, const Tensor<T>& x) {
  return nn::deconv2d_forward(x, p[l.weight], p[l.bias], l.spec);
}

template <typename T>
Tensor<T> block_forward(const NetworkParams<T>& p, const ResidualBlock& b, const Tensor<T>& x,
                        Tape<T>& tape, BlockCache<T>* cache) {
  const std::size_t depth = b.convs.size();
  std::vector<nn::BatchNormCache<T>> norms(depth);
  std::vector<Tensor<T>> acts(depth);
  Tensor<T> h = x;
  Tensor<T> shortcut;
  for (std::size_t i = 0; i < depth; ++i) {
    acts[i] = nn::relu(norm_forward(p, b.norms[i], h, tape, &norms[i]));
    if (i == 0) shortcut = b.has_projection ? conv(p, b.projection, acts[0]) : x;
    h = conv(p, b.convs[i], acts[i]);
  }
  h += shortcut;
  if (cache) {
    cache->norms = std::move(norms);
    cache->activations = std::move(acts);
    cache->in_h = x.h();
    cache->in_w = x.w();
  }
  return h;
}

template <typename T>
Tensor<T> block_backward(const NetworkParams<T>& p, const ResidualBlock& b, const BlockCache<T>& c,
                         const Tensor<T>& dy, std::vector<Tensor<T>>& g) {
  const std::size_t depth = b.convs.size();
  Tensor<T> dh = dy;
  Tensor<T> da_first;
  for (std::size_t k = depth; k-- > 0;) {
    Tensor<T> da;
    nn::conv2d_backward(c.activations[k], p[b.convs[k].weight], dh, b.convs[k].spec, &da,
                        g[b.convs[k].weight], g[b.convs[k].bias]);
    if (k == 0 && b.has_projection) {
      Tensor<T> dproj;
      nn::conv2d_backward(c.activations[0], p[b.projection.weight], dy, b.projection.spec, &dproj,
                          g[b.projection.weight], g[b.projection.bias]);
      da += dproj;
    }
    const Tensor<T> dn = nn::relu_backward(c.activations[k], da);
    dh = nn::batchnorm_backward(c.norms[k], p[b.norms[k].gamma], dn, g[b.norms[k].gamma],
                                g[b.norms[k].beta]);
  }
  if (!b.has_projection) dh += dy;
  return dh;
}

}  // namespace detail

/// Forward pass on an N×1×H×W batch. Inputs whose sides are not multiples of 4
/// are reflect-padded and the head outputs cropped back, unless `allow_pad` is
/// false, in which case they are rejected.
template <typename T>
ForwardOutput<T> forward_batch(const NetworkParams<T>& p, const Tensor<T>& images, Mode mode,
                               Heads heads = {}, Tape<T>* tape_out = nullptr, bool allow_pad = true) {
  if (images.c() != 1) throw ShapeError("network input must have one channel");
  if (!allow_pad && (images.h() % 4 || images.w() % 4))
    throw ShapeError("input size must be divisible by 4: " + images.shape_string());
  if (!images.all_finite()) throw NumericError("network input contains non-finite values");
  Tape<T> local;
  Tape<T>& tape = tape_out ? *tape_out : local;
  tape = Tape<T>{};
  tape.mode = mode;
  tape.record = tape_out != nullptr;
  tape.heads = heads;
  tape.stats.resize(p.layout().num_norms);
  tape.out_h = images.h();
  tape.out_w = images.w();

  Tensor<T> x = nn::reflect_pad_to_multiple(images, 4);
  tape.padded_h = x.h();
  tape.padded_w = x.w();
  const Layout& L = p.layout();
  const ArchConfig& arch = p.arch();

  Tensor<T> h = detail::conv(p, L.stem, x);
  if (tape.record) tape.input = std::move(x);
  tape.blocks.resize(L.blocks.size());
  FeaturePyramid<T> pyr;
  for (std::size_t i = 0; i < L.blocks.size(); ++i) {
    h = detail::block_forward(p, L.blocks[i], h, tape, tape.record ? &tape.blocks[i] : nullptr);
    const std::size_t per = arch.blocks_per_stage;
    if (i + 1 == per) pyr.full = h;
    if (i + 1 == 2 * per) pyr.half = h;
  }
  pyr.quarter = std::move(h);

  ForwardOutput<T> out;
  if (heads.detector) {
    const auto& d = L.detector;
    Tensor<T> a = nn::relu(detail::norm_forward(p, d.norm_coarse, pyr.quarter, tape, &tape.n_coarse));
    Tensor<T> up = detail::deconv(p, d.up_half, a);
    if (tape.record) tape.a_coarse = std::move(a);
    a = nn::relu(detail::norm_forward(p, d.norm_fuse_half, nn::concat_channels(up, pyr.half), tape,
                                      &tape.n_fuse_half));
    Tensor<T> f = detail::conv(p, d.fuse_half, a);
    if (tape.record) tape.a_fuse_half = std::move(a);
    a = nn::relu(detail::norm_forward(p, d.norm_half, f, tape, &tape.n_half));
    up = detail::deconv(p, d.up_full, a);
    if (tape.record) tape.a_half = std::move(a);
    a = nn::relu(detail::norm_forward(p, d.norm_fuse_full, nn::concat_channels(up, pyr.full), tape,
                                      &tape.n_fuse_full));
    f = detail::conv(p, d.fuse_full, a);
    if (tape.record) tape.a_fuse_full = std::move(a);
    a = nn::relu(detail::norm_forward(p, d.norm_out, f, tape, &tape.n_out));
    Tensor<T> logits = detail::conv(p, d.classifier, a);
    if (tape.record) tape.a_out = std::move(a);
    Tensor<T> prob = nn::softmax_channels(logits);
    out.prob = nn::crop(prob, tape.out_h, tape.out_w);
    if (tape.record) tape.prob_padded = std::move(prob);
  }
  if (heads.descriptor) {
    Tensor<T> coarse = detail::block_forward(p, L.descriptor.block, pyr.quarter, tape,
                                             tape.record ? &tape.desc_block : nullptr);
    Tensor<T> up = nn::upsample_bilinear(coarse, 4);
    Tensor<T> desc = nn::l2_normalize_channels(up, tape.record ? &tape.desc_norms : nullptr);
    out.desc = nn::crop(desc, tape.out_h, tape.out_w);
    out.desc_coarse = coarse;
    if (tape.record) {
      tape.desc_coarse = std::move(coarse);
      tape.desc_up = std::move(up);
      tape.desc_padded = std::move(desc);
    }
  }
  if (tape.record) tape.pyramid = pyr;
  out.pyramid = std::move(pyr);
  return out;
}

/// Backward pass through a recorded training forward. `dprob` / `ddesc` are
/// gradients w.r.t. the cropped outputs (empty tensors mean zero). Gradients
/// accumulate into `grads`, which is aligned with the parameters.
template <typename T>
void backward(const NetworkParams<T>& p, const Tape<T>& tape, const Tensor<T>& dprob,
              const Tensor<T>& ddesc, std::vector<Tensor<T>>& grads) {
  if (!tape.record) throw Error("backward requires a recorded forward pass");
  const Layout& L = p.layout();
  const ArchConfig& arch = p.arch();
  const std::size_t per = arch.blocks_per_stage;
  auto& g = grads;

  const auto& pyr = tape.pyramid;
  Tensor<T> d_full(pyr.full.n(), pyr.full.c(), pyr.full.h(), pyr.full.w());
  Tensor<T> d_half(pyr.half.n(), pyr.half.c(), pyr.half.h(), pyr.half.w());
  Tensor<T> d_quarter(pyr.quarter.n(), pyr.quarter.c(), pyr.quarter.h(), pyr.quarter.w());

  if (!dprob.empty()) {
    if (!tape.heads.detector) throw Error("backward: detector head was not run");
    const auto& d = L.detector;
    Tensor<T> dlogits = nn::softmax_channels_backward(
        tape.prob_padded, nn::uncrop(dprob, tape.padded_h, tape.padded_w));
    Tensor<T> da;
    nn::conv2d_backward(tape.a_out, p[d.classifier.weight], dlogits, d.classifier.spec, &da,
                        g[d.classifier.weight], g[d.classifier.bias]);
    Tensor<T> df = nn::batchnorm_backward(tape.n_out, p[d.norm_out.gamma],
                                          nn::relu_backward(tape.a_out, da), g[d.norm_out.gamma],
                                          g[d.norm_out.beta]);
    nn::conv2d_backward(tape.a_fuse_full, p[d.fuse_full.weight], df, d.fuse_full.spec, &da,
                        g[d.fuse_full.weight], g[d.fuse_full.bias]);
    Tensor<T> dcat = nn::batchnorm_backward(tape.n_fuse_full, p[d.norm_fuse_full.gamma],
                                            nn::relu_backward(tape.a_fuse_full, da),
                                            g[d.norm_fuse_full.gamma], g[d.norm_fuse_full.beta]);
    auto [dup, dskip] = nn::split_channels(dcat, arch.head_channels[1]);
    d_full += dskip;
    nn::deconv2d_backward(tape.a_half, p[d.up_full.weight], dup, d.up_full.spec, &da,
                          g[d.up_full.weight], g[d.up_full.bias]);
    df = nn::batchnorm_backward(tape.n_half, p[d.norm_half.gamma], nn::relu_backward(tape.a_half, da),
                                g[d.norm_half.gamma], g[d.norm_half.beta]);
    nn::conv2d_backward(tape.a_fuse_half, p[d.fuse_half.weight], df, d.fuse_half.spec, &da,
                        g[d.fuse_half.weight], g[d.fuse_half.bias]);
    dcat = nn::batchnorm_backward(tape.n_fuse_half, p[d.norm_fuse_half.gamma],
                                  nn::relu_backward(tape.a_fuse_half, da), g[d.norm_fuse_half.gamma],
                                  g[d.norm_fuse_half.beta]);
    auto [dup2, dskip2] = nn::split_channels(dcat, arch.head_channels[0]);
    d_half += dskip2;
    nn::deconv2d_backward(tape.a_coarse, p[d.up_half.weight], dup2, d.up_half.spec, &da,
                          g[d.up_half.weight], g[d.up_half.bias]);
    d_quarter += nn::batchnorm_backward(tape.n_coarse, p[d.norm_coarse.gamma],
                                        nn::relu_backward(tape.a_coarse, da), g[d.norm_coarse.gamma],
                                        g[d.norm_coarse.beta]);
  }
  if (!ddesc.empty()) {
    if (!tape.heads.descriptor) throw Error("backward: descriptor head was not run");
    Tensor<T> dnorm = nn::l2_normalize_backward(tape.desc_padded, tape.desc_norms,
                                                nn::uncrop(ddesc, tape.padded_h, tape.padded_w));
    Tensor<T> dcoarse = nn::upsample_bilinear_backward(dnorm, tape.desc_coarse.h(),
                                                       tape.desc_coarse.w(), 4);
    d_quarter += detail::block_backward(p, L.descriptor.block, tape.desc_block, dcoarse, g);
  }

  Tensor<T> dh = std::move(d_quarter);
  for (std::size_t i = L.blocks.size(); i-- > 0;) {
    if (i + 1 == 2 * per) dh += d_half;
    if (i + 1 == per) dh += d_full;
    dh = detail::block_backward(p, L.blocks[i], tape.blocks[i], dh, g);
  }
  nn::conv2d_backward<T>(tape.input, p[L.stem.weight], dh, L.stem.spec, nullptr, g[L.stem.weight],
                         g[L.stem.bias]);
}

/// Folds the batch statistics of a training forward into the running buffers.
template <typename T>
void apply_batch_stats(NetworkParams<T>& p, const Tape<T>& tape) {
  if (tape.mode != Mode::Train) return;
  auto visit = [&](const BatchNormLayer& l) {
    const auto& s = tape.stats[l.stats_slot];
    if (s.mean.empty()) return;
    auto& rm = p[l.running_mean];
    auto& rv = p[l.running_var];
    for (int c = 0; c < l.channels; ++c) {
      rm.data()[c] = static_cast<T>((1 - nn::kBatchNormMomentum) * rm.data()[c] +
                                    nn::kBatchNormMomentum * s.mean[c]);
      rv.data()[c] = static_cast<T>((1 - nn::kBatchNormMomentum) * rv.data()[c] +
                                    nn::kBatchNormMomentum * s.var_unbiased[c]);
    }
  };
  const Layout& L = p.layout();
  for (const auto& b : L.blocks)
    for (const auto& n : b.norms) visit(n);
  for (const auto& n : L.descriptor.block.norms) visit(n);
  const auto& d = L.detector;
  for (const auto* n : {&d.norm_coarse, &d.norm_fuse_half, &d.norm_half, &d.norm_fuse_full, &d.norm_out})
    visit(*n);
}

// ---------------------------------------------------------------------------
// Single-image inference entry points.

template <typename T>
Tensor<T> image_batch(const geometry::Image& img) {
  Tensor<T> t(1, 1, img.h(), img.w());
  for (std::size_t i = 0; i < img.size(); ++i) t.data()[i] = static_cast<T>(img.data()[i]);
  return t;
}

template <typename T>
Tensor<T> image_batch(const std::vector<geometry::Image>& imgs) {
  if (imgs.empty()) throw ShapeError("empty image batch");
  Tensor<T> t(static_cast<int>(imgs.size()), 1, imgs[0].h(), imgs[0].w());
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    if (!imgs[n].same_shape(imgs[0])) throw ShapeError("image batch: mismatched sizes");
    for (std::size_t i = 0; i < imgs[n].size(); ++i)
      t.sample_ptr(static_cast<int>(n))[i] = static_cast<T>(imgs[n].data()[i]);
  }
  return t;
}

/// Backbone features of one image; H and W must be divisible by 4 unless
/// `allow_pad` is set.
template <typename T>
FeaturePyramid<T> backbone_forward(const NetworkParams<T>& p, const geometry::Image& img,
                                   bool allow_pad = false) {
  return forward_batch(p, image_batch<T>(img), Mode::Eval, Heads{false, false}, static_cast<Tape<T>*>(nullptr), allow_pad)
      .pyramid;
}

/// Detector head on a feature pyramid (evaluation statistics).
template <typename T>
Tensor<T> detector_forward(const NetworkParams<T>& p, const FeaturePyramid<T>& pyr) {
  const auto& d = p.layout().detector;
  auto bn = [&](const BatchNormLayer& l, const Tensor<T>& x) {
    return nn::relu(nn::batchnorm_forward_eval(x, p[l.gamma], p[l.beta], p[l.running_mean],
                                               p[l.running_var]));
  };
  Tensor<T> up = detail::deconv(p, d.up_half, bn(d.norm_coarse, pyr.quarter));
  Tensor<T> f = detail::conv(p, d.fuse_half, bn(d.norm_fuse_half, nn::concat_channels(up, pyr.half)));
  up = detail::deconv(p, d.up_full, bn(d.norm_half, f));
  f = detail::conv(p, d.fuse_full, bn(d.norm_fuse_full, nn::concat_channels(up, pyr.full)));
  return nn::softmax_channels(detail::conv(p, d.classifier, bn(d.norm_out, f)));
}

/// Descriptor head on a feature pyramid (evaluation statistics).
template <typename T>
Tensor<T> descriptor_forward(const NetworkParams<T>& p, const FeaturePyramid<T>& pyr) {
  Tape<T> tape;
  tape.mode = Mode::Eval;
  Tensor<T> coarse = detail::block_forward(p, p.layout().descriptor.block, pyr.quarter, tape, static_cast<BlockCache<T>*>(nullptr));
  return nn::l2_normalize_channels(nn::upsample_bilinear(coarse, 4));
}

/// Probability and descriptor maps for one image (evaluation statistics).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> forward(const NetworkParams<T>& p, const geometry::Image& img) {
  auto out = forward_batch(p, image_batch<T>(img), Mode::Eval);
  return {std::move(out.prob), std::move(out.desc)};
}

}  // namespace sekd::model
