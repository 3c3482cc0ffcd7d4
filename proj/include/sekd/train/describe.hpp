#pragma once

#include <tuple>

#include "sekd/nn/adam.hpp"
#include "sekd/train/losses.hpp"
#include "sekd/train/pairs.hpp"

namespace sekd::train {

struct DescTrainConfig {
  double margin = 0.8;
  double alpha = 1.0;  // weight of the detector-preservation term
  int exclusion_radius = 4;
  int max_pairs = 1000;
  int border = 4;

  void validate() const {
    if (!(margin > 0.0)) throw ConfigError("descriptor margin must be > 0");
    if (alpha < 0.0) throw ConfigError("descriptor alpha must be >= 0");
    if (exclusion_radius < 0 || border < 0) throw ConfigError("descriptor radii must be >= 0");
    if (max_pairs < 0) throw ConfigError("descriptor max_pairs must be >= 0");
  }
  TripletConfig triplet() const { return {margin, exclusion_radius}; }
};

struct DescLossRecord {
  double des = 0.0;      // triplet term
  double det_reg = 0.0;  // detector preservation term
  double total = 0.0;
  int pairs = 0;
  int active = 0;
  bool skipped = false;
};

/// Objective L = L_des + α·L'_det on a prepared pair. With `grads`, the full
/// parameter gradient is accumulated and the forward tape is left in `tape`.
template <typename T>
DescLossRecord descriptor_objective(const model::NetworkParams<T>& p, const FrozenOutputs<T>& frozen,
                                    const PairSample<T>& s, const DescTrainConfig& cfg,
                                    std::vector<Tensor<T>>* grads = nullptr,
                                    model::Tape<T>* tape = nullptr) {
  DescLossRecord rec;
  rec.pairs = static_cast<int>(s.points_a.size());
  if (rec.pairs < 2) {
    rec.skipped = true;
    return rec;
  }
  model::Tape<T> local;
  model::Tape<T>* tp = grads ? (tape ? tape : &local) : nullptr;
  auto out = model::forward_batch(p, s.images, model::Mode::Train, {}, tp);
  const auto fa = sample_descriptors(out.desc, 0, s.points_a);
  const auto fb = sample_descriptors(out.desc, 1, s.points_b);
  auto tr = triplet_hard_loss(fa, fb, s.points_b, cfg.triplet(), grads != nullptr);
  rec.des = tr.loss;
  rec.active = tr.active;
  Tensor<T> dprob, ddesc;
  if (grads) {
    dprob = Tensor<T>(out.prob.n(), out.prob.c(), out.prob.h(), out.prob.w());
    ddesc = Tensor<T>(out.desc.n(), out.desc.c(), out.desc.h(), out.desc.w());
    scatter_descriptor_grad(ddesc, 0, s.points_a, tr.grad_anchor);
    scatter_descriptor_grad(ddesc, 1, s.points_b, tr.grad_positive);
  }
  Tensor<T> dreg;
  if (grads) dreg = Tensor<T>(out.prob.n(), out.prob.c(), out.prob.h(), out.prob.w());
  rec.det_reg = preservation_loss(out.prob, frozen.prob, grads ? &dreg : nullptr);
  rec.total = rec.des + cfg.alpha * rec.det_reg;
  if (grads) {
    for (std::size_t i = 0; i < dprob.size(); ++i)
      dprob.data()[i] += static_cast<T>(cfg.alpha * dreg.data()[i]);
    model::backward(p, *tp, dprob, ddesc, *grads);
  }
  return rec;
}

/// One optimizer step of the descriptor phase on image `ref` with keypoints `q`
/// and a synthetic view. Skips (and reports) pairs with fewer than two
/// surviving correspondences.
template <typename T>
DescLossRecord descriptor_update_step(model::NetworkParams<T>& p, const model::NetworkParams<T>& snapshot,
                                      nn::Adam<T>& opt, double lr, const geometry::Image& ref,
                                      const geometry::View& view, const detect::KeypointSet& q,
                                      Rng& rng, const DescTrainConfig& cfg) {
  cfg.validate();
  auto s = make_pair_sample<T>(ref, view);
  std::tie(s.points_a, s.points_b) =
      correspondences(q, view.transform, view.valid, cfg.border, cfg.max_pairs, &rng);
  if (s.points_a.size() < 2) {
    DescLossRecord rec;
    rec.pairs = static_cast<int>(s.points_a.size());
    rec.skipped = true;
    return rec;
  }
  const auto frozen = frozen_outputs(snapshot, s.images);
  auto grads = p.zeros_like();
  model::Tape<T> tape;
  auto rec = descriptor_objective(p, frozen, s, cfg, &grads, &tape);
  if (!std::isfinite(rec.total)) throw NumericError("descriptor loss is not finite");
  opt.step(p, grads, lr);
  model::apply_batch_stats(p, tape);
  return rec;
}

}  // namespace sekd::train
