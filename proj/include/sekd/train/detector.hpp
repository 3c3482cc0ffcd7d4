#pragma once

#include <tuple>

#include "sekd/nn/adam.hpp"
#include "sekd/train/losses.hpp"
#include "sekd/train/pairs.hpp"

namespace sekd::train {

struct DetTrainConfig {
  double gamma = 2.0;
  double focal_alpha = 0.25;
  double beta = 1.0;     // repeatability (KL) weight
  double lambda = 1e-3;  // descriptor preservation weight
  bool repeatability_loss = true;

  void validate() const {
    if (gamma < 0.0) throw ConfigError("focal gamma must be >= 0");
    if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) throw ConfigError("focal alpha must lie in (0, 1)");
    if (beta < 0.0 || lambda < 0.0) throw ConfigError("detector loss weights must be >= 0");
  }
  FocalConfig focal() const { return {gamma, focal_alpha}; }
};

struct DetLossRecord {
  double det = 0.0;      // symmetric focal term
  double rep_sum = 0.0;  // KL term as summed in the objective
  double rep_mean = 0.0;
  double des_reg = 0.0;  // descriptor preservation term
  double total = 0.0;    // objective value (uses rep_sum)
  double schedule = 0.0; // objective with rep_mean, used for LR scheduling
  int pairs = 0;
  bool rep_skipped = false;
};

/// Labels of a two-view detector sample: keypoints Y on the reference and
/// their transforms Ŷ rasterized on the view.
struct DetLabels {
  Grid<float> y, y_hat;
  std::vector<std::pair<Pixel, Pixel>> pairs;
};

inline DetLabels make_labels(const detect::KeypointSet& y, const geometry::AffineTransform& a,
                             const Mask& valid) {
  DetLabels l;
  const int h = valid.h(), w = valid.w();
  l.y = detect::label_map(y, h, w);
  l.y_hat = Grid<float>(h, w, 0.0f);
  auto [pa, pb] = correspondences(y, a, valid, 0);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    l.y_hat(pb[i].row, pb[i].col) = 1.0f;
    l.pairs.emplace_back(pa[i], pb[i]);
  }
  return l;
}

/// Objective L = L_det + β·L_rep + λ·L'_des on a prepared pair.
template <typename T>
DetLossRecord detector_objective(const model::NetworkParams<T>& p, const FrozenOutputs<T>& frozen,
                                 const PairSample<T>& s, const DetLabels& labels, const DetTrainConfig& cfg,
                                 std::vector<Tensor<T>>* grads = nullptr, model::Tape<T>* tape = nullptr) {
  DetLossRecord rec;
  model::Tape<T> local;
  model::Tape<T>* tp = grads ? (tape ? tape : &local) : nullptr;
  auto out = model::forward_batch(p, s.images, model::Mode::Train, {}, tp);
  Tensor<T> dprob, ddesc;
  if (grads) {
    dprob = Tensor<T>(out.prob.n(), out.prob.c(), out.prob.h(), out.prob.w());
    ddesc = Tensor<T>(out.desc.n(), out.desc.c(), out.desc.h(), out.desc.w());
  }
  Tensor<T>* gp = grads ? &dprob : nullptr;
  const auto fc = cfg.focal();
  rec.det = 0.5 * (focal_loss(out.prob, 0, labels.y, fc, nullptr, gp, 0.5) +
                   focal_loss(out.prob, 1, labels.y_hat, fc, &s.valid, gp, 0.5));
  rec.pairs = static_cast<int>(labels.pairs.size());
  if (cfg.repeatability_loss) {
    if (labels.pairs.empty()) {
      rec.rep_skipped = true;
    } else {
      std::tie(rec.rep_sum, rec.rep_mean) = repeatability_loss(out.prob, labels.pairs, gp, cfg.beta);
    }
  }
  Tensor<T> dreg;
  if (grads) dreg = Tensor<T>(out.desc.n(), out.desc.c(), out.desc.h(), out.desc.w());
  rec.des_reg = preservation_loss(out.desc, frozen.desc, grads ? &dreg : nullptr);
  rec.total = rec.det + cfg.beta * rec.rep_sum + cfg.lambda * rec.des_reg;
  rec.schedule = rec.det + cfg.beta * rec.rep_mean + cfg.lambda * rec.des_reg;
  if (grads) {
    for (std::size_t i = 0; i < ddesc.size(); ++i)
      ddesc.data()[i] = static_cast<T>(cfg.lambda * dreg.data()[i]);
    model::backward(p, *tp, dprob, ddesc, *grads);
  }
  return rec;
}

/// One optimizer step of the detector phase with fixed labels `y` on `ref`.
template <typename T>
DetLossRecord detector_update_step(model::NetworkParams<T>& p, const model::NetworkParams<T>& snapshot,
                                   nn::Adam<T>& opt, double lr, const geometry::Image& ref,
                                   const geometry::View& view, const detect::KeypointSet& y,
                                   const DetTrainConfig& cfg) {
  cfg.validate();
  auto s = make_pair_sample<T>(ref, view);
  const auto labels = make_labels(y, view.transform, view.valid);
  const auto frozen = frozen_outputs(snapshot, s.images);
  auto grads = p.zeros_like();
  model::Tape<T> tape;
  auto rec = detector_objective(p, frozen, s, labels, cfg, &grads, &tape);
  if (!std::isfinite(rec.total)) throw NumericError("detector loss is not finite");
  opt.step(p, grads, lr);
  model::apply_batch_stats(p, tape);
  return rec;
}

}  // namespace sekd::train
