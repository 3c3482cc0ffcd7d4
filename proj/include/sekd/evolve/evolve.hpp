#pragma once

// Self-evolving training loop. Each iteration:
//   (a) keypoints Q per image: random at iteration 0, affine-adapted detection later
//   (b) descriptor phase on Q
//   (c) reliability keypoints Y per image
//   (d) detector phase on Y
// Every random draw comes from a stream derived from (seed, tag, indices), so a
// run resumed from a phase checkpoint replays the remaining schedule exactly.

#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sekd/detect/detector.hpp"
#include "sekd/evolve/config.hpp"
#include "sekd/model/checkpoint.hpp"
#include "sekd/reliability/reliability.hpp"
#include "sekd/train/describe.hpp"
#include "sekd/train/detector.hpp"

namespace sekd::evolve {

struct Dataset {
  std::vector<std::string> ids;
  std::vector<geometry::ColorImage> images;

  std::size_t size() const { return images.size(); }
};

/// Learning-rate state of one phase: decay by `decay` after `patience`
/// consecutive epochs without a strict improvement of the best epoch loss.
struct LrState {
  double lr = 1e-3;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
};

inline double lr_schedule(LrState& s, double epoch_loss, int patience, double decay = 0.1, double floor = 1e-6) {
  if (epoch_loss < s.best) {
    s.best = epoch_loss;
    s.bad_epochs = 0;
  } else if (++s.bad_epochs >= patience) {
    s.lr = std::max(floor, s.lr * decay);
    s.bad_epochs = 0;
  }
  return s.lr;
}

enum class Phase { Descriptor, Detector };

inline const char* phase_name(Phase p) { return p == Phase::Descriptor ? "descriptor" : "detector"; }

/// Keypoint caches at one iteration boundary.
struct IterationCaches {
  std::vector<detect::KeypointSet> q;  // step (a)
  std::vector<detect::KeypointSet> y;  // step (c)
};

struct EpochSummary {
  int iteration = 0;
  Phase phase = Phase::Descriptor;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // scheduling loss (mean over steps)
  /// Mean of each logged term over the epoch's steps.
  std::map<std::string, double> terms;
  int steps = 0, skipped = 0;
};

struct EvolveHooks {
  std::function<void(const nlohmann::json&)> on_row;
  std::function<void(int iteration, Phase)> on_snapshot;
  /// Called after each phase; returning false stops the run there.
  std::function<bool(int iteration, Phase)> after_phase;
};

struct EvolveResult {
  model::NetworkParams<float> params;
  std::vector<IterationCaches> caches;  // indexed by iteration (resumed runs leave earlier ones empty)
  std::vector<EpochSummary> epochs;
  std::string config_hash;
  bool completed = false;
};

/// Where to continue a run: after `phase` of `iteration` has finished.
struct ResumePoint {
  int iteration = 0;
  Phase phase = Phase::Descriptor;
};

namespace detail {

inline std::uint64_t phase_id(Phase p) { return p == Phase::Descriptor ? 1 : 2; }

inline std::filesystem::path phase_path(const EvolveConfig& cfg, int it, Phase p) {
  return std::filesystem::path(cfg.output) / std::to_string(it) / (std::string(phase_name(p)) + ".ckpt");
}

inline void store_caches(model::Checkpoint& ck, const Dataset& d, const std::vector<detect::KeypointSet>& k,
                         const std::string& tag) {
  for (std::size_t i = 0; i < d.size(); ++i) ck.aux[tag + "/" + d.ids[i]] = detect::flatten(k[i]);
}

inline std::vector<detect::KeypointSet> load_caches(const model::Checkpoint& ck, const Dataset& d,
                                                    const std::string& tag) {
  std::vector<detect::KeypointSet> k;
  for (const auto& id : d.ids) {
    auto it = ck.aux.find(tag + "/" + id);
    if (it == ck.aux.end()) throw DataError("checkpoint lacks " + tag + " cache for image " + id);
    k.push_back(detect::unflatten(it->second));
  }
  return k;
}

}  // namespace detail

class SelfEvolve {
 public:
  SelfEvolve(EvolveConfig cfg, const Dataset& data, EvolveHooks hooks = {})
      : cfg_(std::move(cfg)), data_(data), hooks_(std::move(hooks)) {
    cfg_.validate();
    if (data_.size() == 0) throw DataError("training dataset is empty");
    if (data_.ids.size() != data_.size()) throw DataError("dataset ids and images disagree");
    for (const auto& img : data_.images) {
      if (img.h() < 64 || img.w() < 64) throw DataError("training images must be at least 64×64");
      lum_.push_back(geometry::luminance(img));
    }
    hash_ = config_hash(cfg_);
  }

  const std::string& hash() const { return hash_; }

  EvolveResult run() {
    Rng init(derive_seed(cfg_.seed, "init"));
    auto params = model::init_params<float>(init, cfg_.arch);
    return run_from(std::move(params), std::nullopt, {});
  }

  /// Continues from a phase checkpoint written by an earlier run of the same
  /// configuration.
  EvolveResult resume(const std::filesystem::path& ckpt_path) {
    auto ck = model::load_checkpoint(ckpt_path);
    const std::string h = ck.extra.value("config_hash", "");
    if (h != hash_) throw ConfigError("checkpoint was written by a different configuration (" + h + ")");
    ResumePoint at;
    at.iteration = ck.params.meta().iteration;
    const auto& ph = ck.params.meta().phase;
    if (ph == "descriptor")
      at.phase = Phase::Descriptor;
    else if (ph == "detector")
      at.phase = Phase::Detector;
    else
      throw DataError("checkpoint is not a phase checkpoint (phase '" + ph + "')");
    IterationCaches c;
    c.q = detail::load_caches(ck, data_, "q");
    if (at.phase == Phase::Detector) c.y = detail::load_caches(ck, data_, "y");
    return run_from(std::move(ck.params), at, std::move(c));
  }

 private:
  void emit(const nlohmann::json& row) {
    if (hooks_.on_row) hooks_.on_row(row);
    if (metrics_) *metrics_ << row.dump() << '\n';
  }

  std::vector<detect::KeypointSet> detect_step(const model::NetworkParams<float>& p, int it) {
    std::vector<detect::KeypointSet> q(data_.size());
    const auto& kc = cfg_.keypoints;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      Rng rng(derive_seed(cfg_.seed, "detect", {std::uint64_t(it), i}));
      const auto& img = data_.images[i];
      if (it == 0) {
        q[i] = detect::random_keypoints(img.h(), img.w(), kc.max_n, rng, kc.radius);
      } else {
        const int m = cfg_.affine_adaptation ? cfg_.adaptation_warps : 1;
        const auto avg = detect::affine_adapted_probability(p, img, m, rng, cfg_.augment);
        q[i] = detect::nms(avg.probability, kc);
      }
    }
    emit({{"type", "keypoints"}, {"iteration", it}, {"step", "detect"}, {"mean_count", mean_count(q)}});
    return q;
  }

  std::vector<detect::KeypointSet> reliability_step(const model::NetworkParams<float>& p, int it) {
    std::vector<detect::KeypointSet> y(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      Rng rng(derive_seed(cfg_.seed, "reliability", {std::uint64_t(it), i}));
      y[i] = reliability::compute_reliable_keypoints(p, data_.images[i], cfg_.rel, cfg_.augment, rng);
    }
    emit({{"type", "keypoints"}, {"iteration", it}, {"step", "reliability"}, {"mean_count", mean_count(y)}});
    return y;
  }

  static double mean_count(const std::vector<detect::KeypointSet>& k) {
    double s = 0.0;
    for (const auto& x : k) s += x.size();
    return k.empty() ? 0.0 : s / k.size();
  }

  void run_phase(model::NetworkParams<float>& p, int it, Phase phase, const std::vector<detect::KeypointSet>& keys,
                 EvolveResult& result) {
    const model::NetworkParams<float> snapshot = p;
    if (hooks_.on_snapshot) hooks_.on_snapshot(it, phase);
    nn::Adam<float> opt(p, cfg_.adam);
    LrState lr{cfg_.initial_lr};
    const auto pid = detail::phase_id(phase);
    for (int e = 0; e < cfg_.epochs_per_phase; ++e) {
      std::vector<std::size_t> order(data_.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng order_rng(derive_seed(cfg_.seed, "order", {std::uint64_t(it), pid, std::uint64_t(e)}));
      order_rng.shuffle(order.begin(), order.end());
      EpochSummary sum;
      sum.iteration = it;
      sum.phase = phase;
      sum.epoch = e;
      sum.lr = lr.lr;
      for (auto i : order) {
        Rng rng(derive_seed(cfg_.seed, "step", {std::uint64_t(it), pid, std::uint64_t(e), i}));
        const auto view = geometry::sample_view(rng, data_.images[i], cfg_.augment);
        nlohmann::json row = {{"type", "step"}, {"iteration", it}, {"phase", phase_name(phase)},
                              {"epoch", e}, {"image", data_.ids[i]}, {"lr", lr.lr}};
        double sched = 0.0;
        bool skipped = false;
        if (phase == Phase::Descriptor) {
          const auto r = train::descriptor_update_step(p, snapshot, opt, lr.lr, lum_[i], view, keys[i], rng, cfg_.desc);
          row.update({{"des", r.des}, {"det_reg", r.det_reg}, {"total", r.total}, {"pairs", r.pairs},
                      {"skipped", r.skipped}});
          sched = r.total;
          skipped = r.skipped;
          if (!skipped) {
            sum.terms["des"] += r.des;
            sum.terms["det_reg"] += r.det_reg;
            sum.terms["total"] += r.total;
          }
        } else {
          const auto r = train::detector_update_step(p, snapshot, opt, lr.lr, lum_[i], view, keys[i], cfg_.det);
          row.update({{"det", r.det}, {"rep_sum", r.rep_sum}, {"rep_mean", r.rep_mean}, {"des_reg", r.des_reg},
                      {"total", r.total}, {"pairs", r.pairs}, {"rep_skipped", r.rep_skipped}});
          sched = r.schedule;
          sum.terms["det"] += r.det;
          sum.terms["rep_sum"] += r.rep_sum;
          sum.terms["rep_mean"] += r.rep_mean;
          sum.terms["des_reg"] += r.des_reg;
          sum.terms["total"] += r.total;
        }
        ++p.meta().step;
        emit(row);
        if (skipped) {
          ++sum.skipped;
          continue;
        }
        sum.loss += sched;
        ++sum.steps;
      }
      if (sum.steps > 0) {
        sum.loss /= sum.steps;
        for (auto& [k, v] : sum.terms) v /= sum.steps;
      }
      p.meta().epoch = e;
      nlohmann::json row = {{"type", "epoch"}, {"iteration", it}, {"phase", phase_name(phase)}, {"epoch", e},
                            {"lr", lr.lr}, {"loss", sum.loss}, {"steps", sum.steps}, {"skipped", sum.skipped}};
      for (const auto& [k, v] : sum.terms) row[k] = v;
      emit(row);
      result.epochs.push_back(sum);
      if (sum.steps > 0) lr_schedule(lr, sum.loss, cfg_.patience_epochs, cfg_.lr_decay, cfg_.lr_floor);
    }
    if (!p.all_finite()) throw NumericError("parameters became non-finite during training");
  }

  void checkpoint(const model::NetworkParams<float>& p, int it, Phase phase, const IterationCaches& c) {
    if (cfg_.output.empty()) return;
    model::Checkpoint ck;
    ck.params = p;
    ck.params.meta().iteration = it;
    ck.params.meta().phase = phase_name(phase);
    ck.extra = {{"config_hash", hash_}};
    detail::store_caches(ck, data_, c.q, "q");
    if (phase == Phase::Detector) detail::store_caches(ck, data_, c.y, "y");
    model::save_checkpoint(detail::phase_path(cfg_, it, phase), ck);
  }

  EvolveResult run_from(model::NetworkParams<float> p, std::optional<ResumePoint> at, IterationCaches resumed) {
    EvolveResult result;
    result.config_hash = hash_;
    result.caches.resize(cfg_.iterations);
    std::ofstream metrics_file;
    if (!cfg_.output.empty()) {
      std::filesystem::create_directories(cfg_.output);
      metrics_file.open(std::filesystem::path(cfg_.output) / "metrics.jsonl", at ? std::ios::app : std::ios::trunc);
      if (!metrics_file) throw DataError("cannot write metrics in " + cfg_.output);
      metrics_ = &metrics_file;
      std::ofstream(std::filesystem::path(cfg_.output) / "config.txt") << dump_config(cfg_);
    }
    emit({{"type", "run"}, {"config_hash", hash_}, {"images", data_.size()}, {"resumed", at.has_value()},
          {"parameters", p.parameter_count()}});

    int start = at ? at->iteration : 0;
    if (at && at->phase == Phase::Detector) {
      if (start < cfg_.iterations) result.caches[start] = resumed;
      ++start;
    }
    for (int it = start; it < cfg_.iterations; ++it) {
      auto& c = result.caches[it];
      p.meta().iteration = it;
      const bool resume_mid = at && at->phase == Phase::Descriptor && it == at->iteration;
      if (resume_mid) {
        c.q = resumed.q;
      } else {
        c.q = detect_step(p, it);
        p.meta().phase = phase_name(Phase::Descriptor);
        run_phase(p, it, Phase::Descriptor, c.q, result);
        checkpoint(p, it, Phase::Descriptor, c);
        if (hooks_.after_phase && !hooks_.after_phase(it, Phase::Descriptor)) return finish(p, result, false);
      }
      c.y = reliability_step(p, it);
      p.meta().phase = phase_name(Phase::Detector);
      run_phase(p, it, Phase::Detector, c.y, result);
      checkpoint(p, it, Phase::Detector, c);
      if (hooks_.after_phase && !hooks_.after_phase(it, Phase::Detector)) return finish(p, result, false);
    }
    return finish(p, result, true);
  }

  EvolveResult finish(model::NetworkParams<float>& p, EvolveResult& result, bool completed) {
    result.completed = completed;
    if (completed && !cfg_.output.empty()) {
      model::Checkpoint ck;
      ck.params = p;
      ck.params.meta().phase = "final";
      ck.extra = {{"config_hash", hash_}};
      model::save_checkpoint(std::filesystem::path(cfg_.output) / "final.ckpt", ck);
    }
    emit({{"type", "end"}, {"completed", completed}, {"step", p.meta().step}});
    metrics_ = nullptr;
    result.params = std::move(p);
    return std::move(result);
  }

  EvolveConfig cfg_;
  const Dataset& data_;
  EvolveHooks hooks_;
  std::vector<geometry::Image> lum_;
  std::string hash_;
  std::ostream* metrics_ = nullptr;
};

inline EvolveResult run_self_evolve(const EvolveConfig& cfg, const Dataset& data, EvolveHooks hooks = {}) {
  return SelfEvolve(cfg, data, std::move(hooks)).run();
}

}  // namespace sekd::evolve
