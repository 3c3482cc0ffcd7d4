#pragma once

// Flat key = value run configuration. Unknown keys are errors. Ranges are
// written "lo,hi", channel lists "a,b,c", booleans true/false.

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "sekd/detect/keypoints.hpp"
#include "sekd/geometry/affine.hpp"
#include "sekd/model/params.hpp"
#include "sekd/nn/adam.hpp"
#include "sekd/reliability/reliability.hpp"
#include "sekd/train/describe.hpp"
#include "sekd/train/detector.hpp"

namespace sekd::evolve {

struct EvolveConfig {
  std::uint64_t seed = 0;
  int iterations = 5;
  int epochs_per_phase = 20;
  double initial_lr = 1e-3;
  double lr_decay = 0.1;
  int patience_epochs = 2;
  double lr_floor = 1e-6;

  std::string data;
  std::string output;
  int max_side = 320;
  int max_images = 0;  // 0 = all

  /// Training keypoints per image (step a) and their NMS spacing.
  detect::NmsConfig keypoints{4, 1000, 0.0f};
  int adaptation_warps = 10;
  bool affine_adaptation = true;

  model::ArchConfig arch;
  nn::AdamConfig adam;
  geometry::AugmentConfig augment;
  train::DescTrainConfig desc;
  train::DetTrainConfig det;
  reliability::ReliabilityConfig rel;

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (epochs_per_phase < 1) throw ConfigError("epochs_per_phase must be >= 1");
    if (patience_epochs < 1) throw ConfigError("patience_epochs must be >= 1");
    if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (!(lr_floor > 0.0)) throw ConfigError("lr_floor must be > 0");
    if (max_side < 64) throw ConfigError("max_side must be >= 64");
    if (max_images < 0) throw ConfigError("max_images must be >= 0");
    if (adaptation_warps < 1) throw ConfigError("adaptation_warps must be >= 1");
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0 || !(adam.eps > 0.0))
      throw ConfigError("invalid adam parameters");
    keypoints.validate();
    arch.validate();
    augment.validate();
    desc.validate();
    det.validate();
    rel.validate();
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

struct Field {
  std::function<std::string(const EvolveConfig&)> get;
  std::function<void(EvolveConfig&, const std::string&)> set;
  bool hashed = true;
};

using Registry = std::map<std::string, Field>;

inline const Registry& registry() {
  static const Registry reg = [] {
    Registry r;
    auto num = [&r](const std::string& key, auto accessor) {
      r[key] = Field{[accessor](const EvolveConfig& c) {
                       auto v = accessor(const_cast<EvolveConfig&>(c));
                       if constexpr (std::is_floating_point_v<std::remove_reference_t<decltype(v)>>)
                         return fmt_double(v);
                       else
                         return std::to_string(v);
                     },
                     [accessor, key](EvolveConfig& c, const std::string& s) {
                       auto& ref = accessor(c);
                       using V = std::remove_reference_t<decltype(ref)>;
                       if constexpr (std::is_floating_point_v<V>)
                         ref = static_cast<V>(parse_double(key, s));
                       else
                         ref = static_cast<V>(parse_int(key, s));
                     }};
    };
    auto flag = [&r](const std::string& key, auto accessor) {
      r[key] = Field{[accessor](const EvolveConfig& c) {
                       return std::string(accessor(const_cast<EvolveConfig&>(c)) ? "true" : "false");
                     },
                     [accessor, key](EvolveConfig& c, const std::string& s) { accessor(c) = parse_bool(key, s); }};
    };
    auto range = [&r](const std::string& key, auto accessor) {
      r[key] = Field{[accessor](const EvolveConfig& c) {
                       const geometry::Range& g = accessor(const_cast<EvolveConfig&>(c));
                       return fmt_double(g.lo) + "," + fmt_double(g.hi);
                     },
                     [accessor, key](EvolveConfig& c, const std::string& s) {
                       const auto parts = split(s, ',');
                       if (parts.size() != 2) throw ConfigError("config key '" + key + "': expected lo,hi");
                       accessor(c) = {parse_double(key, parts[0]), parse_double(key, parts[1])};
                     }};
    };
    auto ints = [&r](const std::string& key, auto accessor) {
      r[key] = Field{[accessor](const EvolveConfig& c) {
                       const auto& a = accessor(const_cast<EvolveConfig&>(c));
                       std::string s;
                       for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i]);
                       return s;
                     },
                     [accessor, key](EvolveConfig& c, const std::string& s) {
                       auto& a = accessor(c);
                       const auto parts = split(s, ',');
                       if (parts.size() != a.size())
                         throw ConfigError("config key '" + key + "': expected " + std::to_string(a.size()) + " values");
                       for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<int>(parse_int(key, parts[i]));
                     }};
    };
    auto text = [&r](const std::string& key, auto accessor, bool hashed) {
      r[key] = Field{[accessor](const EvolveConfig& c) { return accessor(const_cast<EvolveConfig&>(c)); },
                     [accessor](EvolveConfig& c, const std::string& s) { accessor(c) = s; }, hashed};
    };
#define SEKD_ACC(expr) [](EvolveConfig& c) -> auto& { return c.expr; }
    num("seed", SEKD_ACC(seed));
    num("iterations", SEKD_ACC(iterations));
    num("epochs_per_phase", SEKD_ACC(epochs_per_phase));
    num("initial_lr", SEKD_ACC(initial_lr));
    num("lr_decay", SEKD_ACC(lr_decay));
    num("patience_epochs", SEKD_ACC(patience_epochs));
    num("lr_floor", SEKD_ACC(lr_floor));
    text("data", SEKD_ACC(data), true);
    text("output", SEKD_ACC(output), false);
    num("max_side", SEKD_ACC(max_side));
    num("max_images", SEKD_ACC(max_images));
    num("keypoints.max_n", SEKD_ACC(keypoints.max_n));
    num("keypoints.radius", SEKD_ACC(keypoints.radius));
    num("adaptation_warps", SEKD_ACC(adaptation_warps));
    flag("affine_adaptation", SEKD_ACC(affine_adaptation));

    num("arch.stem_channels", SEKD_ACC(arch.stem_channels));
    ints("arch.stage_channels", SEKD_ACC(arch.stage_channels));
    num("arch.blocks_per_stage", SEKD_ACC(arch.blocks_per_stage));
    flag("arch.bottleneck", SEKD_ACC(arch.bottleneck));
    num("arch.bottleneck_ratio", SEKD_ACC(arch.bottleneck_ratio));
    num("arch.descriptor_dim", SEKD_ACC(arch.descriptor_dim));
    ints("arch.head_channels", SEKD_ACC(arch.head_channels));
    num("arch.deconv_kernel", SEKD_ACC(arch.deconv_kernel));

    num("adam.beta1", SEKD_ACC(adam.beta1));
    num("adam.beta2", SEKD_ACC(adam.beta2));
    num("adam.eps", SEKD_ACC(adam.eps));

    range("augment.rotation", SEKD_ACC(augment.rotation_deg));
    range("augment.shear", SEKD_ACC(augment.shear_deg));
    range("augment.translation", SEKD_ACC(augment.translation));
    range("augment.scale", SEKD_ACC(augment.scale));
    range("augment.brightness", SEKD_ACC(augment.brightness));
    range("augment.contrast", SEKD_ACC(augment.contrast));
    range("augment.saturation", SEKD_ACC(augment.saturation));
    range("augment.hue", SEKD_ACC(augment.hue));
    flag("augment.jitter", SEKD_ACC(augment.jitter));

    num("desc.margin", SEKD_ACC(desc.margin));
    num("desc.alpha", SEKD_ACC(desc.alpha));
    num("desc.exclusion_radius", SEKD_ACC(desc.exclusion_radius));
    num("desc.max_pairs", SEKD_ACC(desc.max_pairs));
    num("desc.border", SEKD_ACC(desc.border));

    num("det.gamma", SEKD_ACC(det.gamma));
    num("det.focal_alpha", SEKD_ACC(det.focal_alpha));
    num("det.beta", SEKD_ACC(det.beta));
    num("det.lambda", SEKD_ACC(det.lambda));
    flag("det.repeatability_loss", SEKD_ACC(det.repeatability_loss));

    num("rel.warps", SEKD_ACC(rel.warps));
    num("rel.window_fine", SEKD_ACC(rel.window_fine));
    num("rel.window_coarse", SEKD_ACC(rel.window_coarse));
    num("rel.exclusion_fine", SEKD_ACC(rel.exclusion_fine));
    num("rel.exclusion_coarse", SEKD_ACC(rel.exclusion_coarse));
    num("rel.eps", SEKD_ACC(rel.eps));
    num("rel.cap", SEKD_ACC(rel.cap));
    num("rel.weight_coarse", SEKD_ACC(rel.weight_coarse));
    num("rel.weight_fine", SEKD_ACC(rel.weight_fine));
    num("rel.border", SEKD_ACC(rel.border));
    flag("rel.unit_repeatability", SEKD_ACC(rel.unit_repeatability));
    flag("rel.unit_distinctness", SEKD_ACC(rel.unit_distinctness));
    num("rel.max_n", SEKD_ACC(rel.nms.max_n));
    num("rel.radius", SEKD_ACC(rel.nms.radius));
#undef SEKD_ACC
    return r;
  }();
  return reg;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, f] : detail::registry()) k.push_back(name);
  return k;
}

inline void set_value(EvolveConfig& c, const std::string& key, const std::string& value) {
  const auto& reg = detail::registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(c, detail::trim(value));
}

inline std::string get_value(const EvolveConfig& c, const std::string& key) {
  const auto& reg = detail::registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(c);
}

/// Applies "key = value" lines; '#' starts a comment.
inline void apply_text(EvolveConfig& c, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    set_value(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline EvolveConfig load_config(const std::string& path, EvolveConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  apply_text(base, ss.str());
  return base;
}

/// Canonical "key=value" dump in key order.
inline std::string dump_config(const EvolveConfig& c, bool hashed_only = false) {
  std::string out;
  for (const auto& [name, f] : detail::registry()) {
    if (hashed_only && !f.hashed) continue;
    out += name + "=" + f.get(c) + "\n";
  }
  return out;
}

/// FNV-1a of the canonical dump (excluding the output location), as hex.
inline std::string config_hash(const EvolveConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(dump_config(c, true))));
  return buf;
}

}  // namespace sekd::evolve
