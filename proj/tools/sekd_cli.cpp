// sekd command-line tool: training, keypoint export, matching, evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selftest.hpp"
#include "sekd/io/image_io.hpp"
#include "sekd/sekd.hpp"

namespace fs = std::filesystem;
using namespace sekd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

// Standalone detection drops near-zero responses; evaluation and training use top-k only.
constexpr float kInferenceMinScore = 0.015f;

struct TrainArgs {
  std::string config, data, output, resume;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

model::NetworkParams<float> load_params(const std::string& path) { return model::load_checkpoint(path).params; }

std::unique_ptr<std::ostream> open_out(const std::string& path) {
  if (path.empty() || path == "-") return nullptr;
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  auto os = std::make_unique<std::ofstream>(p);
  if (!*os) throw DataError("cannot write " + path);
  return os;
}

int cmd_train(const TrainArgs& a, int verbose) {
  evolve::EvolveConfig cfg;
  if (!a.config.empty()) cfg = evolve::load_config(a.config);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    evolve::set_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.output.empty()) cfg.output = a.output;
  if (a.seed_given) cfg.seed = a.seed;
  if (cfg.data.empty()) throw ConfigError("training needs a data directory (--data or data = ...)");
  if (cfg.output.empty()) throw ConfigError("training needs an output directory (--output or output = ...)");
  cfg.validate();
  const auto data = io::load_dataset(cfg.data, cfg.max_side, cfg.max_images);
  evolve::EvolveHooks hooks;
  hooks.on_row = [&](const nlohmann::json& row) {
    if (verbose > 0 || row["type"] != "step") std::cerr << row.dump() << '\n';
  };
  evolve::SelfEvolve run(cfg, data, hooks);
  const auto result = a.resume.empty() ? run.run() : run.resume(a.resume);
  std::cout << (fs::path(cfg.output) / "final.ckpt").string() << '\n';
  return result.completed ? kOk : kFailure;
}

int cmd_detect(const std::string& ckpt, const std::vector<std::string>& images, int top_k, int radius,
               const std::string& out) {
  const auto p = load_params(ckpt);
  const detect::NmsConfig nms{radius, top_k, kInferenceMinScore};
  for (const auto& path : images) {
    const auto k = eval::describe_image(p, geometry::luminance(io::load_image(path)), nms);
    if (images.size() == 1 && !out.empty() && out != "-") {
      auto os = open_out(out);
      detect::write_jsonl(*os, k);
    } else if (!out.empty() && out != "-") {
      auto os = open_out((fs::path(out) / fs::path(path).stem()).string() + ".jsonl");
      detect::write_jsonl(*os, k);
    } else {
      detect::write_jsonl(std::cout, k);
    }
  }
  return kOk;
}

int cmd_describe(const std::string& ckpt, const std::string& image, const std::string& keypoints, int top_k,
                 const std::string& out) {
  const auto p = load_params(ckpt);
  const auto img = geometry::luminance(io::load_image(image));
  detect::KeypointSet k;
  if (keypoints.empty()) {
    k = eval::describe_image(p, img, {4, top_k, kInferenceMinScore});
  } else {
    std::ifstream is(keypoints);
    if (!is) throw DataError("cannot read " + keypoints);
    k = detect::read_jsonl(is);
    for (auto q : k.points)
      if (!img.contains(q.row, q.col)) throw DataError("keypoint outside the image in " + keypoints);
    const auto desc = model::forward(p, img).second;
    detect::attach_descriptors(k, desc);
  }
  auto os = open_out(out);
  detect::write_jsonl(os ? *os : std::cout, k);
  return kOk;
}

int cmd_match(const std::string& ckpt, const std::string& a, const std::string& b, int top_k, double ratio,
              const std::string& out, const std::string& viz) {
  const auto p = load_params(ckpt);
  const auto ia = geometry::luminance(io::load_image(a)), ib = geometry::luminance(io::load_image(b));
  const detect::NmsConfig nms{4, top_k, kInferenceMinScore};
  const auto ka = eval::describe_image(p, ia, nms), kb = eval::describe_image(p, ib, nms);
  const auto m = ratio > 0.0 ? eval::ratio_test_match(ka.descriptors, kb.descriptors, ratio)
                             : eval::nn_match(ka.descriptors, kb.descriptors, true);
  auto os = open_out(out);
  std::ostream& o = os ? *os : std::cout;
  for (const auto& mm : m)
    o << nlohmann::json{{"v", detect::kKeypointSchemaVersion},
                        {"xa", ka.points[mm.a].col}, {"ya", ka.points[mm.a].row},
                        {"xb", kb.points[mm.b].col}, {"yb", kb.points[mm.b].row},
                        {"distance", mm.distance}}
             .dump()
      << '\n';
  if (!viz.empty()) io::save_match_image(viz, ia, ib, ka, kb, m);
  return kOk;
}

int cmd_eval(const std::string& data, const std::string& ckpt, int top_k, const std::string& report, int max_side,
             std::uint64_t seed) {
  const auto p = load_params(ckpt);
  const auto seqs = io::load_hpatches(data, max_side);
  eval::EvalConfig cfg;
  cfg.nms.max_n = top_k;
  cfg.ransac.seed = seed;
  const auto r = eval::evaluate_sequences(p, seqs, cfg);
  const auto rows = eval::report_rows(r);
  auto os = open_out(report);
  std::ostream& o = os ? *os : std::cout;
  for (const auto& row : rows) o << row.dump() << '\n';
  if (!report.empty() && report != "-") {
    fs::path plot(report);
    plot.replace_extension(".png");
    io::save_ha_plot(plot, r);
  }
  std::cerr << "Avg.HA@1:10 " << r.overall.average << " over " << r.overall.pairs << " pairs\n";
  return kOk;
}

int cmd_maps(const std::string& ckpt, const std::string& image, const std::string& out_dir, int warps,
             std::uint64_t seed) {
  const auto p = load_params(ckpt);
  const auto img = io::load_image(image);
  const auto color = img.c() == 3 ? img : geometry::color_from_gray(to_grid(img));
  reliability::ReliabilityConfig rc;
  rc.warps = warps;
  Rng rng(derive_seed(seed, "maps"));
  const auto m = reliability::averaged_ratio_map(p, color, rc, geometry::AugmentConfig{}, rng);
  const fs::path dir(out_dir);
  io::save_heatmap(dir / "probability.png", detect::keypoint_probability(p, geometry::luminance(color)));
  io::save_heatmap(dir / "repeatability.png", m.rep_fine);
  io::save_heatmap(dir / "distinctness.png", m.dis_fine);
  io::save_heatmap(dir / "reliability.png", m.r);
  std::cout << dir.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-evolving keypoint detector and descriptor"};
  app.require_subcommand(1);
  int verbose = 0;
  app.add_flag("-v,--verbose", verbose, "Log every training step");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run self-evolving training");
  train->add_option("--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--set", ta.sets, "Override a config key (key=value), repeatable");
  train->add_option("--data", ta.data, "Directory of training images");
  train->add_option("--output", ta.output, "Output directory");
  auto* seed_opt = train->add_option("--seed", ta.seed, "Root random seed");
  train->add_option("--resume", ta.resume, "Continue from a phase checkpoint")->check(CLI::ExistingFile);

  std::string ckpt, out, image, keypoints, img_a, img_b, viz, data, report, out_dir;
  std::vector<std::string> images;
  int det_top_k = 1000, des_top_k = 1000, match_top_k = 500, eval_top_k = 500;
  int radius = 4, max_side = 0, warps = 4;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  auto* det = app.add_subcommand("detect", "Export keypoints and descriptors as JSON lines");
  det->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  det->add_option("images", images)->required();
  det->add_option("--top-k", det_top_k)->check(CLI::PositiveNumber);
  det->add_option("--radius", radius)->check(CLI::PositiveNumber);
  det->add_option("--out", out, "Output file (one image) or directory");

  auto* des = app.add_subcommand("describe", "Descriptors at given or detected keypoints");
  des->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  des->add_option("--image", image)->required();
  des->add_option("--keypoints", keypoints, "JSON-lines keypoints");
  des->add_option("--top-k", des_top_k)->check(CLI::PositiveNumber);
  des->add_option("--out", out);

  auto* mat = app.add_subcommand("match", "Match two images");
  mat->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  mat->add_option("--a", img_a)->required();
  mat->add_option("--b", img_b)->required();
  mat->add_option("--top-k", match_top_k)->check(CLI::PositiveNumber);
  mat->add_option("--ratio", ratio, "Use the ratio test with this threshold instead of cross-check");
  mat->add_option("--out", out);
  mat->add_option("--viz", viz, "Write a match visualization PNG");

  auto* ev = app.add_subcommand("eval-homography", "Homography accuracy on an image-sequence dataset");
  ev->add_option("--data", data)->required();
  ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--top-k", eval_top_k)->check(CLI::PositiveNumber);
  ev->add_option("--report", report, "JSON-lines report; the HA curve goes next to it as .png");
  ev->add_option("--max-side", max_side, "Downscale images to this long side (0 keeps size)");
  ev->add_option("--seed", seed);

  auto* maps = app.add_subcommand("maps", "Write probability and reliability heat maps");
  maps->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  maps->add_option("--image", image)->required();
  maps->add_option("--out-dir", out_dir)->required();
  maps->add_option("--warps", warps)->check(CLI::PositiveNumber);
  maps->add_option("--seed", seed);

  auto* self = app.add_subcommand("selftest", "Run the built-in oracle and invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train) {
      ta.seed_given = seed_opt->count() > 0;
      return cmd_train(ta, verbose);
    }
    if (*det) return cmd_detect(ckpt, images, det_top_k, radius, out);
    if (*des) return cmd_describe(ckpt, image, keypoints, des_top_k, out);
    if (*mat) return cmd_match(ckpt, img_a, img_b, match_top_k, ratio, out, viz);
    if (*ev) return cmd_eval(data, ckpt, eval_top_k, report, max_side, seed);
    if (*maps) return cmd_maps(ckpt, image, out_dir, warps, seed);
    if (*self) return selftest::run(std::cout) ? kOk : kFailure;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
