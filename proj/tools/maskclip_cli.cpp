// maskclip: train, eval, predict, sweep and fixtures commands.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or invalid config value,
// 3 unknown config key, 4 missing or unreadable checkpoint, 5 conflicting overrides,
// 6 invalid data (manifest, image, shapes), 7 numeric failure during training.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "maskclip/config.hpp"
#include "maskclip/data.hpp"
#include "maskclip/engine.hpp"
#include "maskclip/errors.hpp"
#include "maskclip/evaluation.hpp"
#include "maskclip/image_ops.hpp"
#include "maskclip/robustness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace maskclip;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kUnknownKey = 3,
  kCheckpoint = 4,
  kConflict = 5,
  kData = 6,
  kNumeric = 7,
};

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> set;
};

json resolved_tree(const Globals& g) {
  config::Overrides o;
  o.assignments = g.set;
  o.seed = g.seed;
  o.output_dir = g.out;
  std::optional<fs::path> file;
  if (g.config) file = fs::path(*g.config);
  return config::resolve(file, o);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

fs::path prepare_output(const config::RunConfig& rc) {
  fs::path out = rc.output_dir;
  fs::create_directories(out);
  return out;
}

/// Resolves `p` relative to the output directory and rejects anything outside it.
fs::path confined(const fs::path& out_dir, const fs::path& p) {
  const auto root = fs::weakly_canonical(fs::absolute(out_dir));
  const auto full = fs::weakly_canonical(p.is_absolute() ? p : root / p);
  const auto rel = full.lexically_relative(root);
  if (rel.empty() || *rel.begin() == "..") throw ConfigError("output path must stay inside the output directory: " + p.string());
  return full;
}

data::Manifest select_split(const data::Manifest& m, const std::string& split) {
  if (split == "all") return m;
  return m.filter(data::parse_split(split));
}

std::string require(const std::optional<std::string>& flag, const std::string& fallback, const char* what) {
  if (flag) return *flag;
  if (!fallback.empty()) return fallback;
  throw ConfigError(std::string("no ") + what + " given");
}

int cmd_train(const Globals& g, const std::optional<std::string>& manifest_flag) {
  const json tree = resolved_tree(g);
  const auto rc = config::from_tree(tree);
  const auto manifest = data::load_manifest(require(manifest_flag, rc.train_manifest, "training manifest"));
  const fs::path out = prepare_output(rc);
  write_text(out / "config.json", tree.dump(2) + "\n");

  auto state = engine::init_state(tree);
  engine::TrainOptions opts;
  opts.checkpoint_dir = out / "checkpoints";
  opts.log = &std::cerr;
  const auto log = engine::train(state, manifest, opts);

  std::string csv = "epoch,steps,loss,ce,bce,edg\n";
  json j = json::array();
  for (const auto& e : log.epochs) {
    char line[256];
    std::snprintf(line, sizeof line, "%d,%d,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.steps, e.total, e.ce, e.bce, e.edg);
    csv += line;
    j.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"loss", e.total}, {"ce", e.ce}, {"bce", e.bce}, {"edg", e.edg}});
  }
  write_text(out / "train_log.csv", csv);
  write_text(out / "train_log.json", json{{"epochs", j}, {"final_step", state.step}}.dump(2) + "\n");
  std::cout << "trained " << state.step << " steps; checkpoint " << (out / "checkpoints" / "checkpoint_last.safetensors").string()
            << '\n';
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::optional<std::string>& manifest_flag) {
  const json tree = resolved_tree(g);
  const auto rc = config::from_tree(tree);
  auto state = engine::load_state(checkpoint);
  const auto manifest = data::load_manifest(require(manifest_flag, rc.test_manifest, "evaluation manifest"));
  const auto split = select_split(manifest, rc.evaluation.split);
  const fs::path out = prepare_output(rc);

  evaluation::EvaluateOptions opts;
  opts.threshold = rc.evaluation.threshold;
  opts.micro_average = rc.evaluation.micro_average;
  const auto report = evaluation::evaluate(split, state, opts);
  const auto csv = report.to_csv();
  write_text(out / "metrics.csv", csv);
  write_text(out / "metrics.json", report.to_json().dump(2) + "\n");
  std::cout << csv;
  return kOk;
}

int cmd_predict(const Globals& g, const std::string& checkpoint, const std::string& image_path,
                const std::optional<std::string>& mask_flag) {
  const json tree = resolved_tree(g);
  const auto rc = config::from_tree(tree);
  auto state = engine::load_state(checkpoint);
  const cv::Mat image = image_ops::read_image(image_path);
  const fs::path out = prepare_output(rc);

  const auto result = engine::predict(state, image, rc.evaluation.threshold);
  const std::string stem = fs::path(image_path).stem().string();
  const fs::path mask_path = confined(out, mask_flag ? fs::path(*mask_flag) : fs::path(stem + "_mask.png"));
  fs::path prob_path = mask_path;
  prob_path.replace_filename(mask_path.stem().string() + "_prob.png");
  fs::create_directories(mask_path.parent_path());

  image_ops::write_mask(mask_path, result.mask_binary);
  const auto prob = torch::sigmoid(result.mask_logits.to(torch::kFloat32)).contiguous();
  cv::Mat prob_f(static_cast<int>(prob.size(0)), static_cast<int>(prob.size(1)), CV_32FC1, prob.data_ptr<float>());
  cv::Mat prob_u8;
  prob_f.convertTo(prob_u8, CV_8UC1, 255.0, 0.5);
  if (!cv::imwrite(prob_path.string(), prob_u8)) throw IoError("cannot write " + prob_path.string());

  std::printf("%.4f\n", result.p_fake);
  return kOk;
}

int cmd_sweep(const Globals& g, const std::string& checkpoint, const std::optional<std::string>& manifest_flag) {
  const json tree = resolved_tree(g);
  const auto rc = config::from_tree(tree);
  auto state = engine::load_state(checkpoint);
  const auto manifest = data::load_manifest(require(manifest_flag, rc.test_manifest, "evaluation manifest"));
  const auto split = select_split(manifest, rc.robustness.split);
  const fs::path out = prepare_output(rc);

  std::vector<robustness::DegradationSpec> specs;
  if (!rc.robustness.blur_levels.empty())
    specs.push_back({robustness::DegradationKind::gaussian_blur, rc.robustness.blur_levels});
  if (!rc.robustness.jpeg_levels.empty()) specs.push_back({robustness::DegradationKind::jpeg, rc.robustness.jpeg_levels});
  for (const auto& s : specs) s.validate();

  evaluation::EvaluateOptions opts;
  opts.threshold = rc.evaluation.threshold;
  opts.micro_average = rc.evaluation.micro_average;
  const auto result = robustness::sweep(split, state, specs, opts);
  write_text(out / "robustness.csv", result.to_csv());

  fs::create_directories(out / "plots");
  for (const auto& s : specs)
    for (const char* metric : {"pixel_F1", "pixel_IoU", "image_F1", "image_Acc"})
      robustness::plot(result, s.kind, metric, out / "plots" / (robustness::to_string(s.kind) + "_" + metric + ".png"));
  std::cout << "wrote " << result.rows.size() << " sweep levels to " << (out / "robustness.csv").string() << '\n';
  return kOk;
}

int cmd_fixtures(const Globals& g, int n, int size) {
  const json tree = resolved_tree(g);
  const auto rc = config::from_tree(tree);
  const fs::path out = prepare_output(rc);
  const auto m = data::make_fixtures(out, n, size, rc.seed);
  std::cout << "wrote " << m.size() << " samples to " << (out / "manifest.jsonl").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskclip: manipulation detection and localization"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON config file (comments allowed)");
  app.add_option("--seed", g.seed, "global seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  app.add_option("--set", g.set, "dotted key=value override, repeatable")->allow_extra_args(false);

  std::optional<std::string> manifest, mask;
  std::string checkpoint, image;
  int n = 16, size = 64;

  auto* train = app.add_subcommand("train", "train the tunable parameters");
  train->add_option("--manifest", manifest, "manifest (default: data.train_manifest)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest, "manifest (default: data.test_manifest)");

  auto* predict = app.add_subcommand("predict", "score one image and write its mask");
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--image", image)->required();
  predict->add_option("--mask", mask, "binary mask path inside the output directory");

  auto* sweep = app.add_subcommand("sweep", "robustness sweep under blur and JPEG");
  sweep->add_option("--checkpoint", checkpoint)->required();
  sweep->add_option("--manifest", manifest, "manifest (default: data.test_manifest)");

  auto* fixtures = app.add_subcommand("fixtures", "write a synthetic dataset into the output directory");
  fixtures->add_option("-n,--count", n, "number of samples")->check(CLI::PositiveNumber);
  fixtures->add_option("--size", size, "image side in pixels")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(g, manifest);
    if (*eval) return cmd_eval(g, checkpoint, manifest);
    if (*predict) return cmd_predict(g, checkpoint, image, mask);
    if (*sweep) return cmd_sweep(g, checkpoint, manifest);
    if (*fixtures) return cmd_fixtures(g, n, size);
  } catch (const UnknownKeyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnknownKey;
  } catch (const ConflictError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConflict;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
