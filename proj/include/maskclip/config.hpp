#pragma once

// Run configuration: a JSON key tree where every key has a default. Files may set any
// subset of keys; unknown keys are rejected. Dotted overrides (`model.vca.heads=4`) apply
// on top of the file, and dedicated CLI flags (--seed, --out) on top of everything.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskclip/data.hpp"
#include "maskclip/engine.hpp"
#include "maskclip/model.hpp"
#include "maskclip/objective.hpp"

namespace maskclip::config {

using nlohmann::json;

struct EvalConfig {
  double threshold = 0.5;
  bool micro_average = false;
  std::string split = "test";  // "train", "test" or "all"
};

struct RobustnessConfig {
  std::vector<int> blur_levels{3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23};
  std::vector<int> jpeg_levels{100, 90, 80, 70, 60};
  std::string split = "test";
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  model::ModelConfig model;
  std::string semantic_checkpoint, text_checkpoint, spatial_checkpoint;
  objective::LossConfig losses;
  engine::TrainConfig training;
  std::string train_manifest, test_manifest;
  data::AugmentationConfig augmentation;
  EvalConfig evaluation;
  RobustnessConfig robustness;
};

/// The complete key tree with default values.
json default_tree();

/// Recursively overlays `overlay` onto `base`. Keys absent from `base` throw ConfigError
/// naming the dotted path; values must keep the default's JSON type (numbers interchange).
json merge(const json& base, const json& overlay, const std::string& path = "");

/// Sets one dotted key. The value text is parsed as JSON when possible, else as a string.
void set_key(json& tree, const std::string& dotted_key, const std::string& value_text);

struct Overrides {
  std::vector<std::string> assignments;  // "key=value"
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

/// default_tree() <- file (if any) <- assignments <- dedicated flags.
/// Throws ConflictError when two overrides disagree on one key.
json resolve(const std::optional<std::filesystem::path>& file, const Overrides& overrides);

/// Typed view of a resolved tree; validates every section.
RunConfig from_tree(const json& tree);

json read_file(const std::filesystem::path& path);

}  // namespace maskclip::config
