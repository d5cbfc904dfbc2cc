#pragma once

// Training controller, parameter partition, checkpoints and inference.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "maskclip/data.hpp"
#include "maskclip/model.hpp"
#include "maskclip/objective.hpp"

namespace maskclip::engine {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-4;
  int epochs = 20;
  int max_steps = 0;  // 0: no cap
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // 0: off
  int checkpoint_every = 1;  // epochs; 0: final checkpoint only
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Model parameters, optimizer moments (tunable group only), step counter and the
/// configuration snapshot the model was built from.
struct ModelState {
  model::MaskClip model{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  nlohmann::json config;  // run configuration tree
};

/// Seeds torch, builds the model from `config` (a full run configuration tree), loads
/// pretrained encoder archives when configured, and attaches Adam to the tunable group.
ModelState init_state(const nlohmann::json& config);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double total = 0, ce = 0, bce = 0, edg = 0;
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  double total = 0, ce = 0, bce = 0, edg = 0;  // means over the epoch's steps
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::ostream* log = nullptr;
  /// Called after each optimizer step; returning false stops training.
  std::function<bool(const StepRecord&)> on_step;
};

/// Runs epochs x ceil(n / batch) steps (capped by max_steps) over the train split.
/// Throws ValidationError when a class is missing and NumericError (with the step index)
/// on a non-finite loss.
TrainLog train(ModelState& state, const data::Manifest& manifest, const TrainOptions& options = {});

/// Stacked model inputs for a batch of prepared samples.
struct Batch {
  torch::Tensor semantic;  // [B,3,S_c,S_c]
  torch::Tensor spatial;   // [B,3,S_m,S_m]
  torch::Tensor masks;     // [B,S_m,S_m]
  torch::Tensor labels;    // [B] int64, 1 = fake
};
Batch make_batch(const std::vector<data::AugmentedSample>& samples);

struct PredictionResult {
  double p_fake = 0.0;
  torch::Tensor mask_logits;  // [H, W] at the requested output size
  cv::Mat mask_binary;        // CV_8UC1 {0,1}: sigmoid(logit) > threshold
};

/// Batched inference on prepared views; logits are resized to each entry of out_sizes
/// (height, width).
std::vector<PredictionResult> predict_views(ModelState& state, const std::vector<data::AugmentedSample>& views,
                                            const std::vector<cv::Size>& out_sizes, double threshold = 0.5);

/// Resizes the image to the model inputs, runs the model, maps logits back to image size.
PredictionResult predict(ModelState& state, const cv::Mat& image, double threshold = 0.5);

/// Writes `<path>` (named-array archive: parameters + optimizer moments) and the metadata
/// document `<path>.json` (config snapshot, step, seed, format version).
void save_state(const ModelState& state, const std::filesystem::path& path);
/// Throws CheckpointError on a missing/truncated archive or a version mismatch.
ModelState load_state(const std::filesystem::path& path);

inline constexpr int kCheckpointVersion = 1;

}  // namespace maskclip::engine
