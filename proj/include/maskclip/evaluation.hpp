#pragma once

// Pixel-level (F1, IoU) and image-level (F1, accuracy) metrics, aggregated per generator
// subset with an arithmetic-mean AVG row.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "maskclip/data.hpp"
#include "maskclip/engine.hpp"

namespace maskclip::evaluation {

struct PixelCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  PixelCounts& operator+=(const PixelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PixelScores {
  double f1 = 0.0;
  double iou = 0.0;
};

/// Counts over two same-shaped {0,1} masks (CV_8UC1). Throws ShapeError on mismatch.
PixelCounts pixel_counts(const cv::Mat& pred, const cv::Mat& gt);

/// f1 = 2TP/(2TP+FP+FN), iou = TP/(TP+FP+FN). When both masks are empty the result is
/// (1,1) if allow_empty, otherwise (0,0).
PixelScores scores_from_counts(const PixelCounts& c, bool allow_empty = false);
PixelScores pixel_metrics(const cv::Mat& pred, const cv::Mat& gt, bool allow_empty = false);

struct ImageScores {
  double f1 = 0.0;  // fake is the positive class; 0 when undefined
  double accuracy = 0.0;
};

/// Predicted fake iff p > threshold (strict). Throws ValidationError on empty or unequal input.
ImageScores image_metrics(const std::vector<double>& p_fake, const std::vector<data::Label>& labels,
                          double threshold = 0.5);

struct SubsetRecord {
  std::string subset;
  std::optional<double> pixel_f1;   // absent when the subset has no manipulated images
  std::optional<double> pixel_iou;
  double image_f1 = 0.0;
  double image_acc = 0.0;
  std::size_t n_images = 0;
  std::size_t n_manipulated = 0;
};

struct MetricReport {
  std::vector<SubsetRecord> subsets;  // sorted by subset name
  SubsetRecord average;               // subset == "AVG"

  /// Columns: subset,n_images,pixel_IoU,pixel_F1,image_F1,image_Acc (empty cell when absent).
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Builds the report from per-image results; AVG is the arithmetic mean over subsets.
struct ImageResult {
  std::string subset;
  data::Label label = data::Label::real;
  double p_fake = 0.0;
  cv::Mat pred_mask;
  cv::Mat gt_mask;
};
MetricReport aggregate(const std::vector<ImageResult>& results, double threshold = 0.5, bool micro_average = false);

struct EvaluateOptions {
  double threshold = 0.5;
  bool micro_average = false;
  std::size_t batch_size = 8;
  /// Applied to each image after it has been resized to the model input.
  std::function<cv::Mat(const cv::Mat&)> degrade;
};

/// Pixel metrics over manipulated images (GT with a positive pixel) averaged per image,
/// image metrics over all images, grouped by generator_tag.
MetricReport evaluate(const data::Manifest& split, engine::ModelState& state, const EvaluateOptions& options = {});

/// Per-image predictions used by evaluate(), exposed for sweeps and tests.
std::vector<ImageResult> predict_manifest(const data::Manifest& split, engine::ModelState& state,
                                          const EvaluateOptions& options = {});

}  // namespace maskclip::evaluation
