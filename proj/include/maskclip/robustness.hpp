#pragma once

// Degradation sweeps: Gaussian blur over odd kernels and JPEG recompression over qualities,
// evaluated after resizing to the model input.

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "maskclip/evaluation.hpp"

namespace maskclip::robustness {

enum class DegradationKind { gaussian_blur, jpeg };

std::string to_string(DegradationKind k);

struct DegradationSpec {
  DegradationKind kind = DegradationKind::gaussian_blur;
  std::vector<int> levels;

  /// Blur: odd kernels >= 3, or 1 as an explicit passthrough. JPEG: qualities in [1,100].
  void validate() const;

  static DegradationSpec blur_protocol();  // 3, 5, ..., 23
  static DegradationSpec jpeg_protocol();  // 100, 90, ..., 60
};

/// Blur uses sigma = 0.3*((k-1)/2 - 1) + 0.8 with replicate border; JPEG encodes at the given
/// quality and decodes. Output dimensions always equal the input.
cv::Mat degrade(const cv::Mat& image, DegradationKind kind, int level);

struct SweepRow {
  DegradationKind kind;
  int level;
  evaluation::MetricReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  /// Long form: kind,level,subset,metric,value (metrics pixel_F1, pixel_IoU, image_F1, image_Acc;
  /// absent pixel metrics are skipped).
  std::string to_csv() const;
};

SweepResult sweep(const data::Manifest& split, engine::ModelState& state, const std::vector<DegradationSpec>& specs,
                  const evaluation::EvaluateOptions& base = {});

/// One PNG line plot of `metric` vs level per subset (AVG included) for one degradation kind.
void plot(const SweepResult& result, DegradationKind kind, const std::string& metric, const std::filesystem::path& out);

}  // namespace maskclip::robustness
