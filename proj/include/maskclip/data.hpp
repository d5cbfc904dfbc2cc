#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace maskclip::data {

enum class Label { real, fake };
enum class Split { train, test };

std::string to_string(Label l);
std::string to_string(Split s);
Label parse_label(const std::string& s);
Split parse_split(const std::string& s);

/// Seeded generator used everywhere randomness enters the pipeline.
using Rng = std::mt19937_64;

/// Independent per-sample stream derived from (global_seed, sample_id).
Rng sample_rng(std::uint64_t global_seed, const std::string& sample_id);

/// One dataset item. image: CV_32FC3 RGB in [0,1]; mask: CV_8UC1 in {0,1}, same size.
struct ImageSample {
  std::string id;
  cv::Mat image;
  cv::Mat mask;
  Label label = Label::real;
  std::string generator_tag;
  Split split = Split::train;

  /// Throws ValidationError when a sample invariant does not hold.
  void validate() const;
};

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::optional<std::string> mask_path;
  Label label = Label::real;
  std::string generator_tag;
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

/// Ordered list of entries. Relative paths resolve against base_dir.
struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  /// Entries of one split (all entries when split is empty).
  Manifest filter(std::optional<Split> split) const;
  std::size_t size() const { return entries.size(); }
};

/// Parses and validates a JSON Lines manifest. Blank lines are ignored.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

/// Decodes image + mask. A fake entry without mask_path is fully generated (all-ones mask).
ImageSample load_sample(const Manifest& m, const ManifestEntry& e);

struct AugmentationConfig {
  double blur_prob = 0.1;
  double jpeg_prob = 0.1;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  int blur_max_kernel = 7;   // odd kernels drawn from 3..blur_max_kernel
  int jpeg_min_quality = 70; // qualities drawn from jpeg_min_quality..100
  int crop_size = 512;
  int clip_input_size = 224;

  /// Checks probabilities and that sizes are divisible by the given encoder patch sizes.
  void validate(int spatial_patch, int semantic_patch) const;
};

struct AugmentedSample {
  ImageSample sample;     // crop_size x crop_size
  cv::Mat semantic_view;  // clip_input_size x clip_input_size, same geometry
};

/// Geometric transforms (scale, flips, crop) hit image and mask alike; blur and JPEG hit the
/// image only. Undersized inputs are reflection-padded before cropping.
AugmentedSample augment(const ImageSample& sample, const AugmentationConfig& cfg, Rng& rng);

/// Deterministic resize-only path used at inference.
AugmentedSample prepare_views(const ImageSample& sample, int crop_size, int clip_input_size);

/// Writes n synthetic samples (half real, half fake with a textured rectangle) and a manifest.
Manifest make_fixtures(const std::filesystem::path& out_dir, int n, int size, std::uint64_t seed);

}  // namespace maskclip::data
