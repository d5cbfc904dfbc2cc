#include "maskclip/data.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "maskclip/errors.hpp"
#include "maskclip/image_ops.hpp"

namespace maskclip::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Label l) { return l == Label::real ? "real" : "fake"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Label parse_label(const std::string& s) {
  if (s == "real") return Label::real;
  if (s == "fake") return Label::fake;
  throw ParseError("label must be \"real\" or \"fake\", got \"" + s + "\"");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ParseError("split must be \"train\" or \"test\", got \"" + s + "\"");
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Rng sample_rng(std::uint64_t global_seed, const std::string& sample_id) {
  const std::uint64_t h = fnv1a(sample_id);
  std::seed_seq seq{static_cast<std::uint32_t>(global_seed), static_cast<std::uint32_t>(global_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

void ImageSample::validate() const {
  if (image.empty() || image.type() != CV_32FC3) throw ValidationError(id + ": image must be a non-empty RGB float image");
  if (mask.type() != CV_8UC1) throw ValidationError(id + ": mask must be single-channel 8-bit");
  if (mask.rows != image.rows || mask.cols != image.cols) throw ValidationError(id + ": mask dimensions differ from image");
  double lo = 0, hi = 0;
  cv::minMaxLoc(mask, &lo, &hi);
  if (lo < 0 || hi > 1) throw ValidationError(id + ": mask values must be in {0,1}");
  if (label == Label::real && hi > 0) throw ValidationError(id + ": real sample carries a nonzero mask");
}

fs::path Manifest::resolve(const std::string& p) const {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

Manifest Manifest::filter(std::optional<Split> split) const {
  Manifest out;
  out.base_dir = base_dir;
  for (const auto& e : entries)
    if (!split || e.split == *split) out.entries.push_back(e);
  return out;
}

namespace {

const std::set<std::string> kManifestKeys = {"id", "image_path", "mask_path", "label", "generator_tag", "split"};

ManifestEntry parse_entry(const std::string& line, std::size_t lineno) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object", lineno);
  std::set<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
  if (keys != kManifestKeys) {
    std::string msg = "record keys must be exactly {id,image_path,mask_path,label,generator_tag,split}";
    for (const auto& k : keys)
      if (!kManifestKeys.count(k)) msg += "; unexpected \"" + k + "\"";
    for (const auto& k : kManifestKeys)
      if (!keys.count(k)) msg += "; missing \"" + k + "\"";
    throw ParseError(msg, lineno);
  }
  try {
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.image_path = j.at("image_path").get<std::string>();
    if (!j.at("mask_path").is_null()) e.mask_path = j.at("mask_path").get<std::string>();
    e.label = parse_label(j.at("label").get<std::string>());
    e.generator_tag = j.at("generator_tag").get<std::string>();
    e.split = parse_split(j.at("split").get<std::string>());
    return e;
  } catch (const json::type_error& err) {
    throw ParseError(std::string("wrong field type: ") + err.what(), lineno);
  } catch (const ParseError& err) {
    throw ParseError(err.what(), lineno);
  }
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    m.entries.push_back(parse_entry(line, lineno));
  }

  std::set<std::string> ids;
  for (const auto& e : m.entries)
    if (!ids.insert(e.id).second) throw ValidationError("duplicate id: " + e.id);

  std::vector<std::string> missing;
  for (const auto& e : m.entries) {
    if (!fs::exists(m.resolve(e.image_path))) missing.push_back(e.image_path);
    if (e.mask_path && !fs::exists(m.resolve(*e.mask_path))) missing.push_back(*e.mask_path);
  }
  if (!missing.empty()) {
    std::string msg = "manifest references missing files:";
    for (const auto& p : missing) msg += " " + p;
    throw ValidationError(msg);
  }

  for (const auto& e : m.entries) {
    if (e.label == Label::real && e.mask_path) {
      const cv::Mat mask = image_ops::read_mask(m.resolve(*e.mask_path));
      if (cv::countNonZero(mask) > 0) throw ValidationError(e.id + ": label \"real\" but mask has positive pixels");
    }
  }
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  for (const auto& e : m.entries) {
    json j;
    j["id"] = e.id;
    j["image_path"] = e.image_path;
    j["mask_path"] = e.mask_path ? json(*e.mask_path) : json(nullptr);
    j["label"] = to_string(e.label);
    j["generator_tag"] = e.generator_tag;
    j["split"] = to_string(e.split);
    out << j.dump() << '\n';
  }
}

ImageSample load_sample(const Manifest& m, const ManifestEntry& e) {
  ImageSample s;
  s.id = e.id;
  s.label = e.label;
  s.generator_tag = e.generator_tag;
  s.split = e.split;
  s.image = image_ops::read_image(m.resolve(e.image_path));
  if (e.mask_path) {
    s.mask = image_ops::read_mask(m.resolve(*e.mask_path));
  } else {
    s.mask = cv::Mat(s.image.rows, s.image.cols, CV_8UC1, cv::Scalar(e.label == Label::fake ? 1 : 0));
  }
  s.validate();
  return s;
}

void AugmentationConfig::validate(int spatial_patch, int semantic_patch) const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0,1]");
  };
  prob(blur_prob, "blur_prob");
  prob(jpeg_prob, "jpeg_prob");
  prob(hflip_prob, "hflip_prob");
  prob(vflip_prob, "vflip_prob");
  if (!(scale_min > 0 && scale_min <= scale_max)) throw ConfigError("scale range must satisfy 0 < min <= max");
  if (blur_max_kernel < 3 || blur_max_kernel % 2 == 0) throw ConfigError("blur_max_kernel must be odd and >= 3");
  if (jpeg_min_quality < 1 || jpeg_min_quality > 100) throw ConfigError("jpeg_min_quality must be in [1,100]");
  if (crop_size <= 0 || crop_size % spatial_patch != 0)
    throw ConfigError("crop_size must be positive and divisible by the spatial patch size");
  if (clip_input_size <= 0 || clip_input_size % semantic_patch != 0)
    throw ConfigError("clip_input_size must be positive and divisible by the semantic patch size");
}

AugmentedSample augment(const ImageSample& sample, const AugmentationConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> scale_dist(cfg.scale_min, cfg.scale_max);

  // Every draw happens unconditionally so the stream layout does not depend on outcomes.
  const double scale = scale_dist(rng);
  const bool hflip = unit(rng) < cfg.hflip_prob;
  const bool vflip = unit(rng) < cfg.vflip_prob;
  const double crop_y = unit(rng);
  const double crop_x = unit(rng);
  const bool blur = unit(rng) < cfg.blur_prob;
  const int blur_kernel = 3 + 2 * std::uniform_int_distribution<int>(0, (cfg.blur_max_kernel - 3) / 2)(rng);
  const bool jpeg = unit(rng) < cfg.jpeg_prob;
  const int jpeg_quality = std::uniform_int_distribution<int>(cfg.jpeg_min_quality, 100)(rng);

  cv::Mat image = sample.image;
  cv::Mat mask = sample.mask;
  if (scale != 1.0) {
    const int w = std::max(1, static_cast<int>(std::lround(image.cols * scale)));
    const int h = std::max(1, static_cast<int>(std::lround(image.rows * scale)));
    image = image_ops::resize_image(image, w, h);
    mask = image_ops::resize_mask(mask, w, h);
  }
  // Flips write into fresh buffers: image/mask may still alias the caller's sample.
  auto flip = [](cv::Mat& m, int code) {
    cv::Mat out;
    cv::flip(m, out, code);
    m = out;
  };
  if (hflip) {
    flip(image, 1);
    flip(mask, 1);
  }
  if (vflip) {
    flip(image, 0);
    flip(mask, 0);
  }
  if (image.rows < cfg.crop_size || image.cols < cfg.crop_size) {
    image = image_ops::reflect_pad(image, cfg.crop_size, cfg.crop_size);
    mask = image_ops::reflect_pad(mask, cfg.crop_size, cfg.crop_size);
  }
  const int y0 = static_cast<int>(crop_y * (image.rows - cfg.crop_size + 1)) % (image.rows - cfg.crop_size + 1);
  const int x0 = static_cast<int>(crop_x * (image.cols - cfg.crop_size + 1)) % (image.cols - cfg.crop_size + 1);
  const cv::Rect roi(x0, y0, cfg.crop_size, cfg.crop_size);

  AugmentedSample out;
  out.sample = sample;
  out.sample.image = image(roi).clone();
  out.sample.mask = mask(roi).clone();
  if (blur) out.sample.image = image_ops::gaussian_blur(out.sample.image, blur_kernel);
  if (jpeg) out.sample.image = image_ops::jpeg_roundtrip(out.sample.image, jpeg_quality);
  out.semantic_view = image_ops::resize_image(out.sample.image, cfg.clip_input_size, cfg.clip_input_size);
  return out;
}

AugmentedSample prepare_views(const ImageSample& sample, int crop_size, int clip_input_size) {
  AugmentedSample out;
  out.sample = sample;
  out.sample.image = image_ops::resize_image(sample.image, crop_size, crop_size);
  out.sample.mask = image_ops::resize_mask(sample.mask, crop_size, crop_size);
  out.semantic_view = image_ops::resize_image(out.sample.image, clip_input_size, clip_input_size);
  return out;
}

namespace {

cv::Mat smooth_background(int size, Rng& rng) {
  std::uniform_real_distribution<float> color(0.1f, 0.9f);
  std::normal_distribution<float> noise(0.0f, 0.02f);
  cv::Vec3f corners[4];
  for (auto& c : corners) c = cv::Vec3f(color(rng), color(rng), color(rng));
  cv::Mat img(size, size, CV_32FC3);
  for (int y = 0; y < size; ++y) {
    const float v = static_cast<float>(y) / static_cast<float>(size - 1);
    for (int x = 0; x < size; ++x) {
      const float u = static_cast<float>(x) / static_cast<float>(size - 1);
      cv::Vec3f px = (1 - u) * (1 - v) * corners[0] + u * (1 - v) * corners[1] + (1 - u) * v * corners[2] + u * v * corners[3];
      for (int c = 0; c < 3; ++c) px[c] = std::clamp(px[c] + noise(rng), 0.0f, 1.0f);
      img.at<cv::Vec3f>(y, x) = px;
    }
  }
  return img;
}

void paint_texture(cv::Mat& img, const cv::Rect& r, Rng& rng) {
  std::uniform_int_distribution<int> period_dist(2, 4);
  std::uniform_real_distribution<float> channel(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, 0.08f);
  const int period = period_dist(rng);
  const cv::Vec3f a(channel(rng), channel(rng), channel(rng));
  const cv::Vec3f b(1.0f - a[0], 1.0f - a[1], 1.0f - a[2]);
  for (int y = r.y; y < r.y + r.height; ++y) {
    for (int x = r.x; x < r.x + r.width; ++x) {
      cv::Vec3f px = (((x / period) + (y / period)) % 2 == 0) ? a : b;
      for (int c = 0; c < 3; ++c) px[c] = std::clamp(px[c] + noise(rng), 0.0f, 1.0f);
      img.at<cv::Vec3f>(y, x) = px;
    }
  }
}

}  // namespace

Manifest make_fixtures(const fs::path& out_dir, int n, int size, std::uint64_t seed) {
  if (n < 2) throw ValidationError("make_fixtures needs n >= 2");
  if (size < 32) throw ValidationError("make_fixtures needs size >= 32");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec || !fs::is_directory(out_dir / "images")) throw IoError("cannot create fixture directory: " + out_dir.string());

  Manifest m;
  m.base_dir = out_dir;
  for (int i = 0; i < n; ++i) {
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "fx%04d", i);
    const std::string id = id_buf;
    Rng rng = sample_rng(seed, id);
    const bool fake = (i % 2) == 1;

    ManifestEntry e;
    e.id = id;
    e.label = fake ? Label::fake : Label::real;
    e.generator_tag = (i / 2) % 2 == 0 ? "fixture-a" : "fixture-b";
    e.split = Split::train;
    e.image_path = "images/" + id + ".png";

    cv::Mat img = smooth_background(size, rng);
    if (fake) {
      std::uniform_int_distribution<int> side(size / 4, size / 2);
      const int w = side(rng), h = side(rng);
      const int x = std::uniform_int_distribution<int>(0, size - w)(rng);
      const int y = std::uniform_int_distribution<int>(0, size - h)(rng);
      const cv::Rect r(x, y, w, h);
      paint_texture(img, r, rng);
      cv::Mat mask = cv::Mat::zeros(size, size, CV_8UC1);
      mask(r).setTo(1);
      e.mask_path = "masks/" + id + ".png";
      image_ops::write_mask(out_dir / *e.mask_path, mask);
    }
    image_ops::write_image(out_dir / e.image_path, img);
    m.entries.push_back(e);
  }
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

}  // namespace maskclip::data
