#include <fstream>

#include <doctest.h>
#include <opencv2/imgproc.hpp>

#include "maskclip/data.hpp"
#include "maskclip/digest.hpp"
#include "maskclip/errors.hpp"
#include "maskclip/image_ops.hpp"
#include "support.hpp"

using namespace maskclip;
using namespace maskclip::data;
namespace fs = std::filesystem;

namespace {

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

ImageSample random_sample(int size, std::uint64_t seed) {
  cv::RNG rng(seed);
  ImageSample s;
  s.id = "s";
  s.image = cv::Mat(size, size, CV_32FC3);
  rng.fill(s.image, cv::RNG::UNIFORM, 0.0, 1.0);
  s.mask = cv::Mat::zeros(size, size, CV_8UC1);
  s.label = Label::fake;
  return s;
}

AugmentationConfig quiet(int crop, int clip) {
  AugmentationConfig c;
  c.blur_prob = c.jpeg_prob = c.hflip_prob = c.vflip_prob = 0.0;
  c.scale_min = c.scale_max = 1.0;
  c.crop_size = crop;
  c.clip_input_size = clip;
  return c;
}

bool same(const cv::Mat& a, const cv::Mat& b) {
  return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0;
}

}  // namespace

TEST_CASE("manifest loading") {
  test_support::TempDir dir("manifest");
  SUBCASE("empty file gives an empty manifest") {
    write_lines(dir / "m.jsonl", {});
    CHECK(load_manifest(dir / "m.jsonl").size() == 0);
  }
  SUBCASE("three-entry roundtrip preserves every field") {
    const auto fx = make_fixtures(dir / "fx", 4, 32, 1);
    Manifest m = fx;
    m.entries.resize(3);
    m.entries[2].split = Split::test;
    m.entries[1].generator_tag = "other";
    save_manifest(m, dir / "fx" / "three.jsonl");
    const auto back = load_manifest(dir / "fx" / "three.jsonl");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(back.entries[i] == m.entries[i]);
    CHECK(back.filter(Split::test).size() == 1);
    CHECK(back.filter(std::nullopt).size() == 3);
  }
  SUBCASE("malformed line reports its line number") {
    make_fixtures(dir.path(), 2, 32, 1);
    std::ifstream in(dir / "manifest.jsonl");
    std::string first;
    std::getline(in, first);
    write_lines(dir / "bad.jsonl", {first, "", "{not json"});
    try {
      load_manifest(dir / "bad.jsonl");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("duplicate id") {
    make_fixtures(dir.path(), 2, 32, 1);
    std::ifstream in(dir / "manifest.jsonl");
    std::string first;
    std::getline(in, first);
    write_lines(dir / "dup.jsonl", {first, first});
    CHECK_THROWS_AS(load_manifest(dir / "dup.jsonl"), ValidationError);
  }
  SUBCASE("dangling paths are all listed") {
    write_lines(dir / "dangling.jsonl",
                {R"({"id":"a","image_path":"nope_a.png","mask_path":null,"label":"real","generator_tag":"g","split":"train"})",
                 R"({"id":"b","image_path":"nope_b.png","mask_path":"nope_m.png","label":"fake","generator_tag":"g","split":"train"})"});
    try {
      load_manifest(dir / "dangling.jsonl");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("nope_a.png") != std::string::npos);
      CHECK(msg.find("nope_b.png") != std::string::npos);
      CHECK(msg.find("nope_m.png") != std::string::npos);
    }
  }
  SUBCASE("real entry with a nonzero mask") {
    make_fixtures(dir.path(), 2, 32, 1);
    write_lines(dir / "realmask.jsonl",
                {R"({"id":"x","image_path":"images/fx0000.png","mask_path":"masks/fx0001.png","label":"real","generator_tag":"g","split":"train"})"});
    CHECK_THROWS_AS(load_manifest(dir / "realmask.jsonl"), ValidationError);
  }
  SUBCASE("unknown label") {
    write_lines(dir / "label.jsonl",
                {R"({"id":"x","image_path":"a.png","mask_path":null,"label":"maybe","generator_tag":"g","split":"train"})"});
    CHECK_THROWS_AS(load_manifest(dir / "label.jsonl"), ParseError);
  }
}

TEST_CASE("fixtures") {
  test_support::TempDir dir("fixtures");
  SUBCASE("n=2: one real with an empty mask, one fake with a rectangle") {
    const auto m = make_fixtures(dir.path(), 2, 64, 3);
    REQUIRE(m.size() == 2);
    const auto real = load_sample(m, m.entries[0]);
    const auto fake = load_sample(m, m.entries[1]);
    CHECK(real.label == Label::real);
    CHECK(cv::countNonZero(real.mask) == 0);
    CHECK(fake.label == Label::fake);
    CHECK(cv::countNonZero(fake.mask) > 0);
    CHECK(fake.image.size() == cv::Size(64, 64));
    fake.validate();
  }
  SUBCASE("n=16 is balanced") {
    const auto m = make_fixtures(dir.path(), 16, 64, 7);
    const auto fakes = std::count_if(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.label == Label::fake; });
    CHECK(fakes == 8);
  }
  SUBCASE("fixed seed gives identical bytes, another seed differs") {
    make_fixtures(dir / "a", 6, 64, 7);
    make_fixtures(dir / "b", 6, 64, 7);
    make_fixtures(dir / "c", 6, 64, 8);
    CHECK(digest::directory_sha256(dir / "a") == digest::directory_sha256(dir / "b"));
    CHECK(digest::directory_sha256(dir / "a") != digest::directory_sha256(dir / "c"));
  }
}

TEST_CASE("augmentation") {
  SUBCASE("all probabilities zero at crop size is the identity") {
    const auto s = random_sample(64, 1);
    Rng rng(5);
    const auto a = augment(s, quiet(64, 64), rng);
    CHECK(same(a.sample.image, s.image));
    CHECK(same(a.sample.mask, s.mask));
    CHECK(same(a.semantic_view, s.image));
  }
  SUBCASE("horizontal flip moves a left-half mask to the right half") {
    auto s = random_sample(32, 2);
    s.mask(cv::Rect(0, 0, 16, 32)).setTo(1);
    auto cfg = quiet(32, 16);
    cfg.hflip_prob = 1.0;
    Rng rng(6);
    const auto a = augment(s, cfg, rng);
    cv::Mat flipped;
    cv::flip(s.mask, flipped, 1);
    CHECK(same(a.sample.mask, flipped));
    CHECK(cv::countNonZero(a.sample.mask(cv::Rect(16, 0, 16, 32))) == 16 * 32);
    cv::Mat img_flipped;
    cv::flip(s.image, img_flipped, 1);
    CHECK(same(a.sample.image, img_flipped));
  }
  SUBCASE("same seed gives bitwise-identical output") {
    auto s = random_sample(80, 3);
    s.mask(cv::Rect(10, 10, 30, 20)).setTo(1);
    AugmentationConfig cfg;
    cfg.crop_size = 64;
    cfg.clip_input_size = 32;
    cfg.blur_prob = cfg.jpeg_prob = 0.5;
    Rng r1 = sample_rng(9, "abc"), r2 = sample_rng(9, "abc");
    const auto a = augment(s, cfg, r1);
    const auto b = augment(s, cfg, r2);
    CHECK(same(a.sample.image, b.sample.image));
    CHECK(same(a.sample.mask, b.sample.mask));
    CHECK(same(a.semantic_view, b.semantic_view));
  }
  SUBCASE("undersized input is padded, never rejected") {
    auto s = random_sample(20, 4);
    Rng rng(7);
    AugmentationConfig cfg;
    cfg.crop_size = 64;
    cfg.clip_input_size = 32;
    const auto a = augment(s, cfg, rng);
    CHECK(a.sample.image.size() == cv::Size(64, 64));
    CHECK(a.sample.mask.size() == cv::Size(64, 64));
    CHECK(a.semantic_view.size() == cv::Size(32, 32));
  }
  SUBCASE("mask stays binary under random geometry") {
    auto s = random_sample(64, 5);
    s.mask(cv::Rect(5, 5, 40, 30)).setTo(1);
    AugmentationConfig cfg;
    cfg.crop_size = 48;
    cfg.clip_input_size = 16;
    for (int i = 0; i < 10; ++i) {
      Rng rng(100 + i);
      const auto a = augment(s, cfg, rng);
      double lo, hi;
      cv::minMaxLoc(a.sample.mask, &lo, &hi);
      CHECK(lo >= 0);
      CHECK(hi <= 1);
    }
  }
  SUBCASE("config validation") {
    AugmentationConfig cfg;
    cfg.hflip_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(32, 14), ConfigError);
    cfg = AugmentationConfig{};
    cfg.crop_size = 500;
    CHECK_THROWS_AS(cfg.validate(32, 14), ConfigError);
    AugmentationConfig{}.validate(32, 14);
  }
}

TEST_CASE("sample streams differ by id and seed") {
  Rng a = sample_rng(1, "x"), b = sample_rng(1, "y"), c = sample_rng(2, "x"), d = sample_rng(1, "x");
  const auto va = a();
  CHECK(va != b());
  CHECK(va != c());
  CHECK(va == d());
}

TEST_CASE("a fake entry without a mask is fully generated") {
  test_support::TempDir dir("fullfake");
  auto m = make_fixtures(dir.path(), 2, 32, 1);
  m.entries[1].mask_path.reset();
  const auto s = load_sample(m, m.entries[1]);
  CHECK(cv::countNonZero(s.mask) == 32 * 32);
}

TEST_CASE("image helpers") {
  SUBCASE("blur of a constant image is unchanged") {
    cv::Mat c(16, 16, CV_32FC3, cv::Scalar(0.3, 0.6, 0.9));
    CHECK(cv::norm(image_ops::gaussian_blur(c, 5), c, cv::NORM_INF) < 1e-6);
    CHECK(same(image_ops::gaussian_blur(c, 1), c));
  }
  SUBCASE("sigma formula") {
    CHECK(image_ops::gaussian_sigma(3) == doctest::Approx(0.8));
    CHECK(image_ops::gaussian_sigma(23) == doctest::Approx(0.3 * 10 + 0.8));
  }
  SUBCASE("tensor conversion is channel-first") {
    cv::Mat img(2, 3, CV_32FC3, cv::Scalar(0.1, 0.2, 0.3));
    const auto t = image_ops::image_to_tensor(img);
    CHECK(t.sizes().vec() == std::vector<std::int64_t>{3, 2, 3});
    CHECK(t[2][1][2].item<float>() == doctest::Approx(0.3));
  }
}
