#include <random>

#include <doctest.h>

#include "maskclip/data.hpp"
#include "maskclip/engine.hpp"
#include "maskclip/errors.hpp"
#include "maskclip/evaluation.hpp"
#include "support.hpp"

using namespace maskclip;
using namespace maskclip::evaluation;
using data::Label;

namespace {

cv::Mat mask(int rows, int cols, std::initializer_list<int> v) {
  cv::Mat m(rows, cols, CV_8UC1);
  std::copy(v.begin(), v.end(), m.begin<uchar>());
  return m;
}

ImageResult result(const std::string& subset, Label label, double p, cv::Mat pred, cv::Mat gt) {
  return ImageResult{subset, label, p, std::move(pred), std::move(gt)};
}

}  // namespace

TEST_CASE("pixel metrics") {
  const auto gt = mask(2, 2, {1, 1, 0, 0});
  SUBCASE("perfect overlap") {
    const auto s = pixel_metrics(gt, gt);
    CHECK(s.f1 == 1.0);
    CHECK(s.iou == 1.0);
  }
  SUBCASE("all-ones prediction against two positives") {
    const auto c = pixel_counts(mask(2, 2, {1, 1, 1, 1}), gt);
    CHECK(c.tp == 2);
    CHECK(c.fp == 2);
    CHECK(c.fn == 0);
    const auto s = scores_from_counts(c);
    CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.iou == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("empty prediction") {
    const auto s = pixel_metrics(mask(2, 2, {0, 0, 0, 0}), gt);
    CHECK(s.f1 == 0.0);
    CHECK(s.iou == 0.0);
  }
  SUBCASE("both empty follows the allow_empty switch") {
    const auto z = mask(2, 2, {0, 0, 0, 0});
    CHECK(pixel_metrics(z, z).f1 == 0.0);
    CHECK(pixel_metrics(z, z, true).f1 == 1.0);
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(pixel_metrics(cv::Mat::zeros(2, 3, CV_8UC1), gt), ShapeError); }
}

TEST_CASE("pixel metrics agree with brute-force counting and the Dice-Jaccard identity") {
  std::mt19937_64 rng(2024);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 200; ++trial) {
    cv::Mat pred(16, 16, CV_8UC1), gt(16, 16, CV_8UC1);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < 256; ++i) {
      const bool p = coin(rng), g = coin(rng);
      pred.data[i] = p;
      gt.data[i] = g;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    const auto c = pixel_counts(pred, gt);
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.fn == fn);
    const auto s = pixel_metrics(pred, gt);
    CHECK(std::abs(s.f1 - 2 * s.iou / (1 + s.iou)) <= 1e-9);
  }
}

TEST_CASE("image metrics") {
  SUBCASE("perfect") {
    const auto s = image_metrics({0.9, 0.2}, {Label::fake, Label::real});
    CHECK(s.accuracy == 1.0);
    CHECK(s.f1 == 1.0);
  }
  SUBCASE("one false positive") {
    const auto s = image_metrics({0.9, 0.9}, {Label::fake, Label::real});
    CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.accuracy == 0.5);
  }
  SUBCASE("ties at the threshold count as real") {
    const auto s = image_metrics({0.5, 0.5, 0.5, 0.5}, {Label::fake, Label::real, Label::real, Label::real});
    CHECK(s.accuracy == 0.75);
    CHECK(s.f1 == 0.0);
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(image_metrics({}, {}), ValidationError);
    CHECK_THROWS_AS(image_metrics({0.1}, {}), ValidationError);
  }
}

TEST_CASE("aggregation") {
  const auto gt = mask(1, 5, {1, 1, 1, 1, 1});
  const auto z = mask(1, 5, {0, 0, 0, 0, 0});
  SUBCASE("AVG is the arithmetic mean of subset scores") {
    std::vector<ImageResult> r{
        result("a", Label::fake, 0.9, mask(1, 5, {1, 1, 0, 0, 0}), mask(1, 5, {1, 1, 1, 1, 1})),
        result("b", Label::fake, 0.9, mask(1, 5, {1, 1, 1, 0, 0}), mask(1, 5, {1, 1, 1, 1, 1})),
    };
    const auto rep = aggregate(r);
    REQUIRE(rep.subsets.size() == 2);
    const double fa = 2.0 * 2 / (2 * 2 + 3), fb = 2.0 * 3 / (2 * 3 + 2);
    CHECK(*rep.subsets[0].pixel_f1 == doctest::Approx(fa));
    CHECK(*rep.average.pixel_f1 == doctest::Approx((fa + fb) / 2));
  }
  SUBCASE("a subset without fakes has absent pixel metrics") {
    std::vector<ImageResult> r{result("real_only", Label::real, 0.1, z, z), result("mixed", Label::fake, 0.9, gt, gt)};
    const auto rep = aggregate(r);
    CHECK(rep.subsets[1].subset == "real_only");
    CHECK_FALSE(rep.subsets[1].pixel_f1.has_value());
    CHECK(*rep.average.pixel_f1 == 1.0);
    const auto csv = rep.to_csv();
    CHECK(csv.rfind("subset,n_images,pixel_IoU,pixel_F1,image_F1,image_Acc\n", 0) == 0);
    CHECK(csv.find("real_only,1,,,0.000000,1.000000") != std::string::npos);
    CHECK(rep.to_json().at("subsets").at(1).at("pixel_F1").is_null());
  }
  SUBCASE("a perfect oracle scores 1 everywhere") {
    std::vector<ImageResult> r{result("x", Label::fake, 1.0, gt, gt), result("x", Label::real, 0.0, z, z),
                               result("y", Label::fake, 1.0, gt, gt), result("y", Label::real, 0.0, z, z)};
    const auto avg = aggregate(r).average;
    CHECK(*avg.pixel_f1 == 1.0);
    CHECK(*avg.pixel_iou == 1.0);
    CHECK(avg.image_f1 == 1.0);
    CHECK(avg.image_acc == 1.0);
  }
  SUBCASE("two subsets at 0.4 and 0.6 average to 0.5") {
    std::vector<ImageResult> r;
    // F1 0.4: tp=1, fp+fn=3. F1 0.6: tp=3, fp+fn=4.
    r.push_back(result("p", Label::fake, 0.9, mask(1, 5, {1, 1, 1, 0, 0}), mask(1, 5, {1, 0, 0, 1, 0})));
    r.push_back(result("q", Label::fake, 0.9, mask(1, 8, {1, 1, 1, 1, 1, 0, 0, 0}), mask(1, 8, {1, 1, 1, 0, 0, 1, 1, 0})));
    const auto avg = aggregate(r).average;
    CHECK(*avg.pixel_f1 == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("a constant-output model on balanced fixtures scores accuracy 0.5") {
  test_support::TempDir dir("evalconst");
  const auto m = data::make_fixtures(dir.path(), 16, 64, 7);
  auto state = engine::init_state(test_support::toy_tree());
  {
    torch::NoGradGuard g;
    state.model->spm->vsa->proj->weight.zero_();
    state.model->spm->vsa->proj->bias.zero_();
  }
  const auto results = predict_manifest(m, state);
  for (const auto& r : results) {
    CHECK(r.p_fake == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(cv::countNonZero(r.pred_mask) == 0);
    CHECK(r.pred_mask.size() == r.gt_mask.size());
  }
  const auto report = evaluate(m, state);
  CHECK(report.average.image_acc == doctest::Approx(0.5));
}
