#include <fstream>

#include <doctest.h>

#include "maskclip/data.hpp"
#include "maskclip/engine.hpp"
#include "maskclip/errors.hpp"
#include "support.hpp"

using namespace maskclip;
namespace fs = std::filesystem;

namespace {

std::map<std::string, torch::Tensor> snapshot(const std::map<std::string, torch::Tensor>& params) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& [k, v] : params) out[k] = v.detach().clone();
  return out;
}

}  // namespace

TEST_CASE("training contracts on the fixture set") {
  test_support::TempDir dir("engine");
  const auto m = data::make_fixtures(dir / "fx", 16, 64, 7);

  SUBCASE("one step at learning rate 0 leaves every tunable parameter unchanged") {
    auto state = engine::init_state(test_support::toy_tree({"training.learning_rate=0", "training.max_steps=1"}));
    const auto before = snapshot(state.model->tunable_parameters());
    const auto log = engine::train(state, m);
    CHECK(log.steps.size() == 1);
    for (const auto& [k, v] : state.model->tunable_parameters()) {
      INFO(k);
      CHECK(torch::equal(v, before.at(k)));
    }
  }
  SUBCASE("ten steps leave the frozen group untouched and move the tunable group") {
    auto state = engine::init_state(test_support::toy_tree({"training.max_steps=10", "training.batch_size=4"}));
    const auto digest = state.model->frozen_digest();
    const auto before = snapshot(state.model->tunable_parameters());
    const auto log = engine::train(state, m);
    CHECK(log.steps.size() == 10);
    CHECK(state.step == 10);
    CHECK(state.model->frozen_digest() == digest);
    bool moved = false;
    for (const auto& [k, v] : state.model->tunable_parameters()) moved |= !torch::equal(v, before.at(k));
    CHECK(moved);
  }
  SUBCASE("checkpoints are written per epoch and at the end") {
    auto state = engine::init_state(test_support::toy_tree({"training.epochs=2", "training.max_steps=0",
                                                            "training.checkpoint_every=1", "training.batch_size=8"}));
    engine::TrainOptions opts;
    opts.checkpoint_dir = dir / "ckpt";
    const auto log = engine::train(state, m, opts);
    CHECK(log.epochs.size() == 2);
    CHECK(log.epochs[0].steps == 2);
    CHECK(fs::exists(dir / "ckpt" / "checkpoint_epoch_1.safetensors"));
    CHECK(fs::exists(dir / "ckpt" / "checkpoint_epoch_2.safetensors"));
    CHECK(fs::exists(dir / "ckpt" / "checkpoint_last.safetensors.json"));
  }
  SUBCASE("a single-class training split is rejected") {
    auto reals = m;
    std::erase_if(reals.entries, [](const auto& e) { return e.label == data::Label::fake; });
    auto state = engine::init_state(test_support::toy_tree());
    CHECK_THROWS_AS(engine::train(state, reals), ValidationError);
  }
}

TEST_CASE("prediction") {
  auto state = engine::init_state(test_support::toy_tree());
  cv::Mat image(48, 80, CV_32FC3);
  cv::RNG(1).fill(image, cv::RNG::UNIFORM, 0.0, 1.0);

  SUBCASE("fresh state: mask logits equal the refinement bias everywhere") {
    const auto r = engine::predict(state, image);
    CHECK(r.mask_logits.sizes().vec() == std::vector<std::int64_t>{48, 80});
    CHECK(r.mask_logits.abs().max().item<double>() == 0.0);
    CHECK(r.p_fake >= 0.0);
    CHECK(r.p_fake <= 1.0);
  }
  SUBCASE("logits of -10 give an empty binary mask") {
    {
      torch::NoGradGuard g;
      state.model->spm->tvca->refine->bias[1] = -10.0;
    }
    const auto r = engine::predict(state, image);
    CHECK(r.mask_logits.max().item<double>() == doctest::Approx(-10.0));
    CHECK(cv::countNonZero(r.mask_binary) == 0);
    CHECK(r.mask_binary.size() == image.size());
  }
  SUBCASE("positive logits give a full mask at threshold 0.5 but not at 0.99") {
    {
      torch::NoGradGuard g;
      state.model->spm->tvca->refine->bias[1] = 1.0;
    }
    CHECK(cv::countNonZero(engine::predict(state, image).mask_binary) == 48 * 80);
    CHECK(cv::countNonZero(engine::predict(state, image, 0.99).mask_binary) == 0);
  }
}

TEST_CASE("state persistence") {
  test_support::TempDir dir("state");
  const auto m = data::make_fixtures(dir / "fx", 4, 64, 7);
  auto state = engine::init_state(test_support::toy_tree({"training.max_steps=2", "training.batch_size=2"}));
  engine::train(state, m);
  const auto path = dir / "s.safetensors";
  engine::save_state(state, path);

  SUBCASE("roundtrip restores parameters, optimizer moments and counters bitwise") {
    auto loaded = engine::load_state(path);
    CHECK(loaded.step == 2);
    CHECK(loaded.seed == 7);
    const auto a = state.model->state();
    const auto b = loaded.model->state();
    REQUIRE(a.size() == b.size());
    for (const auto& [k, v] : a) CHECK(torch::equal(v, b.at(k)));
    CHECK(loaded.optimizer->state().size() == state.optimizer->state().size());
    // Continuing both runs by one step stays bitwise identical.
    auto more = m;
    state.config["training"]["max_steps"] = 3;
    loaded.config["training"]["max_steps"] = 3;
    engine::train(state, more);
    engine::train(loaded, more);
    for (const auto& [k, v] : state.model->tunable_parameters()) CHECK(torch::equal(v, loaded.model->tunable_parameters().at(k)));
  }
  SUBCASE("truncated checkpoint") {
    fs::resize_file(path, fs::file_size(path) / 2);
    CHECK_THROWS_AS(engine::load_state(path), CheckpointError);
  }
  SUBCASE("missing checkpoint") { CHECK_THROWS_AS(engine::load_state(dir / "nope.safetensors"), CheckpointError); }
  SUBCASE("version mismatch") {
    std::ifstream in(path.string() + ".json");
    auto meta = nlohmann::json::parse(in);
    in.close();
    meta["format_version"] = 99;
    std::ofstream(path.string() + ".json") << meta.dump();
    CHECK_THROWS_WITH_AS(engine::load_state(path), doctest::Contains("version"), CheckpointError);
  }
}
