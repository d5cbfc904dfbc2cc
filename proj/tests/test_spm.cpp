#include <cmath>

#include <doctest.h>

#include "maskclip/errors.hpp"
#include "maskclip/layers.hpp"
#include "maskclip/model.hpp"
#include "maskclip/spm.hpp"

using namespace maskclip;

namespace {

torch::Tensor rows(std::vector<std::vector<double>> r) {
  std::vector<torch::Tensor> out;
  for (auto& v : r) out.push_back(torch::tensor(v, torch::kFloat64));
  return torch::stack(out).unsqueeze(0);
}

model::MaskClip toy_model(spm::FusionPlan plan) {
  auto cfg = model::ModelConfig::toy();
  cfg.plan = std::move(plan);
  cfg.double_precision = true;
  return model::MaskClip(cfg);
}

std::pair<torch::Tensor, torch::Tensor> toy_views(const model::ModelConfig& c, int b = 2) {
  return {torch::rand({b, 3, c.semantic.input_size, c.semantic.input_size}, torch::kFloat64),
          torch::rand({b, 3, c.spatial.input_size, c.spatial.input_size}, torch::kFloat64)};
}

}  // namespace

TEST_CASE("single-head attention with identity projections matches the hand-evaluated softmax") {
  nn::MultiHeadAttention attn(2, 1);
  attn->to(torch::kFloat64);
  attn->set_identity();
  const auto q = rows({{1, 0}});
  const auto k = rows({{1, 0}, {0, 1}});
  const auto v = rows({{2, 0}, {0, 2}});
  const auto s = attn->scores(q, k);
  CHECK(s[0][0][0][0].item<double>() == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(s[0][0][0][1].item<double>() == doctest::Approx(0.0));
  const auto w = attn->weights(q, k);
  CHECK(w[0][0][0][0].item<double>() == doctest::Approx(0.6698).epsilon(1e-4));
  CHECK(w[0][0][0][1].item<double>() == doctest::Approx(0.3302).epsilon(1e-4));
  const auto out = attn->forward(q, k, v);
  CHECK(out[0][0][0].item<double>() == doctest::Approx(1.3396).epsilon(1e-4));
  CHECK(out[0][0][1].item<double>() == doctest::Approx(0.6604).epsilon(1e-4));
}

TEST_CASE("attention properties") {
  torch::manual_seed(3);
  nn::MultiHeadAttention attn(8, 2);
  attn->to(torch::kFloat64);
  SUBCASE("one key returns the projected value row for any query") {
    const auto v = torch::randn({1, 1, 8}, torch::kFloat64);
    const auto k = torch::randn({1, 1, 8}, torch::kFloat64);
    const auto a = attn->forward(torch::randn({1, 3, 8}, torch::kFloat64), k, v);
    const auto expected = attn->out_proj(attn->v_proj(v));
    for (int i = 0; i < 3; ++i) CHECK(torch::allclose(a[0][i], expected[0][0], 1e-12, 1e-12));
  }
  SUBCASE("identical keys average the values uniformly") {
    const auto k = torch::randn({1, 1, 8}, torch::kFloat64).expand({1, 5, 8});
    const auto v = torch::randn({1, 5, 8}, torch::kFloat64);
    const auto a = attn->forward(torch::randn({1, 2, 8}, torch::kFloat64), k, v);
    const auto expected = attn->out_proj(attn->v_proj(v).mean(1, true));
    CHECK(torch::allclose(a, expected.expand({1, 2, 8}), 1e-10, 1e-12));
  }
  SUBCASE("weights are row-stochastic") {
    const auto w = attn->weights(torch::randn({2, 4, 8}, torch::kFloat64), torch::randn({2, 6, 8}, torch::kFloat64));
    CHECK(torch::allclose(w.sum(-1), torch::ones({2, 2, 4}, torch::kFloat64)));
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(attn->forward(torch::randn({1, 2, 6}), torch::randn({1, 2, 8}), torch::randn({1, 2, 8})), ShapeError);
    CHECK_THROWS_AS(nn::MultiHeadAttention(8, 3), ShapeError);
  }
}

TEST_CASE("VSA") {
  torch::manual_seed(4);
  SUBCASE("single token with identity projections returns that token normalized") {
    spm::Vsa vsa(4, 2);
    vsa->to(torch::kFloat64);
    vsa->attn->set_identity();
    {
      torch::NoGradGuard g;
      vsa->proj->weight.copy_(torch::eye(4, torch::kFloat64));
      vsa->proj->bias.zero_();
    }
    const auto cls = torch::randn({3, 4}, torch::kFloat64);
    const auto out = vsa->forward({cls});
    CHECK(torch::allclose(out, cls / cls.norm(2, -1, true), 1e-12, 1e-12));
  }
  SUBCASE("24 layer tokens of width 1024 give one unit vector per image") {
    spm::Vsa vsa(1024, 16);
    std::vector<torch::Tensor> cls;
    for (int l = 0; l < 24; ++l) cls.push_back(torch::randn({1, 1024}));
    const auto g = vsa->forward(cls);
    CHECK(g.sizes().vec() == std::vector<std::int64_t>{1, 1024});
    CHECK(g.norm().item<double>() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("token grid resize") {
  SUBCASE("equal grids are the identity") {
    const auto t = torch::randn({1, 9, 3});
    CHECK(torch::equal(spm::resize_tokens(t, 3, 3, 3, 3), t));
  }
  SUBCASE("2x2 to 4x4 matches the hand-evaluated bilinear kernel") {
    // Half-pixel centres: output rows sample source positions -0.25, 0.25, 0.75, 1.25.
    const auto a = torch::tensor({{1.0, 0.0}, {0.75, 0.25}, {0.25, 0.75}, {0.0, 1.0}}, torch::kFloat64);
    const auto x = torch::tensor({{1.0, 2.0}, {3.0, 5.0}}, torch::kFloat64);
    const auto expected = torch::matmul(torch::matmul(a, x), a.t());
    const auto tokens = x.reshape({1, 4, 1});
    const auto out = spm::resize_tokens(tokens, 2, 2, 4, 4).reshape({4, 4});
    CHECK(torch::allclose(out, expected, 0, 1e-12));
    CHECK(out[0][0].item<double>() == 1.0);
    CHECK(out[0][3].item<double>() == 2.0);
    CHECK(out[3][0].item<double>() == 3.0);
    CHECK(out[3][3].item<double>() == 5.0);
  }
  SUBCASE("grid mismatch") { CHECK_THROWS_AS(spm::resize_tokens(torch::randn({1, 5, 2}), 2, 2, 4, 4), ShapeError); }
}

TEST_CASE("VCA") {
  torch::manual_seed(5);
  spm::Vca vca(6, 8, 2);
  vca->to(torch::kFloat64);
  encoders::LayerFeatures sem;
  sem.patches = torch::randn({2, 4, 6}, torch::kFloat64);
  sem.grid_h = sem.grid_w = 2;
  const auto tokens = torch::randn({2, 16, 8}, torch::kFloat64);
  SUBCASE("zero-initialized output projection returns the input tokens exactly") {
    CHECK(torch::equal(vca->forward(sem, tokens, 4, 4), tokens));
  }
  SUBCASE("non-zero projection changes the tokens and counts invocations") {
    {
      torch::NoGradGuard g;
      vca->attn->out_proj->weight.normal_();
    }
    CHECK_FALSE(torch::allclose(vca->forward(sem, tokens, 4, 4), tokens));
    CHECK(vca->invocations() == 1);
  }
  SUBCASE("missing grid metadata") {
    encoders::LayerFeatures bad = sem;
    bad.grid_h = 0;
    CHECK_THROWS_AS(vca->forward(bad, tokens, 4, 4), ShapeError);
  }
}

TEST_CASE("TVCA") {
  torch::manual_seed(6);
  const int d = 4;
  spm::Tvca tvca(d, d, 1);
  tvca->to(torch::kFloat64);
  tvca->set_identity();
  {
    torch::NoGradGuard g;
    tvca->feature_proj->weight.copy_(torch::eye(d, torch::kFloat64));
    tvca->feature_proj->bias.zero_();
  }
  const auto t_real = torch::tensor({1.0, 0.0, 0.0, 0.0}, torch::kFloat64);
  const auto t_fake = torch::tensor({0.0, 1.0, 0.0, 0.0}, torch::kFloat64);

  SUBCASE("keys orthogonal to t_fake give an all-zero fake map") {
    auto f = torch::randn({1, d, 3, 3}, torch::kFloat64);
    f.select(1, 1).zero_();
    const auto out = tvca->forward(f, t_real, t_fake);
    CHECK(out.select(1, 1).abs().max().item<double>() == 0.0);
  }
  SUBCASE("1x1 map keeps a 1x1 output") {
    const auto out = tvca->forward(torch::randn({2, d, 1, 1}, torch::kFloat64), t_real, t_fake);
    CHECK(out.sizes().vec() == std::vector<std::int64_t>{2, 2, 1, 1});
  }
  SUBCASE("keys t_fake*sqrt(d) and 0 give fake scores (1, 0)") {
    auto f = torch::zeros({1, d, 1, 2}, torch::kFloat64);
    f[0].select(2, 0).select(1, 0).copy_(t_fake * std::sqrt(double(d)));
    const auto s = tvca->score_map(f, t_real, t_fake);
    CHECK(s[0][1][0][0].item<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[0][1][0][1].item<double>() == 0.0);
    CHECK(s[0][0][0][0].item<double>() == doctest::Approx(0.0));
  }
  SUBCASE("fresh block starts at zero logits") {
    spm::Tvca fresh(6, 8, 2);
    CHECK(fresh->forward(torch::randn({1, 6, 3, 3}), torch::randn({8}), torch::randn({8})).abs().max().item<double>() == 0.0);
  }
}

TEST_CASE("fusion plan") {
  SUBCASE("default ViT-L/14 + ViT-B/32 placement") {
    const auto p = spm::FusionPlan::even(24, 12, 4);
    const std::vector<std::pair<int, int>> expected{{5, 2}, {11, 5}, {17, 8}, {23, 11}};
    CHECK(p.pairs == expected);
  }
  SUBCASE("validation") {
    spm::FusionPlan p{{{0, 1}, {1, 1}}};
    CHECK_THROWS_AS(p.validate(2, 2), ConfigError);
    p.pairs = {{2, 0}};
    CHECK_THROWS_AS(p.validate(2, 2), ConfigError);
  }
  SUBCASE("empty plan equals the plain spatial forward") {
    torch::manual_seed(7);
    auto m = toy_model(spm::FusionPlan{});
    auto [sem, sp] = toy_views(m->config());
    torch::NoGradGuard g;
    CHECK(torch::equal(m->forward(sem, sp).spatial_tokens, m->unfused_spatial(sp)));
  }
  SUBCASE("zero-initialized fusion equals the empty plan") {
    torch::manual_seed(8);
    auto m = toy_model(spm::FusionPlan::even(2, 2, 2));
    auto [sem, sp] = toy_views(m->config());
    torch::NoGradGuard g;
    CHECK(torch::equal(m->forward(sem, sp).spatial_tokens, m->unfused_spatial(sp)));
  }
  SUBCASE("one pair runs exactly one VCA") {
    auto m = toy_model(spm::FusionPlan{{{1, 1}}});
    auto [sem, sp] = toy_views(m->config());
    torch::NoGradGuard g;
    m->forward(sem, sp);
    CHECK(m->spm->vca_invocations() == 1);
  }
}

TEST_CASE("prompt embeddings are unit vectors and respond to the prompts") {
  torch::manual_seed(9);
  auto cfg = model::ModelConfig::toy();
  model::MaskClip m(cfg);
  torch::NoGradGuard g;
  auto [t_real, t_fake] = m->spm->prompt->embeddings(*m->text);
  CHECK(t_real.norm().item<double>() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((t_real - t_fake).norm().item<double>() > 0);
  m->spm->prompt->fake.add_(0.5);
  auto [r2, f2] = m->spm->prompt->embeddings(*m->text);
  CHECK(torch::equal(r2, t_real));
  CHECK_FALSE(torch::equal(f2, t_fake));
}
