#include "maskclip/spm.hpp"

#include <cmath>
#include <set>

#include "maskclip/errors.hpp"

namespace maskclip::spm {

namespace F = torch::nn::functional;

torch::Tensor resize_tokens(const torch::Tensor& tokens, int grid_h, int grid_w, int out_h, int out_w) {
  if (grid_h <= 0 || grid_w <= 0) throw ShapeError("token grid metadata missing");
  if (tokens.dim() != 3 || tokens.size(1) != static_cast<std::int64_t>(grid_h) * grid_w)
    throw ShapeError("token count does not match grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  if (grid_h == out_h && grid_w == out_w) return tokens;
  const auto b = tokens.size(0), d = tokens.size(2);
  auto grid = tokens.transpose(1, 2).reshape({b, d, grid_h, grid_w});
  auto resized = F::interpolate(grid, F::InterpolateFuncOptions()
                                          .size(std::vector<std::int64_t>{out_h, out_w})
                                          .mode(torch::kBilinear)
                                          .align_corners(false));
  return resized.flatten(2).transpose(1, 2);
}

void FusionPlan::validate(int semantic_depth, int spatial_depth) const {
  int last = -1;
  for (const auto& [sem, sp] : pairs) {
    if (sem < 0 || sem >= semantic_depth)
      throw ConfigError("fusion plan semantic layer " + std::to_string(sem) + " outside depth " + std::to_string(semantic_depth));
    if (sp < 0 || sp >= spatial_depth)
      throw ConfigError("fusion plan spatial layer " + std::to_string(sp) + " outside depth " + std::to_string(spatial_depth));
    if (sp <= last) throw ConfigError("fusion plan spatial layers must be strictly increasing");
    last = sp;
  }
}

FusionPlan FusionPlan::even(int semantic_depth, int spatial_depth, int count) {
  FusionPlan plan;
  count = std::min(count, spatial_depth);
  for (int i = 1; i <= count; ++i) {
    const int sp = static_cast<int>(std::lround(double(i) * spatial_depth / count)) - 1;
    const int sem = static_cast<int>(std::lround(double(i) * semantic_depth / count)) - 1;
    if (!plan.pairs.empty() && plan.pairs.back().second == sp) continue;
    plan.pairs.emplace_back(sem, sp);
  }
  return plan;
}

PromptBankImpl::PromptBankImpl(int prompt_length, int text_width) {
  real = register_parameter("real", torch::randn({prompt_length, text_width}) * 0.02);
  fake = register_parameter("fake", torch::randn({prompt_length, text_width}) * 0.02);
}

torch::Tensor PromptBankImpl::stacked() const { return torch::stack({real, fake}); }

std::pair<torch::Tensor, torch::Tensor> PromptBankImpl::embeddings(encoders::TextEncoderImpl& text) {
  const bool caching = !torch::GradMode::is_enabled();
  const std::int64_t version = real._version() + fake._version() + text.projection._version();
  if (caching && version == cached_version_ && cached_real_.defined() && cached_real_.dtype() == real.dtype())
    return {cached_real_, cached_fake_};
  auto t = text.forward(stacked());
  if (caching) {
    cached_real_ = t[0].detach();
    cached_fake_ = t[1].detach();
    cached_version_ = version;
  }
  return {t[0], t[1]};
}

VsaImpl::VsaImpl(int width, int heads) {
  attn = register_module("attn", nn::MultiHeadAttention(width, heads));
  proj = register_module("proj", torch::nn::Linear(width, width));
}

torch::Tensor VsaImpl::forward(const std::vector<torch::Tensor>& cls_tokens) {
  if (cls_tokens.empty()) throw ShapeError("VSA needs at least one [CLS] token");
  auto seq = torch::stack(cls_tokens, 1);  // [B, L, D]
  auto pooled = attn(seq, seq, seq).mean(1);
  auto g = proj(pooled);
  return torch::nn::functional::normalize(g, torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

torch::Tensor VsaImpl::project_only(const torch::Tensor& cls) {
  auto g = proj(cls);
  return torch::nn::functional::normalize(g, torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

VcaImpl::VcaImpl(int semantic_width, int spatial_width, int heads) {
  projector = register_module("projector", torch::nn::Linear(semantic_width, spatial_width));
  attn = register_module("attn", nn::MultiHeadAttention(spatial_width, heads));
  attn->zero_output();
}

torch::Tensor VcaImpl::forward(const encoders::LayerFeatures& semantic, const torch::Tensor& spatial_tokens, int grid_h,
                               int grid_w) {
  if (semantic.grid_h <= 0 || semantic.grid_w <= 0 || grid_h <= 0 || grid_w <= 0)
    throw ShapeError("VCA needs grid metadata for both streams");
  if (spatial_tokens.size(1) != static_cast<std::int64_t>(grid_h) * grid_w)
    throw ShapeError("spatial token count does not match its grid");
  ++invocations_;
  auto aligned = resize_tokens(semantic.patches, semantic.grid_h, semantic.grid_w, grid_h, grid_w);
  auto q = projector(aligned);
  return spatial_tokens + attn(q, spatial_tokens, spatial_tokens);
}

TvcaImpl::TvcaImpl(int feature_channels, int text_dim, int heads) : heads_(heads) {
  if (heads < 1 || text_dim % heads != 0) throw ShapeError("TVCA text dimension must be divisible by its head count");
  feature_proj = register_module("feature_proj", torch::nn::Linear(feature_channels, text_dim));
  q_proj = register_module("q_proj", torch::nn::Linear(text_dim, text_dim));
  k_proj = register_module("k_proj", torch::nn::Linear(text_dim, text_dim));
  refine = register_module("refine", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * heads, 2, 1)));
  torch::NoGradGuard guard;
  refine->weight.zero_();
  refine->bias.zero_();
}

torch::Tensor TvcaImpl::score_map(const torch::Tensor& features, const torch::Tensor& t_real, const torch::Tensor& t_fake) {
  if (features.dim() != 4) throw ShapeError("TVCA features must be [B, C, H, W]");
  const auto b = features.size(0), h = features.size(2), w = features.size(3);
  if (h == 0 || w == 0) throw ShapeError("TVCA feature map has zero spatial size");
  const auto d = q_proj->weight.size(0);
  const auto dh = d / heads_;
  auto keys = k_proj(feature_proj(features.flatten(2).transpose(1, 2)));  // [B, HW, D]
  auto queries = q_proj(torch::stack({t_real, t_fake}));                  // [2, D]
  auto k = keys.view({b, h * w, heads_, dh}).permute({0, 2, 1, 3});       // [B, heads, HW, dh]
  auto q = queries.view({2, heads_, dh}).permute({1, 0, 2}).unsqueeze(0);  // [1, heads, 2, dh]
  auto s = nn::attention_scores(q.expand({b, heads_, 2, dh}), k);          // [B, heads, 2, HW]
  return s.transpose(1, 2).reshape({b, 2 * heads_, h, w});
}

torch::Tensor TvcaImpl::forward(const torch::Tensor& features, const torch::Tensor& t_real, const torch::Tensor& t_fake) {
  return refine(score_map(features, t_real, t_fake));
}

void TvcaImpl::set_identity() {
  torch::NoGradGuard guard;
  const auto d = q_proj->weight.size(0);
  q_proj->weight.copy_(torch::eye(d, q_proj->weight.options()));
  q_proj->bias.zero_();
  k_proj->weight.copy_(torch::eye(d, k_proj->weight.options()));
  k_proj->bias.zero_();
  refine->weight.zero_();
  refine->bias.zero_();
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < heads_; ++h) refine->weight[c][c * heads_ + h][0][0] = 1.0;
}

SynergyImpl::SynergyImpl(const encoders::EncoderSpec& semantic, const encoders::EncoderSpec& text,
                         const encoders::EncoderSpec& spatial, FusionPlan plan, int decoder_channels, int vsa_heads,
                         int vca_heads, int tvca_heads)
    : plan_(std::move(plan)) {
  plan_.validate(semantic.depth, spatial.depth);
  if (text.embed_dim != semantic.width)
    throw ConfigError("text embed_dim must equal the semantic encoder width for cosine similarity");
  prompt = register_module("prompt", PromptBank(text.context_length, text.width));
  vsa = register_module("vsa", Vsa(semantic.width, vsa_heads));
  vca = register_module("vca", torch::nn::ModuleList());
  for (std::size_t k = 0; k < plan_.pairs.size(); ++k) vca->push_back(Vca(semantic.width, spatial.width, vca_heads));
  tvca = register_module("tvca", Tvca(decoder_channels, semantic.width, tvca_heads));
}

std::int64_t SynergyImpl::vca_invocations() const {
  std::int64_t n = 0;
  for (const auto& m : *vca) n += m->as<VcaImpl>()->invocations();
  return n;
}

FusionOutput SynergyImpl::run_fusion_plan(const torch::Tensor& semantic_view, const torch::Tensor& spatial_view,
                                          encoders::VisionEncoderImpl& semantic, encoders::TextEncoderImpl& text,
                                          encoders::VisionEncoderImpl& spatial, const FusionOptions& options) {
  std::vector<encoders::LayerFeatures> sem_layers;
  {
    std::optional<torch::NoGradGuard> frozen;
    if (semantic.spec().frozen) frozen.emplace();
    sem_layers = semantic.forward_layers(semantic_view);
  }

  FusionOutput out;
  out.grid_h = out.grid_w = spatial.spec().grid();
  auto tokens = spatial.embed(spatial_view);
  std::size_t next_pair = 0;
  for (int l = 0; l < spatial.spec().depth; ++l) {
    tokens = spatial.step(tokens, l);
    if (options.use_vca && next_pair < plan_.pairs.size() && plan_.pairs[next_pair].second == l) {
      const auto& sem = sem_layers[static_cast<std::size_t>(plan_.pairs[next_pair].first)];
      tokens = vca[next_pair]->as<VcaImpl>()->forward(sem, tokens, out.grid_h, out.grid_w);
      ++next_pair;
    }
  }
  out.spatial_tokens = tokens;

  if (options.use_vsa) {
    std::vector<torch::Tensor> cls;
    if (options.vsa_layers.empty()) {
      for (const auto& f : sem_layers) cls.push_back(*f.cls);
    } else {
      for (int idx : options.vsa_layers) {
        if (idx < 0 || idx >= static_cast<int>(sem_layers.size())) throw ConfigError("VSA layer index out of range");
        cls.push_back(*sem_layers[static_cast<std::size_t>(idx)].cls);
      }
    }
    out.g = vsa->forward(cls);
  } else {
    out.g = vsa->project_only(*sem_layers.back().cls);
  }

  std::tie(out.t_real, out.t_fake) = prompt->embeddings(text);
  return out;
}

}  // namespace maskclip::spm
