#include "maskclip/model.hpp"

#include "maskclip/digest.hpp"
#include "maskclip/errors.hpp"
#include "maskclip/objective.hpp"

namespace maskclip::model {

void ModelConfig::validate() const {
  semantic.validate();
  text.validate();
  spatial.validate();
  if (semantic.kind != encoders::EncoderKind::semantic_vision) throw ConfigError("model.semantic must be a semantic_vision spec");
  if (text.kind != encoders::EncoderKind::text) throw ConfigError("model.text must be a text spec");
  if (spatial.kind != encoders::EncoderKind::spatial) throw ConfigError("model.spatial must be a spatial spec");
  if (text.embed_dim != semantic.width) throw ConfigError("text embed_dim must equal the semantic width");
  plan.validate(semantic.depth, spatial.depth);
  for (int l : vsa_layers)
    if (l < 0 || l >= semantic.depth) throw ConfigError("VSA layer index out of range");
  if (semantic.width % vsa_heads != 0) throw ConfigError("semantic width must be divisible by vsa heads");
  if (spatial.width % vca_heads != 0) throw ConfigError("spatial width must be divisible by vca heads");
  if (semantic.width % tvca_heads != 0) throw ConfigError("semantic width must be divisible by tvca heads");
  decoder.validate();
  if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
}

ModelConfig ModelConfig::maskclip_default() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.semantic.depth = 2;
  c.semantic.width = 64;
  c.semantic.heads = 8;
  c.semantic.patch_size = 8;
  c.semantic.input_size = 32;

  c.text.depth = 2;
  c.text.width = 64;
  c.text.heads = 8;
  c.text.embed_dim = 64;

  c.spatial.depth = 2;
  c.spatial.width = 64;
  c.spatial.heads = 8;
  c.spatial.patch_size = 4;
  c.spatial.input_size = 64;

  c.plan = spm::FusionPlan::even(2, 2, 4);
  c.decoder.channels = 32;
  return c;
}

MaskClipImpl::MaskClipImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  semantic = register_module("semantic", encoders::VisionEncoder(cfg_.semantic));
  text = register_module("text", encoders::TextEncoder(cfg_.text));
  spatial = register_module("spatial", encoders::VisionEncoder(cfg_.spatial));
  spm = register_module("spm", spm::Synergy(cfg_.semantic, cfg_.text, cfg_.spatial, cfg_.plan,
                                            cfg_.decoder.output_channels(), cfg_.vsa_heads, cfg_.vca_heads,
                                            cfg_.tvca_heads));
  decoder = register_module("decoder", decoder::Decoder(cfg_.spatial.width, cfg_.decoder));
  if (!cfg_.ablation.tvca) {
    seg_head = register_module("seg_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.decoder.output_channels(), 2, 1)));
    torch::NoGradGuard guard;
    seg_head->weight.zero_();
    seg_head->bias.zero_();
  }
  if (cfg_.double_precision) to(torch::kFloat64);
  apply_partition();
}

void MaskClipImpl::apply_partition() {
  encoders::set_trainable(*semantic, !cfg_.semantic.frozen);
  encoders::set_trainable(*text, !cfg_.text.frozen);
  encoders::set_trainable(*spatial, !cfg_.spatial.frozen);
  spm->prompt->real.set_requires_grad(cfg_.ablation.prompt_tuning);
  spm->prompt->fake.set_requires_grad(cfg_.ablation.prompt_tuning);
}

ModelOutput MaskClipImpl::forward(const torch::Tensor& semantic_view, const torch::Tensor& spatial_view) {
  const auto dtype = cfg_.double_precision ? torch::kFloat64 : torch::kFloat32;
  spm::FusionOptions opts;
  opts.vsa_layers = cfg_.vsa_layers;
  opts.use_vsa = cfg_.ablation.vsa;
  opts.use_vca = cfg_.ablation.vca;
  auto fusion = spm->run_fusion_plan(semantic_view.to(dtype), spatial_view.to(dtype), *semantic, *text, *spatial, opts);

  const int size = cfg_.spatial.input_size;
  auto features = decoder->forward(fusion.spatial_tokens, fusion.grid_h, fusion.grid_w, size, size);
  auto logits = cfg_.ablation.tvca ? spm->tvca->forward(features, fusion.t_real, fusion.t_fake) : seg_head(features);

  ModelOutput out;
  out.g = fusion.g;
  out.t_real = fusion.t_real;
  out.t_fake = fusion.t_fake;
  out.detection_logits = objective::similarity_logits(fusion.g, fusion.t_real, fusion.t_fake, cfg_.temperature);
  out.m_real = logits.select(1, 0);
  out.m_fake = logits.select(1, 1);
  out.spatial_tokens = fusion.spatial_tokens;
  return out;
}

torch::Tensor MaskClipImpl::unfused_spatial(const torch::Tensor& spatial_view) {
  return spatial->forward(spatial_view.to(cfg_.double_precision ? torch::kFloat64 : torch::kFloat32));
}

std::map<std::string, torch::Tensor> MaskClipImpl::frozen_parameters() const {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : semantic->named_parameters(true)) out["semantic." + p.key()] = p.value();
  for (const auto& p : text->named_parameters(true)) out["text." + p.key()] = p.value();
  return out;
}

std::map<std::string, torch::Tensor> MaskClipImpl::tunable_parameters() const {
  auto frozen = frozen_parameters();
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : named_parameters(true))
    if (!frozen.count(p.key())) out[p.key()] = p.value();
  return out;
}

std::vector<torch::Tensor> MaskClipImpl::tunable_list() const {
  std::vector<torch::Tensor> out;
  for (const auto& [name, t] : tunable_parameters())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::map<std::string, torch::Tensor> MaskClipImpl::state() const {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : named_parameters(true)) out[p.key()] = p.value();
  for (const auto& b : named_buffers(true)) out[b.key()] = b.value();
  return out;
}

std::string MaskClipImpl::frozen_digest() const { return digest::tensors_sha256(frozen_parameters()); }

void MaskClipImpl::load_encoders(const std::string& semantic_path, const std::string& text_path,
                                 const std::string& spatial_path) {
  if (!semantic_path.empty()) encoders::load_into(*semantic, archive::load(semantic_path), "semantic");
  if (!text_path.empty()) encoders::load_into(*text, archive::load(text_path), "text");
  if (!spatial_path.empty()) encoders::load_into(*spatial, archive::load(spatial_path), "spatial");
  apply_partition();
}

}  // namespace maskclip::model
