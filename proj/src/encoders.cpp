#include "maskclip/encoders.hpp"

#include <iostream>
#include <set>

#include "maskclip/errors.hpp"

namespace maskclip::encoders {

std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::semantic_vision: return "semantic_vision";
    case EncoderKind::text: return "text";
    case EncoderKind::spatial: return "spatial";
  }
  return "?";
}

std::string component_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::semantic_vision: return "semantic";
    case EncoderKind::text: return "text";
    case EncoderKind::spatial: return "spatial";
  }
  return "?";
}

void EncoderSpec::validate() const {
  const std::string who = to_string(kind) + " encoder: ";
  if (depth < 1) throw ConfigError(who + "depth must be >= 1");
  if (width < 1 || heads < 1 || width % heads != 0) throw ConfigError(who + "width must be a positive multiple of heads");
  if (mlp_ratio < 1) throw ConfigError(who + "mlp_ratio must be >= 1");
  if (kind == EncoderKind::text) {
    if (context_length < 1) throw ConfigError(who + "prompt length must be >= 1");
    if (embed_dim < 1) throw ConfigError(who + "embed_dim must be >= 1");
  } else {
    if (patch_size < 1 || input_size < 1) throw ConfigError(who + "patch and input size must be positive");
    if (input_size % patch_size != 0) throw ConfigError(who + "input_size must be divisible by patch_size");
  }
}

EncoderSpec EncoderSpec::clip_vit_l14_vision() {
  EncoderSpec s;
  s.kind = EncoderKind::semantic_vision;
  s.depth = 24;
  s.width = 1024;
  s.heads = 16;
  s.patch_size = 14;
  s.input_size = 224;
  s.frozen = true;
  return s;
}

EncoderSpec EncoderSpec::clip_vit_l14_text() {
  EncoderSpec s;
  s.kind = EncoderKind::text;
  s.depth = 12;
  s.width = 768;
  s.heads = 12;
  s.context_length = 10;
  s.embed_dim = 1024;
  s.frozen = true;
  return s;
}

EncoderSpec EncoderSpec::mae_vit_b32(int input_size) {
  EncoderSpec s;
  s.kind = EncoderKind::spatial;
  s.depth = 12;
  s.width = 768;
  s.heads = 12;
  s.patch_size = 32;
  s.input_size = input_size;
  s.frozen = false;
  s.mean = {0.485f, 0.456f, 0.406f};
  s.std = {0.229f, 0.224f, 0.225f};
  return s;
}

VisionEncoderImpl::VisionEncoderImpl(EncoderSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == EncoderKind::text) throw ConfigError("VisionEncoder built from a text spec");
  const int n = spec_.num_patches() + (has_cls() ? 1 : 0);
  patch_embed = register_module(
      "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, spec_.width, spec_.patch_size).stride(spec_.patch_size)));
  if (has_cls()) cls_token = register_parameter("cls_token", torch::randn({spec_.width}) * 0.02);
  pos_embed = register_parameter("pos_embed", torch::randn({n, spec_.width}) * 0.02);
  layers = register_module("layers", torch::nn::ModuleList());
  for (int i = 0; i < spec_.depth; ++i) layers->push_back(nn::TransformerLayer(spec_.width, spec_.heads, spec_.mlp_ratio));
}

torch::Tensor VisionEncoderImpl::embed(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != spec_.input_size || image.size(3) != spec_.input_size)
    throw ShapeError(to_string(spec_.kind) + " encoder expects [B,3," + std::to_string(spec_.input_size) + "," +
                     std::to_string(spec_.input_size) + "] input");
  auto opts = image.options();
  auto mean = torch::tensor(std::vector<float>(spec_.mean.begin(), spec_.mean.end())).to(opts).view({1, 3, 1, 1});
  auto stdev = torch::tensor(std::vector<float>(spec_.std.begin(), spec_.std.end())).to(opts).view({1, 3, 1, 1});
  auto x = patch_embed((image - mean) / stdev);  // [B,D,g,g]
  x = x.flatten(2).transpose(1, 2);              // [B,N,D]
  if (has_cls()) x = torch::cat({cls_token.view({1, 1, -1}).expand({x.size(0), 1, spec_.width}), x}, 1);
  return x + pos_embed.unsqueeze(0);
}

torch::Tensor VisionEncoderImpl::step(const torch::Tensor& tokens, int layer_index) {
  if (layer_index < 0 || layer_index >= spec_.depth)
    throw ShapeError("layer index " + std::to_string(layer_index) + " out of range for depth " + std::to_string(spec_.depth));
  return layers[layer_index]->as<nn::TransformerLayerImpl>()->forward(tokens);
}

torch::Tensor VisionEncoderImpl::forward(const torch::Tensor& image) {
  auto x = embed(image);
  for (int l = 0; l < spec_.depth; ++l) x = step(x, l);
  return x;
}

LayerFeatures VisionEncoderImpl::features(const torch::Tensor& tokens, int layer_index) const {
  LayerFeatures f;
  f.grid_h = f.grid_w = spec_.grid();
  f.layer_index = layer_index;
  if (has_cls()) {
    f.cls = tokens.select(1, 0);
    f.patches = tokens.slice(1, 1);
  } else {
    f.patches = tokens;
  }
  return f;
}

std::vector<LayerFeatures> VisionEncoderImpl::forward_layers(const torch::Tensor& image) {
  std::vector<LayerFeatures> out;
  out.reserve(static_cast<std::size_t>(spec_.depth));
  auto x = embed(image);
  for (int l = 0; l < spec_.depth; ++l) {
    x = step(x, l);
    out.push_back(features(x, l));
  }
  return out;
}

TextEncoderImpl::TextEncoderImpl(EncoderSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind != EncoderKind::text) throw ConfigError("TextEncoder built from a vision spec");
  pos_embed = register_parameter("pos_embed", torch::randn({spec_.context_length, spec_.width}) * 0.01);
  layers = register_module("layers", torch::nn::ModuleList());
  for (int i = 0; i < spec_.depth; ++i) layers->push_back(nn::TransformerLayer(spec_.width, spec_.heads, spec_.mlp_ratio));
  ln_final = register_module("ln_final", torch::nn::LayerNorm(torch::nn::LayerNormOptions({spec_.width})));
  projection = register_parameter("projection", torch::randn({spec_.width, spec_.embed_dim}) / std::sqrt(double(spec_.width)));
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& prompts) {
  if (prompts.dim() != 3 || prompts.size(2) != spec_.width)
    throw ShapeError("text encoder expects [C, M, " + std::to_string(spec_.width) + "] prompts");
  if (prompts.size(1) != spec_.context_length)
    throw ShapeError("prompt length " + std::to_string(prompts.size(1)) + " does not match configured length " +
                     std::to_string(spec_.context_length));
  auto x = prompts + pos_embed.unsqueeze(0);
  for (const auto& layer : *layers) x = layer->as<nn::TransformerLayerImpl>()->forward(x);
  auto last = ln_final(x.select(1, spec_.context_length - 1));
  auto t = torch::matmul(last, projection);
  return torch::nn::functional::normalize(t, torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

archive::Archive export_module(const torch::nn::Module& module, const std::string& prefix) {
  archive::Archive a;
  for (const auto& p : module.named_parameters(true)) a.tensors[prefix + "." + p.key()] = p.value().detach().clone();
  for (const auto& b : module.named_buffers(true)) a.tensors[prefix + "." + b.key()] = b.value().detach().clone();
  return a;
}

LoadReport load_into(torch::nn::Module& module, const archive::Archive& a, const std::string& prefix) {
  torch::NoGradGuard guard;
  std::set<std::string> consumed;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    const std::string key = prefix + "." + name;
    auto it = a.tensors.find(key);
    if (it == a.tensors.end()) throw CheckpointError("missing key in archive: " + key);
    if (!it->second.sizes().equals(target.sizes())) {
      std::ostringstream msg;
      msg << "shape conflict for key " << key << ": archive " << it->second.sizes() << " vs expected " << target.sizes();
      throw CheckpointError(msg.str());
    }
    target.copy_(it->second.to(target.dtype()));
    consumed.insert(key);
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());

  LoadReport report;
  for (const auto& kv : a.tensors)
    if (!consumed.count(kv.first)) report.unexpected_keys.push_back(kv.first);
  if (!report.unexpected_keys.empty()) {
    std::clog << "warning: " << report.unexpected_keys.size() << " unexpected archive key(s):";
    for (const auto& k : report.unexpected_keys) std::clog << ' ' << k;
    std::clog << '\n';
  }
  return report;
}

VisionEncoder load_vision_encoder(const std::filesystem::path& archive_path, const EncoderSpec& spec, LoadReport* report) {
  VisionEncoder enc(spec);
  auto r = load_into(*enc, archive::load(archive_path), component_name(spec.kind));
  if (report) *report = std::move(r);
  set_trainable(*enc, !spec.frozen);
  return enc;
}

TextEncoder load_text_encoder(const std::filesystem::path& archive_path, const EncoderSpec& spec, LoadReport* report) {
  TextEncoder enc(spec);
  auto r = load_into(*enc, archive::load(archive_path), component_name(spec.kind));
  if (report) *report = std::move(r);
  set_trainable(*enc, !spec.frozen);
  return enc;
}

void set_trainable(torch::nn::Module& module, bool trainable) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(trainable);
}

}  // namespace maskclip::encoders
