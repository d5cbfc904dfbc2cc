#pragma once

// The three pretrained components: a frozen semantic vision encoder (with a [CLS] token),
// a frozen text encoder fed with continuous prompt vectors, and a tunable spatial encoder
// (patch tokens only) that can be stepped one layer at a time.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "maskclip/archive.hpp"
#include "maskclip/layers.hpp"

namespace maskclip::encoders {

enum class EncoderKind { semantic_vision, text, spatial };

std::string to_string(EncoderKind k);
/// Archive key prefix of a component: "semantic", "text" or "spatial".
std::string component_name(EncoderKind k);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::semantic_vision;
  int depth = 1;
  int width = 8;
  int heads = 8;
  int mlp_ratio = 4;
  int patch_size = 16;  // vision kinds
  int input_size = 32;  // vision kinds
  bool frozen = true;
  int context_length = 10;  // text: prompt length M
  int embed_dim = 8;        // text: output dimension (the semantic width D)
  std::array<float, 3> mean{0.48145466f, 0.4578275f, 0.40821073f};
  std::array<float, 3> std{0.26862954f, 0.26130258f, 0.27577711f};

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  int grid() const { return input_size / patch_size; }
  int num_patches() const { return grid() * grid(); }

  static EncoderSpec clip_vit_l14_vision();
  static EncoderSpec clip_vit_l14_text();
  static EncoderSpec mae_vit_b32(int input_size = 512);
};

/// Output of one encoder layer. patches: [B, grid_h*grid_w, D] in row-major grid order;
/// cls: [B, D] when the producing encoder has a [CLS] token.
struct LayerFeatures {
  std::optional<torch::Tensor> cls;
  torch::Tensor patches;
  int grid_h = 0;
  int grid_w = 0;
  int layer_index = 0;
};

/// ViT over a square input. With a [CLS] token for the semantic kind, without for spatial.
class VisionEncoderImpl : public torch::nn::Module {
 public:
  explicit VisionEncoderImpl(EncoderSpec spec);

  /// Patch embedding plus positional embedding: [B, N(+1), D]. image: [B,3,S,S] in [0,1].
  torch::Tensor embed(const torch::Tensor& image);
  /// Runs exactly one transformer layer.
  torch::Tensor step(const torch::Tensor& tokens, int layer_index);
  /// Monolithic forward returning the final token sequence.
  torch::Tensor forward(const torch::Tensor& image);
  /// One LayerFeatures per layer, in order.
  std::vector<LayerFeatures> forward_layers(const torch::Tensor& image);

  /// Splits a token sequence into cls/patches.
  LayerFeatures features(const torch::Tensor& tokens, int layer_index) const;

  const EncoderSpec& spec() const { return spec_; }
  bool has_cls() const { return spec_.kind == EncoderKind::semantic_vision; }

  torch::nn::Conv2d patch_embed{nullptr};
  torch::Tensor cls_token;
  torch::Tensor pos_embed;
  torch::nn::ModuleList layers{nullptr};

 private:
  EncoderSpec spec_;
};
TORCH_MODULE(VisionEncoder);

/// Transformer over M prompt vectors; the last position is projected to the joint space and
/// unit-normalized, playing the role of the end-of-text token.
class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(EncoderSpec spec);

  /// prompts: [C, M, width] -> [C, embed_dim], unit rows.
  torch::Tensor forward(const torch::Tensor& prompts);

  const EncoderSpec& spec() const { return spec_; }

  torch::Tensor pos_embed;
  torch::nn::ModuleList layers{nullptr};
  torch::nn::LayerNorm ln_final{nullptr};
  torch::Tensor projection;

 private:
  EncoderSpec spec_;
};
TORCH_MODULE(TextEncoder);

struct LoadReport {
  std::vector<std::string> unexpected_keys;
};

/// Every parameter and buffer of `module`, keyed as prefix + "." + torch name.
archive::Archive export_module(const torch::nn::Module& module, const std::string& prefix);

/// Copies archive tensors into `module`. Missing key or shape conflict throws CheckpointError
/// naming the key; keys outside the module are returned as unexpected (and logged).
LoadReport load_into(torch::nn::Module& module, const archive::Archive& a, const std::string& prefix);

/// Builds an encoder from `spec` and fills it from a checkpoint archive.
VisionEncoder load_vision_encoder(const std::filesystem::path& archive_path, const EncoderSpec& spec,
                                  LoadReport* report = nullptr);
TextEncoder load_text_encoder(const std::filesystem::path& archive_path, const EncoderSpec& spec,
                              LoadReport* report = nullptr);

/// Marks every parameter of a module as (not) receiving gradient.
void set_trainable(torch::nn::Module& module, bool trainable);

}  // namespace maskclip::encoders
