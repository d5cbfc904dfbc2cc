#pragma once

// MaskCLIP: frozen semantic vision + text encoders, tunable spatial encoder, synergy blocks,
// FPN-style decoder. Parameters are registered under "semantic", "text", "spatial", "spm",
// "decoder" (and "seg_head" when the TVCA ablation is active).

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "maskclip/decoder.hpp"
#include "maskclip/encoders.hpp"
#include "maskclip/spm.hpp"

namespace maskclip::model {

/// Component switches for ablation runs. All on = the full model.
struct Ablation {
  bool prompt_tuning = true;  // off: prompts fixed at their initial values
  bool vsa = true;            // off: g from the last [CLS] token only
  bool vca = true;            // off: no semantic -> spatial fusion
  bool tvca = true;           // off: 1x1 convolution head straight on F
};

struct ModelConfig {
  encoders::EncoderSpec semantic = encoders::EncoderSpec::clip_vit_l14_vision();
  encoders::EncoderSpec text = encoders::EncoderSpec::clip_vit_l14_text();
  encoders::EncoderSpec spatial = encoders::EncoderSpec::mae_vit_b32();
  spm::FusionPlan plan = spm::FusionPlan::even(24, 12, 4);
  std::vector<int> vsa_layers;  // empty: all semantic layers
  int vsa_heads = 8;
  int vca_heads = 8;
  int tvca_heads = 8;
  decoder::DecoderConfig decoder;
  Ablation ablation;
  double temperature = 0.07;
  bool double_precision = false;

  void validate() const;

  /// CLIP ViT-L/14 + MAE ViT-B/32 at 224 / 512 input.
  static ModelConfig maskclip_default();
  /// Desk-scale configuration used by the fixture tests: depth 2, width 64 everywhere.
  static ModelConfig toy();
};

struct ModelOutput {
  torch::Tensor g;                 // [B, D]
  torch::Tensor t_real, t_fake;    // [D]
  torch::Tensor detection_logits;  // [B, 2]
  torch::Tensor m_real, m_fake;    // [B, H, W] logits at spatial input size
  torch::Tensor spatial_tokens;    // [B, N_m, D_m]
};

class MaskClipImpl : public torch::nn::Module {
 public:
  explicit MaskClipImpl(ModelConfig cfg);

  /// semantic_view: [B,3,S_c,S_c], spatial_view: [B,3,S_m,S_m], both in [0,1].
  ModelOutput forward(const torch::Tensor& semantic_view, const torch::Tensor& spatial_view);

  /// Spatial encoder alone (no fusion): final tokens [B, N_m, D_m].
  torch::Tensor unfused_spatial(const torch::Tensor& spatial_view);

  /// Parameters of the frozen group (semantic + text encoders) and the tunable group.
  std::map<std::string, torch::Tensor> frozen_parameters() const;
  std::map<std::string, torch::Tensor> tunable_parameters() const;
  std::vector<torch::Tensor> tunable_list() const;
  /// Every parameter and buffer by full name.
  std::map<std::string, torch::Tensor> state() const;
  /// SHA-256 of the frozen group.
  std::string frozen_digest() const;

  /// Loads pretrained encoder archives (empty path: keep random init).
  void load_encoders(const std::string& semantic_path, const std::string& text_path, const std::string& spatial_path);

  const ModelConfig& config() const { return cfg_; }

  encoders::VisionEncoder semantic{nullptr};
  encoders::TextEncoder text{nullptr};
  encoders::VisionEncoder spatial{nullptr};
  spm::Synergy spm{nullptr};
  decoder::Decoder decoder{nullptr};
  torch::nn::Conv2d seg_head{nullptr};

 private:
  void apply_partition();

  ModelConfig cfg_;
};
TORCH_MODULE(MaskClip);

}  // namespace maskclip::model
