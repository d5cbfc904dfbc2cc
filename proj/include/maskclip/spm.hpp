#pragma once

// Synergy blocks coupling the pretrained encoders:
//   PromptBank - learnable real/fake prompt vectors, encoded by the frozen text encoder
//   Vsa        - self-attention over multi-layer [CLS] tokens, pooled and projected to g
//   Vca        - semantic patches (resized + 1x1 projected) attend over spatial tokens,
//                added back to the spatial stream as a residual
//   Tvca       - class embeddings attend over decoder features; the score map is refined
//                by a 1x1 convolution into M_real / M_fake logits
//
// Class index convention everywhere: 0 = real, 1 = fake.

#include <cstdint>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "maskclip/encoders.hpp"
#include "maskclip/layers.hpp"

namespace maskclip::spm {

/// Bilinear (align_corners = false) resize of a token grid: [B, gh*gw, D] -> [B, oh*ow, D].
/// Same-size requests return the input unchanged.
torch::Tensor resize_tokens(const torch::Tensor& tokens, int grid_h, int grid_w, int out_h, int out_w);

/// Layer pairs (semantic_layer, spatial_layer), 0-based, at which VCA fires. The fused tokens
/// become the input of spatial layer spatial_layer + 1 (or the final output for the last layer).
struct FusionPlan {
  std::vector<std::pair<int, int>> pairs;

  /// Spatial indices strictly increasing; all indices inside the encoder depths.
  void validate(int semantic_depth, int spatial_depth) const;

  /// `count` evenly spaced pairs; ViT-L/14 + ViT-B/32 gives spatial {3,6,9,12} x semantic
  /// {6,12,18,24} in 1-based layer numbers.
  static FusionPlan even(int semantic_depth, int spatial_depth, int count = 4);
};

class PromptBankImpl : public torch::nn::Module {
 public:
  PromptBankImpl(int prompt_length, int text_width);

  /// [2, M, width], real first.
  torch::Tensor stacked() const;

  /// (t_real, t_fake), each [D] with unit norm. Without grad mode the result is cached until
  /// the prompt values (or the encoder projection) change.
  std::pair<torch::Tensor, torch::Tensor> embeddings(encoders::TextEncoderImpl& text);

  torch::Tensor real, fake;

 private:
  torch::Tensor cached_real_, cached_fake_;
  std::int64_t cached_version_ = -1;
};
TORCH_MODULE(PromptBank);

class VsaImpl : public torch::nn::Module {
 public:
  VsaImpl(int width, int heads);

  /// cls_tokens: L tensors of [B, D] -> g [B, D], unit rows.
  torch::Tensor forward(const std::vector<torch::Tensor>& cls_tokens);
  /// Ablation path: projection of a single [CLS] token, without attention.
  torch::Tensor project_only(const torch::Tensor& cls);

  nn::MultiHeadAttention attn{nullptr};
  torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(Vsa);

class VcaImpl : public torch::nn::Module {
 public:
  /// The output projection of the attention starts at zero, so a fresh block is a no-op.
  VcaImpl(int semantic_width, int spatial_width, int heads);

  /// Returns spatial_tokens + G, where G = Attention(Q = proj(resize(semantic patches)),
  /// K = V = spatial_tokens).
  torch::Tensor forward(const encoders::LayerFeatures& semantic, const torch::Tensor& spatial_tokens, int grid_h,
                        int grid_w);

  std::int64_t invocations() const { return invocations_; }

  /// 1x1 convolution D -> D_m, applied per token.
  torch::nn::Linear projector{nullptr};
  nn::MultiHeadAttention attn{nullptr};

 private:
  std::int64_t invocations_ = 0;
};
TORCH_MODULE(Vca);

class TvcaImpl : public torch::nn::Module {
 public:
  /// The refinement convolution starts at zero weight and bias.
  TvcaImpl(int feature_channels, int text_dim, int heads);

  /// features: [B, C, H, W]; t_real/t_fake: [D]. Returns logits [B, 2, H, W] (real, fake).
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& t_real, const torch::Tensor& t_fake);
  /// Pre-softmax score map [B, 2*heads, H, W], channel = class * heads + head.
  torch::Tensor score_map(const torch::Tensor& features, const torch::Tensor& t_real, const torch::Tensor& t_fake);

  /// Identity projections and a refinement that sums each class's head maps.
  void set_identity();

  int heads() const { return heads_; }

  torch::nn::Linear feature_proj{nullptr};
  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr};
  torch::nn::Conv2d refine{nullptr};

 private:
  int heads_;
};
TORCH_MODULE(Tvca);

struct FusionOptions {
  std::vector<int> vsa_layers;  // empty: every semantic layer
  bool use_vsa = true;
  bool use_vca = true;
};

struct FusionOutput {
  torch::Tensor g;               // [B, D], unit rows
  torch::Tensor spatial_tokens;  // [B, N_m, D_m] after the last spatial layer
  int grid_h = 0;
  int grid_w = 0;
  torch::Tensor t_real, t_fake;  // [D]
};

/// Container of the tunable synergy blocks, registered as prompt / vsa / vca.<k> / tvca.
class SynergyImpl : public torch::nn::Module {
 public:
  SynergyImpl(const encoders::EncoderSpec& semantic, const encoders::EncoderSpec& text,
              const encoders::EncoderSpec& spatial, FusionPlan plan, int decoder_channels, int vsa_heads, int vca_heads,
              int tvca_heads);

  /// One semantic forward, spatial encoder stepped layer by layer with VCA at every plan
  /// pair, VSA over the collected [CLS] tokens.
  FusionOutput run_fusion_plan(const torch::Tensor& semantic_view, const torch::Tensor& spatial_view,
                               encoders::VisionEncoderImpl& semantic, encoders::TextEncoderImpl& text,
                               encoders::VisionEncoderImpl& spatial, const FusionOptions& options);

  const FusionPlan& plan() const { return plan_; }
  std::int64_t vca_invocations() const;

  PromptBank prompt{nullptr};
  Vsa vsa{nullptr};
  torch::nn::ModuleList vca{nullptr};
  Tvca tvca{nullptr};

 private:
  FusionPlan plan_;
};
TORCH_MODULE(Synergy);

}  // namespace maskclip::spm
