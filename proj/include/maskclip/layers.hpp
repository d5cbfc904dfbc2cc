#pragma once

// Attention and transformer primitives shared by the encoders and the synergy blocks.
// Token tensors are [batch, tokens, width].

#include <cstdint>

#include <torch/torch.h>

namespace maskclip::nn {

/// Scaled dot-product attention over already-projected, head-split tensors.
/// q: [B,h,nq,d], k/v: [B,h,nk,d]. Softmax runs over the key axis.
torch::Tensor attend(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v);

/// Pre-softmax scores QK^T / sqrt(d) for head-split tensors: [B,h,nq,nk].
torch::Tensor attention_scores(const torch::Tensor& q, const torch::Tensor& k);

/// Multi-head attention with separate query/key/value/output projections.
/// Per head: Softmax(Q K^T / sqrt(d)) V with d = d_model / heads; heads are concatenated and
/// passed through the output projection.
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(std::int64_t d_model, std::int64_t heads);

  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& key, const torch::Tensor& value);
  /// Row-stochastic weights [B,h,nq,nk].
  torch::Tensor weights(const torch::Tensor& query, const torch::Tensor& key);
  /// Pre-softmax scores [B,h,nq,nk] (query/key projections applied).
  torch::Tensor scores(const torch::Tensor& query, const torch::Tensor& key);

  /// Sets every projection to identity with zero bias.
  void set_identity();
  /// Zeroes the output projection, so forward() returns exactly zero.
  void zero_output();

  std::int64_t d_model() const { return d_model_; }
  std::int64_t heads() const { return heads_; }
  std::int64_t head_dim() const { return d_model_ / heads_; }

  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};

 private:
  torch::Tensor split_heads(const torch::Tensor& x) const;
  void check_inputs(const torch::Tensor& query, const torch::Tensor& key) const;

  std::int64_t d_model_;
  std::int64_t heads_;
};
TORCH_MODULE(MultiHeadAttention);

/// Pre-norm transformer layer: x + MHSA(LN(x)), then x + MLP(LN(x)) with GELU.
class TransformerLayerImpl : public torch::nn::Module {
 public:
  TransformerLayerImpl(std::int64_t width, std::int64_t heads, std::int64_t mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm ln_1{nullptr}, ln_2{nullptr};
  MultiHeadAttention attn{nullptr};
  torch::nn::Linear fc_1{nullptr}, fc_2{nullptr};
};
TORCH_MODULE(TransformerLayer);

}  // namespace maskclip::nn
