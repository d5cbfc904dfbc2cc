#include "maskclip/layers.hpp"

#include <cmath>

#include "maskclip/errors.hpp"

namespace maskclip::nn {

torch::Tensor attention_scores(const torch::Tensor& q, const torch::Tensor& k) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  return torch::matmul(q, k.transpose(-2, -1)) * scale;
}

torch::Tensor attend(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v) {
  return torch::matmul(torch::softmax(attention_scores(q, k), -1), v);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(std::int64_t d_model, std::int64_t heads) : d_model_(d_model), heads_(heads) {
  if (heads <= 0 || d_model <= 0 || d_model % heads != 0)
    throw ShapeError("attention width " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) + " heads");
  q_proj = register_module("q_proj", torch::nn::Linear(d_model, d_model));
  k_proj = register_module("k_proj", torch::nn::Linear(d_model, d_model));
  v_proj = register_module("v_proj", torch::nn::Linear(d_model, d_model));
  out_proj = register_module("out_proj", torch::nn::Linear(d_model, d_model));
}

torch::Tensor MultiHeadAttentionImpl::split_heads(const torch::Tensor& x) const {
  // [B,n,D] -> [B,h,n,d]
  return x.view({x.size(0), x.size(1), heads_, head_dim()}).transpose(1, 2);
}

void MultiHeadAttentionImpl::check_inputs(const torch::Tensor& query, const torch::Tensor& key) const {
  if (query.dim() != 3 || key.dim() != 3) throw ShapeError("attention inputs must be [batch, tokens, width]");
  if (query.size(2) != d_model_ || key.size(2) != d_model_)
    throw ShapeError("attention input width does not match d_model " + std::to_string(d_model_));
  if (query.size(0) != key.size(0)) throw ShapeError("attention query/key batch sizes differ");
  if (key.size(1) < 1) throw ShapeError("attention needs at least one key");
}

torch::Tensor MultiHeadAttentionImpl::scores(const torch::Tensor& query, const torch::Tensor& key) {
  check_inputs(query, key);
  return attention_scores(split_heads(q_proj(query)), split_heads(k_proj(key)));
}

torch::Tensor MultiHeadAttentionImpl::weights(const torch::Tensor& query, const torch::Tensor& key) {
  return torch::softmax(scores(query, key), -1);
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& key, const torch::Tensor& value) {
  check_inputs(query, key);
  if (!value.sizes().equals(key.sizes())) throw ShapeError("attention key and value shapes differ");
  auto heads_out = attend(split_heads(q_proj(query)), split_heads(k_proj(key)), split_heads(v_proj(value)));
  auto merged = heads_out.transpose(1, 2).reshape({query.size(0), query.size(1), d_model_});
  return out_proj(merged);
}

void MultiHeadAttentionImpl::set_identity() {
  torch::NoGradGuard guard;
  for (auto* lin : {&q_proj, &k_proj, &v_proj, &out_proj}) {
    (*lin)->weight.copy_(torch::eye(d_model_, (*lin)->weight.options()));
    (*lin)->bias.zero_();
  }
}

void MultiHeadAttentionImpl::zero_output() {
  torch::NoGradGuard guard;
  out_proj->weight.zero_();
  out_proj->bias.zero_();
}

TransformerLayerImpl::TransformerLayerImpl(std::int64_t width, std::int64_t heads, std::int64_t mlp_ratio) {
  ln_1 = register_module("ln_1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  attn = register_module("attn", MultiHeadAttention(width, heads));
  ln_2 = register_module("ln_2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  fc_1 = register_module("fc_1", torch::nn::Linear(width, width * mlp_ratio));
  fc_2 = register_module("fc_2", torch::nn::Linear(width * mlp_ratio, width));
}

torch::Tensor TransformerLayerImpl::forward(const torch::Tensor& x) {
  auto h = ln_1(x);
  auto y = x + attn(h, h, h);
  return y + fc_2(torch::gelu(fc_1(ln_2(y))));
}

}  // namespace maskclip::nn
