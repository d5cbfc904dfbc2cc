#pragma once

// Three-term training objective: detection cross-entropy over cosine logits, per-pixel BCE
// on M_fake, and an edge-weighted BCE that up-weights a band around mask boundaries.

#include <torch/torch.h>

namespace maskclip::objective {

struct LossConfig {
  double w_ce = 1.0;
  double w_bce = 1.0;
  double w_edg = 1.0;
  int edge_radius = 3;
  double edge_gain = 4.0;
  double temperature = 0.07;

  void validate() const;
};

struct LossTerms {
  torch::Tensor total;
  torch::Tensor ce;
  torch::Tensor bce;
  torch::Tensor edg;
};

/// [B, 2] logits cos(g, t_c) / tau for c in (real, fake). Inputs are unit vectors.
torch::Tensor similarity_logits(const torch::Tensor& g, const torch::Tensor& t_real, const torch::Tensor& t_fake,
                                double temperature);

/// Mean over the batch of -log softmax(similarity_logits)[label]. labels: [B] int64, 1 = fake.
torch::Tensor detection_loss(const torch::Tensor& g, const torch::Tensor& t_real, const torch::Tensor& t_fake,
                             const torch::Tensor& labels, double temperature);

/// Morphological edge band (dilation minus erosion, square (2r+1)^2 window, replicate
/// border) mapped to weights 1 + (gain - 1) * band. mask: [H, W] or [B, H, W] in {0,1}.
torch::Tensor edge_weight_map(const torch::Tensor& mask, int radius, double gain);

/// Mean per-pixel BCE of sigmoid(logits) against mask, computed from logits.
torch::Tensor pixel_bce(const torch::Tensor& logits, const torch::Tensor& mask);

/// Mean of weight * per-pixel BCE.
torch::Tensor edge_weighted_bce(const torch::Tensor& logits, const torch::Tensor& mask, const torch::Tensor& weights);

/// total = w_ce * L_CE + w_bce * L_BCE + w_edg * L_EDG. m_fake/mask: [B, H, W].
/// Throws NumericError when the logits hold NaN or Inf.
LossTerms combined_loss(const torch::Tensor& m_fake, const torch::Tensor& mask, const torch::Tensor& g,
                        const torch::Tensor& t_real, const torch::Tensor& t_fake, const torch::Tensor& labels,
                        const LossConfig& cfg);

}  // namespace maskclip::objective
