#include "maskclip/objective.hpp"

#include "maskclip/errors.hpp"

namespace maskclip::objective {

namespace F = torch::nn::functional;

void LossConfig::validate() const {
  if (w_ce < 0 || w_bce < 0 || w_edg < 0) throw ConfigError("loss weights must be >= 0");
  if (edge_radius < 1) throw ConfigError("edge_radius must be >= 1");
  if (!(edge_gain >= 1.0)) throw ConfigError("edge_gain must be >= 1");
  if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
}

torch::Tensor similarity_logits(const torch::Tensor& g, const torch::Tensor& t_real, const torch::Tensor& t_fake,
                                double temperature) {
  auto t = torch::stack({t_real, t_fake});  // [2, D]
  return torch::matmul(g, t.transpose(0, 1)) / temperature;
}

torch::Tensor detection_loss(const torch::Tensor& g, const torch::Tensor& t_real, const torch::Tensor& t_fake,
                             const torch::Tensor& labels, double temperature) {
  if (g.dim() != 2 || labels.dim() != 1 || labels.size(0) != g.size(0))
    throw ShapeError("detection_loss expects g [B, D] and labels [B]");
  return F::cross_entropy(similarity_logits(g, t_real, t_fake, temperature), labels);
}

torch::Tensor edge_weight_map(const torch::Tensor& mask, int radius, double gain) {
  const bool single = mask.dim() == 2;
  auto m = (single ? mask.unsqueeze(0) : mask).unsqueeze(1).to(torch::kFloat64);  // [B,1,H,W]
  auto padded = F::pad(m, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
  const auto k = 2 * radius + 1;
  auto dilated = F::max_pool2d(padded, F::MaxPool2dFuncOptions(k).stride(1));
  auto eroded = -F::max_pool2d(-padded, F::MaxPool2dFuncOptions(k).stride(1));
  auto band = (dilated - eroded).squeeze(1);
  auto w = 1.0 + (gain - 1.0) * band;
  w = w.to(mask.scalar_type() == torch::kFloat64 ? torch::kFloat64 : torch::kFloat32);
  return single ? w.squeeze(0) : w;
}

torch::Tensor pixel_bce(const torch::Tensor& logits, const torch::Tensor& mask) {
  return F::binary_cross_entropy_with_logits(logits, mask.to(logits.dtype()));
}

torch::Tensor edge_weighted_bce(const torch::Tensor& logits, const torch::Tensor& mask, const torch::Tensor& weights) {
  auto per_pixel = F::binary_cross_entropy_with_logits(
      logits, mask.to(logits.dtype()), F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
  return (weights.to(logits.dtype()) * per_pixel).mean();
}

LossTerms combined_loss(const torch::Tensor& m_fake, const torch::Tensor& mask, const torch::Tensor& g,
                        const torch::Tensor& t_real, const torch::Tensor& t_fake, const torch::Tensor& labels,
                        const LossConfig& cfg) {
  if (!m_fake.sizes().equals(mask.sizes())) throw ShapeError("M_fake and mask shapes differ");
  if (!torch::isfinite(m_fake).all().item<bool>()) throw NumericError("non-finite values in M_fake logits");
  if (!torch::isfinite(g).all().item<bool>()) throw NumericError("non-finite values in the image representation");

  LossTerms terms;
  terms.ce = detection_loss(g, t_real, t_fake, labels, cfg.temperature);
  terms.bce = pixel_bce(m_fake, mask);
  terms.edg = edge_weighted_bce(m_fake, mask, edge_weight_map(mask.detach(), cfg.edge_radius, cfg.edge_gain));
  terms.total = cfg.w_ce * terms.ce + cfg.w_bce * terms.bce + cfg.w_edg * terms.edg;
  if (!torch::isfinite(terms.total).item<bool>()) throw NumericError("non-finite total loss");
  return terms;
}

}  // namespace maskclip::objective
