#pragma once

// FPN-style decoder over the final spatial tokens: for every scale s the token grid is
// bilinearly resized by s, passed through a 3x3 convolution, resized to the target (H, W),
// and the branches are concatenated along channels.

#include <string>
#include <vector>

#include <torch/torch.h>

namespace maskclip::decoder {

struct DecoderConfig {
  std::vector<double> scales{0.5, 2.0, 4.0};
  int channels = 64;  // per scale

  void validate() const;
  int output_channels() const { return channels * static_cast<int>(scales.size()); }
};

/// Module name of one branch: scale 0.5 -> "scale_0p5", 2 -> "scale_2".
std::string scale_key(double s);

/// Bilinear resize, align_corners = false. Same-size requests return the input.
torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t h, std::int64_t w);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(int token_width, DecoderConfig cfg);

  /// tokens: [B, gh*gw, D_m] -> F: [B, sum(C_s), H, W].
  torch::Tensor forward(const torch::Tensor& tokens, int grid_h, int grid_w, int out_h, int out_w);

  const DecoderConfig& config() const { return cfg_; }
  torch::nn::Conv2d branch(std::size_t i) const { return convs_[i]; }

 private:
  DecoderConfig cfg_;
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(Decoder);

}  // namespace maskclip::decoder
