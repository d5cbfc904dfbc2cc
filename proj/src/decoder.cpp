#include "maskclip/decoder.hpp"

#include <cmath>
#include <cstdio>

#include "maskclip/errors.hpp"

namespace maskclip::decoder {

namespace F = torch::nn::functional;

void DecoderConfig::validate() const {
  if (scales.empty()) throw ConfigError("decoder needs at least one scale");
  for (double s : scales)
    if (!(s > 0)) throw ConfigError("decoder scales must be positive");
  if (channels < 1) throw ConfigError("decoder channels must be >= 1");
}

std::string scale_key(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", s);
  std::string key = "scale_";
  for (const char* c = buf; *c; ++c) key.push_back(*c == '.' ? 'p' : *c);
  return key;
}

torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(-2) == h && x.size(-1) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

DecoderImpl::DecoderImpl(int token_width, DecoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (double s : cfg_.scales) {
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(token_width, cfg_.channels, 3).padding(1));
    convs_.push_back(register_module(scale_key(s), conv));
  }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& tokens, int grid_h, int grid_w, int out_h, int out_w) {
  if (grid_h <= 0 || grid_w <= 0) throw ShapeError("decoder needs grid metadata");
  if (tokens.dim() != 3 || tokens.size(1) != static_cast<std::int64_t>(grid_h) * grid_w)
    throw ShapeError("decoder token count does not match its grid");
  const auto b = tokens.size(0), d = tokens.size(2);
  auto grid = tokens.transpose(1, 2).reshape({b, d, grid_h, grid_w});
  std::vector<torch::Tensor> branches;
  for (std::size_t i = 0; i < cfg_.scales.size(); ++i) {
    const auto h = static_cast<std::int64_t>(std::lround(grid_h * cfg_.scales[i]));
    const auto w = static_cast<std::int64_t>(std::lround(grid_w * cfg_.scales[i]));
    if (h < 1 || w < 1) throw ShapeError("decoder scale " + std::to_string(cfg_.scales[i]) + " collapses the grid below 1x1");
    branches.push_back(resize_bilinear(convs_[i](resize_bilinear(grid, h, w)), out_h, out_w));
  }
  return torch::cat(branches, 1);
}

}  // namespace maskclip::decoder
