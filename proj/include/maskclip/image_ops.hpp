#pragma once

// Image primitives shared by the data pipeline and the robustness sweep.
//
// Conventions: images are CV_32FC3, RGB channel order, values in [0,1].
// Masks are CV_8UC1 with values {0,1}. On disk masks are {0,255} PNG.

#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace maskclip::image_ops {

cv::Mat read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const cv::Mat& rgb);

cv::Mat read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const cv::Mat& mask);

/// Encodes an 8-bit copy of the image; used for digests and fixtures.
cv::Mat to_u8(const cv::Mat& rgb);
cv::Mat from_u8(const cv::Mat& rgb_u8);

/// Bilinear for images, nearest for masks. Same-size requests return a copy.
cv::Mat resize_image(const cv::Mat& rgb, int width, int height);
cv::Mat resize_mask(const cv::Mat& mask, int width, int height);

/// Kernel-size to sigma convention: 0.3*((k-1)/2 - 1) + 0.8.
double gaussian_sigma(int kernel);

/// Gaussian blur with replicate border. kernel == 1 is a passthrough.
cv::Mat gaussian_blur(const cv::Mat& rgb, int kernel);

/// Encode as JPEG at `quality` then decode. Dimensions are preserved.
cv::Mat jpeg_roundtrip(const cv::Mat& rgb, int quality);

/// Reflection padding (no edge repeat), split evenly between both sides, until the
/// result is at least min_height x min_width.
cv::Mat reflect_pad(const cv::Mat& m, int min_height, int min_width);

/// HWC float image -> CHW tensor (float32).
torch::Tensor image_to_tensor(const cv::Mat& rgb);
/// {0,1} mask -> HxW float32 tensor.
torch::Tensor mask_to_tensor(const cv::Mat& mask);
/// HxW tensor with values in {0,1} (or probabilities, thresholded at 0.5) -> CV_8UC1 {0,1}.
cv::Mat tensor_to_mask(const torch::Tensor& t);

std::size_t count_nonzero(const cv::Mat& mask);

}  // namespace maskclip::image_ops
