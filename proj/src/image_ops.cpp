#include "maskclip/image_ops.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "maskclip/errors.hpp"

namespace maskclip::image_ops {

namespace fs = std::filesystem;

cv::Mat read_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_u8(rgb);
}

void write_image(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(to_u8(rgb), bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image: " + path.string());
}

cv::Mat read_mask(const fs::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw IoError("cannot decode mask: " + path.string());
  cv::Mat mask;
  cv::threshold(gray, mask, 127, 1, cv::THRESH_BINARY);
  return mask;
}

void write_mask(const fs::path& path, const cv::Mat& mask) {
  CV_Assert(mask.type() == CV_8UC1);
  cv::Mat out = mask * 255;
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write mask: " + path.string());
}

cv::Mat to_u8(const cv::Mat& rgb) {
  if (rgb.depth() == CV_8U) return rgb.clone();
  cv::Mat out;
  rgb.convertTo(out, CV_8UC3, 255.0);
  return out;
}

cv::Mat from_u8(const cv::Mat& rgb_u8) {
  cv::Mat out;
  rgb_u8.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

cv::Mat resize_image(const cv::Mat& rgb, int width, int height) {
  if (rgb.cols == width && rgb.rows == height) return rgb.clone();
  cv::Mat out;
  cv::resize(rgb, out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return out;
}

cv::Mat resize_mask(const cv::Mat& mask, int width, int height) {
  if (mask.cols == width && mask.rows == height) return mask.clone();
  cv::Mat out;
  cv::resize(mask, out, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
  return out;
}

double gaussian_sigma(int kernel) { return 0.3 * ((kernel - 1) / 2.0 - 1.0) + 0.8; }

cv::Mat gaussian_blur(const cv::Mat& rgb, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError("blur kernel must be odd and >= 1, got " + std::to_string(kernel));
  if (kernel == 1) return rgb.clone();
  const double sigma = gaussian_sigma(kernel);
  cv::Mat out;
  cv::GaussianBlur(rgb, out, cv::Size(kernel, kernel), sigma, sigma, cv::BORDER_REPLICATE);
  return out;
}

cv::Mat jpeg_roundtrip(const cv::Mat& rgb, int quality) {
  if (quality < 1 || quality > 100) throw ValidationError("jpeg quality must be in [1,100], got " + std::to_string(quality));
  cv::Mat bgr;
  cv::cvtColor(to_u8(rgb), bgr, cv::COLOR_RGB2BGR);
  std::vector<uchar> buf;
  if (!cv::imencode(".jpg", bgr, buf, {cv::IMWRITE_JPEG_QUALITY, quality})) throw IoError("jpeg encode failed");
  cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (decoded.empty()) throw IoError("jpeg decode failed");
  cv::Mat back;
  cv::cvtColor(decoded, back, cv::COLOR_BGR2RGB);
  return from_u8(back);
}

cv::Mat reflect_pad(const cv::Mat& m, int min_height, int min_width) {
  cv::Mat out = m;
  // BORDER_REFLECT_101 requires the pad to be smaller than the source; repeat until large enough.
  while (out.rows < min_height || out.cols < min_width) {
    const int dh = std::max(0, std::min(min_height - out.rows, out.rows - 1));
    const int dw = std::max(0, std::min(min_width - out.cols, out.cols - 1));
    if (dh == 0 && dw == 0) {
      cv::copyMakeBorder(out, out, 0, std::max(0, min_height - out.rows), 0, std::max(0, min_width - out.cols),
                         cv::BORDER_REPLICATE);
      break;
    }
    cv::copyMakeBorder(out, out, dh / 2, dh - dh / 2, dw / 2, dw - dw / 2, cv::BORDER_REFLECT_101);
  }
  return out;
}

torch::Tensor image_to_tensor(const cv::Mat& rgb) {
  CV_Assert(rgb.type() == CV_32FC3);
  cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  auto hwc = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor mask_to_tensor(const cv::Mat& mask) {
  CV_Assert(mask.type() == CV_8UC1);
  cv::Mat contiguous = mask.isContinuous() ? mask : mask.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols}, torch::kUInt8);
  return t.to(torch::kFloat32);
}

cv::Mat tensor_to_mask(const torch::Tensor& t) {
  TORCH_CHECK(t.dim() == 2, "mask tensor must be HxW");
  auto u8 = (t.to(torch::kFloat32) > 0.5).to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1);
  std::memcpy(m.data, u8.data_ptr<uint8_t>(), static_cast<std::size_t>(u8.numel()));
  return m;
}

std::size_t count_nonzero(const cv::Mat& mask) { return static_cast<std::size_t>(cv::countNonZero(mask)); }

}  // namespace maskclip::image_ops
