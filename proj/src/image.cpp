#include "degmon/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/imgproc.hpp>

#include "degmon/error.hpp"

namespace degmon {

ImageBuffer::ImageBuffer(int height, int width, float fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw ValidationError("image dimensions must be positive, got " + std::to_string(height) +
                          "x" + std::to_string(width));
  }
  data_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

cv::Mat ImageBuffer::mat() { return cv::Mat(height_, width_, CV_32FC3, data_.data()); }

cv::Mat ImageBuffer::to_mat() const {
  cv::Mat out(height_, width_, CV_32FC3);
  std::copy(data_.begin(), data_.end(), out.ptr<float>());
  return out;
}

ImageBuffer ImageBuffer::from_mat(const cv::Mat& m) {
  if (m.type() != CV_32FC3) {
    throw ValidationError("expected a CV_32FC3 matrix");
  }
  ImageBuffer out(m.rows, m.cols);
  cv::Mat dst = out.mat();
  m.copyTo(dst);
  return out;
}

void ImageBuffer::clamp() {
  for (float& v : data_) {
    v = std::clamp(v, 0.0f, 1.0f);
  }
}

double ImageBuffer::mean() const {
  double sum = 0.0;
  for (float v : data_) sum += v;
  return data_.empty() ? 0.0 : sum / static_cast<double>(data_.size());
}

void validate_image(const ImageBuffer& img) {
  if (img.empty() || img.height() <= 0 || img.width() <= 0) {
    throw ValidationError("image is empty");
  }
  for (float v : img.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ValidationError("image value outside [0,1]");
    }
  }
}

ImageBuffer resize(const ImageBuffer& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  cv::Mat dst;
  cv::resize(img.to_mat(), dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  ImageBuffer out = ImageBuffer::from_mat(dst);
  out.clamp();
  return out;
}

ImageBuffer center_crop(const ImageBuffer& img, int height, int width) {
  if (height <= 0 || width <= 0 || height > img.height() || width > img.width()) {
    throw ValidationError("crop size out of range");
  }
  const int y0 = (img.height() - height) / 2;
  const int x0 = (img.width() - width) / 2;
  ImageBuffer out(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < ImageBuffer::kChannels; ++c) {
        out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
      }
    }
  }
  return out;
}

ImageBuffer quantize8(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (float& v : out.values()) {
    v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
  return out;
}

double mean_squared_difference(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ValidationError("image size mismatch");
  }
  const auto va = a.values();
  const auto vb = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - vb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(va.size());
}

double max_abs_difference(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ValidationError("image size mismatch");
  }
  const auto va = a.values();
  const auto vb = b.values();
  double m = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(va[i]) - vb[i]));
  }
  return m;
}

}  // namespace degmon
