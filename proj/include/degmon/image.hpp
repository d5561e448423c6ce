#pragma once

#include <span>
#include <vector>

#include <opencv2/core.hpp>

namespace degmon {

/// H x W x 3 RGB raster with values in [0, 1], stored interleaved (HWC).
class ImageBuffer {
 public:
  static constexpr int kChannels = 3;

  ImageBuffer() = default;
  ImageBuffer(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  float& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c]; }
  float at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  /// CV_32FC3 header sharing this buffer's storage.
  cv::Mat mat();
  /// Deep copy as CV_32FC3.
  cv::Mat to_mat() const;
  static ImageBuffer from_mat(const cv::Mat& m);

  void clamp();
  double mean() const;

  bool operator==(const ImageBuffer& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

void validate_image(const ImageBuffer& img);

/// Bilinear resize; returns a copy when the size already matches.
ImageBuffer resize(const ImageBuffer& img, int height, int width);

/// Crop of size (height, width) centred in the image.
ImageBuffer center_crop(const ImageBuffer& img, int height, int width);

/// Rounds every value to the nearest multiple of 1/255 (the 8-bit grid).
ImageBuffer quantize8(const ImageBuffer& img);

double mean_squared_difference(const ImageBuffer& a, const ImageBuffer& b);
double max_abs_difference(const ImageBuffer& a, const ImageBuffer& b);

}  // namespace degmon
