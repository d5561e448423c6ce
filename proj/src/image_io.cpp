#include "degmon/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "degmon/error.hpp"

namespace degmon {

namespace {

ImageBuffer from_bgr8(const cv::Mat& bgr) {
  ImageBuffer out(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(y, x, 0) = row[x][2] / 255.0f;
      out.at(y, x, 1) = row[x][1] / 255.0f;
      out.at(y, x, 2) = row[x][0] / 255.0f;
    }
  }
  return out;
}

}  // namespace

std::optional<ImageBuffer> try_read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) return std::nullopt;
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(bytes, cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (decoded.empty()) return std::nullopt;
  if (decoded.channels() == 1) {
    cv::cvtColor(decoded, decoded, cv::COLOR_GRAY2BGR);
  }
  if (decoded.depth() != CV_8U) {
    decoded.convertTo(decoded, CV_8U);
  }
  return from_bgr8(decoded);
}

ImageBuffer read_image(const std::filesystem::path& path) {
  auto img = try_read_image(path);
  if (!img) {
    throw IoError("cannot decode image " + path.string());
  }
  return *std::move(img);
}

void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw IoError("cannot write image " + path.string());
  }
}

}  // namespace degmon
