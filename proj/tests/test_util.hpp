#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "degmon/dataset.hpp"
#include "degmon/image.hpp"
#include "degmon/model.hpp"
#include "degmon/rng.hpp"

namespace degmon::testing {

inline ImageBuffer random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuffer img(h, w);
  for (auto& v : img.values()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
  return img;
}

inline ImageBuffer gray_image(int h, int w, float value) { return ImageBuffer(h, w, value); }

/// Smooth gradient with a bright square; has both flat areas and edges.
inline ImageBuffer scene_image(int size, std::uint64_t seed) { return synth_image(seed, size, SynthStyle::kShapes); }

/// Narrow model for fast tests.
inline ModelConfig tiny_model(int input_size = 32) {
  ModelConfig mc;
  mc.backbone.widths = {4, 6, 8, 8, 8};
  mc.backbone.tap_stages = {1, 2, 3, 5};
  mc.backbone.input_size = input_size;
  mc.projection.per_layer_dim = 4;
  mc.projection.embed_dim = 8;
  mc.projection.mlp_hidden = 16;
  return mc;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("degmon_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace degmon::testing
