#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "degmon/image.hpp"
#include "degmon/layers.hpp"
#include "degmon/tensor.hpp"

namespace degmon {

struct TapSpec {
  int stage = 0;  // 1-based
  int channels = 0;
  int stride = 0;

  bool operator==(const TapSpec&) const = default;
};

struct FeatureTapConfig {
  std::vector<TapSpec> taps;

  /// At least two taps with strictly increasing strides.
  void validate() const;
};

/// Five stages that each halve the resolution, with feature taps. The first
/// `pooled_stages` stages run a stride-1 3x3 conv, the activation and a 2x2
/// average pool; the remaining ones use a stride-2 3x3 conv and the activation.
struct BackboneConfig {
  std::vector<int> widths{16, 32, 64, 96, 128};
  std::vector<int> tap_stages{1, 2, 3, 5};
  int input_size = 64;
  Activation activation = Activation::kSilu;
  int pooled_stages = 0;

  FeatureTapConfig tap_config() const;
  void validate() const;
};

template <typename T>
struct FeatureMapSet {
  std::vector<Tensor<T>> maps;  // one per tap, each N x C_l x H_l x W_l

  int batch() const { return maps.empty() ? 0 : maps.front().n; }
};

template <typename T>
class Backbone {
 public:
  struct Cache {
    std::vector<typename Conv2d<T>::Cache> conv;
    std::vector<Tensor<T>> pre;
  };

  explicit Backbone(BackboneConfig cfg);

  const BackboneConfig& config() const { return cfg_; }
  FeatureTapConfig taps() const { return cfg_.tap_config(); }

  /// He-normal weights, zero biases.
  void init(std::uint64_t seed);

  /// `images` must be N x 3 x input_size x input_size. `cache` may be null.
  FeatureMapSet<T> forward(const Tensor<T>& images, Cache* cache) const;

  FeatureMapSet<T> extract_features(const ImageBuffer& img) const;

  /// Accumulates parameter gradients given dL/d(tap map); an empty tensor in
  /// `tap_grads` means that tap receives no gradient.
  void backward(const Cache& cache, const std::vector<Tensor<T>>& tap_grads);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  void set_trainable(bool trainable);

 private:
  int last_stage() const;

  BackboneConfig cfg_;
  std::vector<Conv2d<T>> stages_;
};

/// Writes maps as arrays "tap0".."tap{L-1}" of shape C x H x W (batch of one).
void save_feature_maps(const std::filesystem::path& path, const FeatureMapSet<float>& fms);

/// Loads externally computed tap maps. Shapes must match `taps` at
/// `input_size`; missing taps raise FormatError, extra arrays are ignored with
/// a logged warning.
FeatureMapSet<float> load_external_features(const std::filesystem::path& path, const FeatureTapConfig& taps,
                                            int input_size);

}  // namespace degmon
