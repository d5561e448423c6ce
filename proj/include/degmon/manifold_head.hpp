#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "degmon/backbone.hpp"
#include "degmon/layers.hpp"
#include "degmon/tensor.hpp"

namespace degmon {

enum class PoolMode { kAttention, kGap };

std::string_view pool_mode_name(PoolMode m);
PoolMode parse_pool_mode(std::string_view name);

struct ProjectionConfig {
  int per_layer_dim = 32;   // d
  int embed_dim = 64;       // D
  int mlp_hidden = 128;     // 2D
  double temperature = 0.1;
  Activation mlp_activation = Activation::kSilu;

  void validate() const;
};

/// Per-layer 1x1 reduction, spatial attention pooling, concatenation and a
/// two-layer MLP followed by l2 normalisation.
template <typename T>
class ManifoldHead {
 public:
  struct LayerCache {
    Tensor<T> input;        // N x C x h x w
    Tensor<T> reduced;      // N x d x h x w
    RowMatrix<T> weights;   // N x (h*w), softmax attention
    RowMatrix<T> pooled;    // N x d
  };
  struct ProjectCache {
    RowMatrix<T> h;     // N x L*d
    RowMatrix<T> pre;   // N x hidden
    RowMatrix<T> act;   // N x hidden
    RowMatrix<T> y;     // N x D, before normalisation
    RowMatrix<T> z;     // N x D
  };
  struct Cache {
    std::vector<LayerCache> layers;
    ProjectCache project;
  };

  ManifoldHead(std::vector<int> tap_channels, ProjectionConfig cfg, PoolMode pool);

  const ProjectionConfig& config() const { return cfg_; }
  PoolMode pool_mode() const { return pool_; }
  int layer_count() const { return static_cast<int>(channels_.size()); }
  int descriptor_dim() const { return layer_count() * cfg_.per_layer_dim; }

  void init(std::uint64_t seed);

  /// 1x1 bias-free convolution of tap `layer` to d channels.
  Tensor<T> reduce_layer(const Tensor<T>& map, int layer) const;

  /// Softmax-weighted sum of channel vectors; returns N x d. Weights are
  /// written to `weights` (N x h*w) when non-null.
  RowMatrix<T> attention_pool(const Tensor<T>& reduced, int layer, RowMatrix<T>* weights = nullptr) const;

  /// Concatenates L blocks of N x d in tap order.
  RowMatrix<T> fuse(const std::vector<RowMatrix<T>>& pooled) const;

  /// MLP then l2 normalisation. Throws NumericalError when a pre-normalised
  /// row has norm below 1e-12.
  RowMatrix<T> project(const RowMatrix<T>& h, ProjectCache* cache = nullptr) const;

  RowMatrix<T> forward(const std::vector<const Tensor<T>*>& maps, Cache* cache) const;

  /// Accumulates parameter gradients given dL/dz; returns dL/d(map) per layer.
  std::vector<Tensor<T>> backward(const Cache& cache, const RowMatrix<T>& dz);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

  Parameter<T>& reduce_weight(int layer) { return reduce_[static_cast<std::size_t>(layer)]; }
  Parameter<T>& score_weight(int layer) { return score_[static_cast<std::size_t>(layer)]; }
  Parameter<T>& mlp1_weight() { return mlp1_w_; }
  Parameter<T>& mlp1_bias() { return mlp1_b_; }
  Parameter<T>& mlp2_weight() { return mlp2_w_; }
  Parameter<T>& mlp2_bias() { return mlp2_b_; }

 private:
  RowMatrix<T> project_backward(const ProjectCache& cache, const RowMatrix<T>& dz);

  std::vector<int> channels_;
  ProjectionConfig cfg_;
  PoolMode pool_;
  std::vector<Parameter<T>> reduce_;  // d x C_l
  std::vector<Parameter<T>> score_;   // d
  Parameter<T> mlp1_w_;               // hidden x L*d
  Parameter<T> mlp1_b_;
  Parameter<T> mlp2_w_;               // D x hidden
  Parameter<T> mlp2_b_;
};

}  // namespace degmon
