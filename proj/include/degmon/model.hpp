#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "degmon/backbone.hpp"
#include "degmon/image.hpp"
#include "degmon/manifold_head.hpp"
#include "degmon/prototype.hpp"

namespace degmon {

struct ModelConfig {
  BackboneConfig backbone;
  ProjectionConfig projection;
  PoolMode pool = PoolMode::kAttention;
  bool last_layer_only = false;

  /// Indices into the backbone tap list that feed the head.
  std::vector<int> head_taps() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Backbone plus manifold head: images -> unit-norm embeddings.
template <typename T>
class EmbeddingModel {
 public:
  struct Cache {
    typename Backbone<T>::Cache backbone;
    typename ManifoldHead<T>::Cache head;
  };

  explicit EmbeddingModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  ManifoldHead<T>& head() { return head_; }
  const ManifoldHead<T>& head() const { return head_; }
  int embed_dim() const { return cfg_.projection.embed_dim; }

  void init(std::uint64_t seed);

  RowMatrix<T> embed(const Tensor<T>& images, Cache* cache) const;

  /// Embeds precomputed tap maps (all backbone taps, in tap order).
  RowMatrix<T> embed_features(const FeatureMapSet<T>& fm) const;

  /// Accumulates gradients of every trainable parameter given dL/dz.
  void backward(const Cache& cache, const RowMatrix<T>& dz);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

 private:
  ModelConfig cfg_;
  Backbone<T> backbone_;
  ManifoldHead<T> head_;
};

/// Embeds images (resized to the model input size) in chunks.
RowMatrix<float> embed_images(const EmbeddingModel<float>& model, std::span<const ImageBuffer> images,
                              int chunk = 64);

inline constexpr const char* kPrototypeArray = "prototype.mu";

void save_manifold_checkpoint(const std::filesystem::path& path, const EmbeddingModel<float>& model,
                              const PristinePrototype& prototype, const std::string& config_hash);

struct ManifoldCheckpoint {
  std::unique_ptr<EmbeddingModel<float>> model;
  PristinePrototype prototype;
  std::string config_hash;
};

ManifoldCheckpoint load_manifold_checkpoint(const std::filesystem::path& path);

}  // namespace degmon
