#include "degmon/model.hpp"

#include <algorithm>
#include <string>

#include "degmon/array_store.hpp"
#include "degmon/error.hpp"
#include "degmon/rng.hpp"

namespace degmon {

namespace {

std::vector<int> head_channels(const ModelConfig& cfg) {
  const auto taps = cfg.backbone.tap_config();
  std::vector<int> out;
  for (int t : cfg.head_taps()) out.push_back(taps.taps[static_cast<std::size_t>(t)].channels);
  return out;
}

constexpr const char* kCheckpointKind = "degmon.manifold";
constexpr int kCheckpointVersion = 1;

}  // namespace

std::vector<int> ModelConfig::head_taps() const {
  const int n = static_cast<int>(backbone.tap_stages.size());
  if (last_layer_only) return {n - 1};
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

void ModelConfig::validate() const {
  backbone.validate();
  projection.validate();
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"backbone",
       {{"widths", backbone.widths},
        {"tap_stages", backbone.tap_stages},
        {"input_size", backbone.input_size},
        {"pooled_stages", backbone.pooled_stages},
        {"activation", activation_name(backbone.activation)}}},
      {"projection",
       {{"per_layer_dim", projection.per_layer_dim},
        {"embed_dim", projection.embed_dim},
        {"mlp_hidden", projection.mlp_hidden},
        {"temperature", projection.temperature},
        {"activation", activation_name(projection.mlp_activation)}}},
      {"pool", pool_mode_name(pool)},
      {"last_layer_only", last_layer_only},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    const auto& b = j.at("backbone");
    c.backbone.widths = b.at("widths").get<std::vector<int>>();
    c.backbone.tap_stages = b.at("tap_stages").get<std::vector<int>>();
    c.backbone.input_size = b.at("input_size").get<int>();
    c.backbone.pooled_stages = b.at("pooled_stages").get<int>();
    c.backbone.activation = parse_activation(b.at("activation").get<std::string>());
    const auto& p = j.at("projection");
    c.projection.per_layer_dim = p.at("per_layer_dim").get<int>();
    c.projection.embed_dim = p.at("embed_dim").get<int>();
    c.projection.mlp_hidden = p.at("mlp_hidden").get<int>();
    c.projection.temperature = p.at("temperature").get<double>();
    c.projection.mlp_activation = parse_activation(p.at("activation").get<std::string>());
    c.pool = parse_pool_mode(j.at("pool").get<std::string>());
    c.last_layer_only = j.at("last_layer_only").get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model config: ") + e.what());
  }
}

template <typename T>
EmbeddingModel<T>::EmbeddingModel(ModelConfig cfg)
    : cfg_(std::move(cfg)), backbone_(cfg_.backbone), head_(head_channels(cfg_), cfg_.projection, cfg_.pool) {
  cfg_.validate();
}

template <typename T>
void EmbeddingModel<T>::init(std::uint64_t seed) {
  backbone_.init(combine_seed(seed, 1));
  head_.init(combine_seed(seed, 2));
}

template <typename T>
RowMatrix<T> EmbeddingModel<T>::embed(const Tensor<T>& images, Cache* cache) const {
  const auto fm = backbone_.forward(images, cache ? &cache->backbone : nullptr);
  std::vector<const Tensor<T>*> maps;
  for (int t : cfg_.head_taps()) maps.push_back(&fm.maps[static_cast<std::size_t>(t)]);
  return head_.forward(maps, cache ? &cache->head : nullptr);
}

template <typename T>
RowMatrix<T> EmbeddingModel<T>::embed_features(const FeatureMapSet<T>& fm) const {
  if (fm.maps.size() != cfg_.backbone.tap_stages.size()) throw ValidationError("feature map count does not match taps");
  std::vector<const Tensor<T>*> maps;
  for (int t : cfg_.head_taps()) maps.push_back(&fm.maps[static_cast<std::size_t>(t)]);
  return head_.forward(maps, nullptr);
}

template <typename T>
void EmbeddingModel<T>::backward(const Cache& cache, const RowMatrix<T>& dz) {
  auto head_grads = head_.backward(cache.head, dz);
  const auto bb = backbone_.parameters();
  if (std::none_of(bb.begin(), bb.end(), [](const Parameter<T>* p) { return p->trainable; })) return;
  std::vector<Tensor<T>> tap_grads(cfg_.backbone.tap_stages.size());
  const auto taps = cfg_.head_taps();
  for (std::size_t i = 0; i < taps.size(); ++i) tap_grads[static_cast<std::size_t>(taps[i])] = std::move(head_grads[i]);
  backbone_.backward(cache.backbone, tap_grads);
}

template <typename T>
std::vector<Parameter<T>*> EmbeddingModel<T>::parameters() {
  auto out = backbone_.parameters();
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> EmbeddingModel<T>::parameters() const {
  auto out = backbone_.parameters();
  for (const auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template class EmbeddingModel<float>;
template class EmbeddingModel<double>;

RowMatrix<float> embed_images(const EmbeddingModel<float>& model, std::span<const ImageBuffer> images, int chunk) {
  const int size = model.config().backbone.input_size;
  RowMatrix<float> out(static_cast<Eigen::Index>(images.size()), model.embed_dim());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(chunk));
    std::vector<ImageBuffer> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(resize(images[i], size, size));
    const auto z = model.embed(images_to_tensor<float>(batch), nullptr);
    out.middleRows(static_cast<Eigen::Index>(start), z.rows()) = z;
  }
  return out;
}

void save_manifold_checkpoint(const std::filesystem::path& path, const EmbeddingModel<float>& model,
                              const PristinePrototype& prototype, const std::string& config_hash) {
  ArrayStore store;
  for (const auto* p : model.parameters()) store.put(p->name, NamedArray::from_f32(p->shape, p->value));
  if (prototype.initialized()) {
    const auto& mu = prototype.mu();
    store.put(kPrototypeArray, NamedArray::from_f64({mu.size()}, std::span<const double>(mu.data(), mu.size())));
  }
  store.set_metadata({
      {"kind", kCheckpointKind},
      {"version", kCheckpointVersion},
      {"config_hash", config_hash},
      {"model", model.config().to_json()},
      {"prototype", {{"momentum", prototype.momentum()}, {"warmup_epoch", prototype.warmup_epoch()}}},
  });
  store.save(path);
}

ManifoldCheckpoint load_manifold_checkpoint(const std::filesystem::path& path) {
  const auto store = ArrayStore::load(path);
  const auto meta = store.metadata();
  if (meta.value("kind", "") != kCheckpointKind) throw FormatError(path.string() + " is not a manifold checkpoint");
  if (meta.value("version", 0) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  ManifoldCheckpoint ck;
  ck.model = std::make_unique<EmbeddingModel<float>>(ModelConfig::from_json(meta.at("model")));
  for (auto* p : ck.model->parameters()) {
    const auto& arr = store.get(p->name);
    if (arr.shape != p->shape) throw FormatError("parameter '" + p->name + "' has the wrong shape");
    const auto values = arr.to_f32();
    p->value.assign(values.begin(), values.end());
  }
  const auto& pm = meta.at("prototype");
  ck.prototype = PristinePrototype(ck.model->embed_dim(), pm.at("momentum").get<double>(),
                                   pm.at("warmup_epoch").get<int>());
  if (store.contains(kPrototypeArray)) {
    const auto mu = store.get(kPrototypeArray).to_f64();
    ck.prototype.restore(Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size())));
  }
  ck.config_hash = meta.value("config_hash", "");
  return ck;
}

}  // namespace degmon
