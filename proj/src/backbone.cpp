#include "degmon/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "degmon/array_store.hpp"
#include "degmon/error.hpp"
#include "degmon/rng.hpp"

namespace degmon {

void FeatureTapConfig::validate() const {
  if (taps.size() < 2) throw ConfigError("at least two feature taps are required");
  for (std::size_t i = 1; i < taps.size(); ++i) {
    if (taps[i].stride <= taps[i - 1].stride) throw ConfigError("tap strides must be strictly increasing");
  }
  for (const auto& t : taps) {
    if (t.channels < 1 || t.stride < 1) throw ConfigError("tap channels and stride must be positive");
  }
}

FeatureTapConfig BackboneConfig::tap_config() const {
  FeatureTapConfig out;
  for (int s : tap_stages) {
    if (s < 1 || s > static_cast<int>(widths.size())) {
      throw ConfigError("tap stage " + std::to_string(s) + " outside 1.." + std::to_string(widths.size()));
    }
    out.taps.push_back({s, widths[static_cast<std::size_t>(s - 1)], 1 << s});
  }
  return out;
}

void BackboneConfig::validate() const {
  if (widths.empty()) throw ConfigError("backbone needs at least one stage");
  for (int w : widths) {
    if (w < 1) throw ConfigError("stage widths must be positive");
  }
  if (pooled_stages < 0 || pooled_stages > static_cast<int>(widths.size())) {
    throw ConfigError("pooled_stages must lie in 0..stage count");
  }
  tap_config().validate();
  const int deepest = *std::max_element(tap_stages.begin(), tap_stages.end());
  if (input_size % (1 << deepest) != 0) {
    throw ConfigError("input_size must be divisible by the deepest tap stride");
  }
}

namespace {

// Removes each filter's mean so that a constant brightness offset does not
// reach the first activation at initialisation.
template <typename T>
void center_filters(Parameter<T>& w) {
  const auto rows = w.shape[0];
  const auto cols = w.shape[1];
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = w.value.data() + r * cols;
    T mean = T(0);
    for (std::int64_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<T>(cols);
    for (std::int64_t c = 0; c < cols; ++c) row[c] -= mean;
  }
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in = 3;
  for (std::size_t s = 0; s < cfg_.widths.size(); ++s) {
    const int stride = static_cast<int>(s) < cfg_.pooled_stages ? 1 : 2;
    stages_.emplace_back("backbone.stage" + std::to_string(s + 1), in, cfg_.widths[s], 3, stride, 1);
    in = cfg_.widths[s];
  }
}

template <typename T>
int Backbone<T>::last_stage() const {
  return *std::max_element(cfg_.tap_stages.begin(), cfg_.tap_stages.end());
}

template <typename T>
void Backbone<T>::init(std::uint64_t seed) {
  Rng rng(mix64(seed));
  for (auto& conv : stages_) {
    const double fan_in = static_cast<double>(conv.weight.shape[1]);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& w : conv.weight.value) w = static_cast<T>(stddev * standard_normal(rng));
    if (&conv == &stages_.front()) center_filters(conv.weight);
    std::fill(conv.bias.value.begin(), conv.bias.value.end(), T(0));
  }
}

template <typename T>
FeatureMapSet<T> Backbone<T>::forward(const Tensor<T>& images, Cache* cache) const {
  if (images.c != 3 || images.h != cfg_.input_size || images.w != cfg_.input_size) {
    throw ValidationError("backbone expects 3 x " + std::to_string(cfg_.input_size) + " x " +
                          std::to_string(cfg_.input_size) + " input, got " + std::to_string(images.c) + " x " +
                          std::to_string(images.h) + " x " + std::to_string(images.w));
  }
  const int stages = last_stage();
  if (cache) {
    cache->conv.assign(static_cast<std::size_t>(stages), {});
    cache->pre.assign(static_cast<std::size_t>(stages), {});
  }
  FeatureMapSet<T> out;
  Tensor<T> x = images;
  for (int s = 0; s < stages; ++s) {
    auto* conv_cache = cache ? &cache->conv[static_cast<std::size_t>(s)] : nullptr;
    Tensor<T> pre = stages_[static_cast<std::size_t>(s)].forward(x, conv_cache);
    x = pre;
    for (auto& v : x.data) v = activate(cfg_.activation, v);
    if (s < cfg_.pooled_stages) x = avg_pool2(x);
    if (cache) cache->pre[static_cast<std::size_t>(s)] = std::move(pre);
    if (std::find(cfg_.tap_stages.begin(), cfg_.tap_stages.end(), s + 1) != cfg_.tap_stages.end()) {
      out.maps.push_back(x);
    }
  }
  return out;
}

template <typename T>
FeatureMapSet<T> Backbone<T>::extract_features(const ImageBuffer& img) const {
  const ImageBuffer one[] = {img};
  return forward(images_to_tensor<T>(one), nullptr);
}

template <typename T>
void Backbone<T>::backward(const Cache& cache, const std::vector<Tensor<T>>& tap_grads) {
  if (tap_grads.size() != cfg_.tap_stages.size()) throw ValidationError("one gradient per tap expected");
  const int stages = last_stage();
  Tensor<T> grad;  // dL/d(stage output)
  for (int s = stages - 1; s >= 0; --s) {
    const auto tap = std::find(cfg_.tap_stages.begin(), cfg_.tap_stages.end(), s + 1);
    if (tap != cfg_.tap_stages.end()) {
      const auto& g = tap_grads[static_cast<std::size_t>(tap - cfg_.tap_stages.begin())];
      if (!g.data.empty()) {
        if (grad.data.empty()) {
          grad = g;
        } else {
          for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
        }
      }
    }
    if (grad.data.empty()) continue;
    if (s < cfg_.pooled_stages) grad = avg_pool2_backward(grad);
    const auto& pre = cache.pre[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] *= activate_grad(cfg_.activation, pre.data[i]);
    auto& conv = stages_[static_cast<std::size_t>(s)];
    const bool need_input = s > 0;
    grad = conv.backward(grad, cache.conv[static_cast<std::size_t>(s)], need_input);
  }
}

template <typename T>
std::vector<Parameter<T>*> Backbone<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& conv : stages_) {
    out.push_back(&conv.weight);
    out.push_back(&conv.bias);
  }
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> Backbone<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& conv : stages_) {
    out.push_back(&conv.weight);
    out.push_back(&conv.bias);
  }
  return out;
}

template <typename T>
void Backbone<T>::set_trainable(bool trainable) {
  for (auto* p : parameters()) p->trainable = trainable;
}

template class Backbone<float>;
template class Backbone<double>;

void save_feature_maps(const std::filesystem::path& path, const FeatureMapSet<float>& fms) {
  ArrayStore store;
  for (std::size_t l = 0; l < fms.maps.size(); ++l) {
    const auto& m = fms.maps[l];
    if (m.n != 1) throw ValidationError("save_feature_maps expects a batch of one");
    store.put("tap" + std::to_string(l), NamedArray::from_f32({m.c, m.h, m.w}, m.data));
  }
  store.save(path);
}

FeatureMapSet<float> load_external_features(const std::filesystem::path& path, const FeatureTapConfig& taps,
                                            int input_size) {
  const auto store = ArrayStore::load(path);
  FeatureMapSet<float> out;
  std::set<std::string> expected;
  for (std::size_t l = 0; l < taps.taps.size(); ++l) {
    const std::string name = "tap" + std::to_string(l);
    expected.insert(name);
    if (!store.contains(name)) throw FormatError("feature container " + path.string() + " is missing '" + name + "'");
    const auto& arr = store.get(name);
    const auto& tap = taps.taps[l];
    const std::int64_t side = input_size / tap.stride;
    if (arr.shape != std::vector<std::int64_t>{tap.channels, side, side}) {
      throw FormatError("array '" + name + "' has the wrong shape for tap stage " + std::to_string(tap.stage));
    }
    Tensor<float> t(1, tap.channels, static_cast<int>(side), static_cast<int>(side));
    const auto values = arr.to_f32();
    t.data.assign(values.begin(), values.end());
    out.maps.push_back(std::move(t));
  }
  for (const auto& name : store.names()) {
    if (!expected.count(name) && name != ArrayStore::kMetadataName) {
      spdlog::warn("ignoring extra array '{}' in {}", name, path.string());
    }
  }
  return out;
}

}  // namespace degmon
