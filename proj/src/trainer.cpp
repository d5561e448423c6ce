#include "degmon/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "degmon/contrastive_loss.hpp"
#include "degmon/error.hpp"
#include "degmon/rng.hpp"

namespace degmon {

std::string_view prototype_schedule_name(PrototypeSchedule s) {
  return s == PrototypeSchedule::kPerStep ? "step" : "epoch";
}

PrototypeSchedule parse_prototype_schedule(std::string_view name) {
  if (name == "step") return PrototypeSchedule::kPerStep;
  if (name == "epoch") return PrototypeSchedule::kPerEpoch;
  throw ConfigError("unknown prototype schedule '" + std::string(name) + "' (expected step|epoch)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_pairs < 2) throw ConfigError("batch_pairs must be >= 2");
  adam.validate();
  if (!(prototype_momentum >= 0.0 && prototype_momentum < 1.0)) throw ConfigError("prototype momentum must lie in [0, 1)");
  if (resolved_warmup() >= epochs) throw ConfigError("warm-up epoch must be smaller than the epoch count");
}

std::vector<TrainingQuad> make_batch_quads(std::span<const ImageRecord> images,
                                           std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                           const DegradationConfig& degradation, std::uint64_t seed, int epoch) {
  std::vector<TrainingQuad> quads;
  quads.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const auto& ra = images[a];
    const auto& rb = images[b];
    const std::uint64_t s = combine_seed(derive_seed(seed, ra.id, static_cast<std::uint64_t>(epoch), 0),
                                         fnv1a64(rb.id));
    quads.push_back(make_training_quad(ra.image, rb.image, degradation, s));
  }
  return quads;
}

template <typename T>
double contrastive_step(EmbeddingModel<T>& model, std::span<const TrainingQuad> quads, bool hard_negatives,
                        bool with_grad) {
  const auto n = static_cast<Eigen::Index>(quads.size());
  std::vector<ImageBuffer> images;
  images.reserve(quads.size() * 4);
  for (const auto& q : quads) images.push_back(q.view_a);
  for (const auto& q : quads) images.push_back(q.view_b);
  if (hard_negatives) {
    for (const auto& q : quads) images.push_back(q.hard_a);
    for (const auto& q : quads) images.push_back(q.hard_b);
  }
  typename EmbeddingModel<T>::Cache cache;
  const auto z = model.embed(images_to_tensor<T>(images), with_grad ? &cache : nullptr);
  ContrastiveBatch<T> batch;
  batch.z_a = z.topRows(n);
  batch.z_b = z.middleRows(n, n);
  if (hard_negatives) {
    batch.z_hn_a = z.middleRows(2 * n, n);
    batch.z_hn_b = z.middleRows(3 * n, n);
  }
  ContrastiveBatch<T> grad;
  const double loss = nt_xent_loss(batch, model.config().projection.temperature, with_grad ? &grad : nullptr);
  if (with_grad) {
    RowMatrix<T> dz(z.rows(), z.cols());
    dz.topRows(n) = grad.z_a;
    dz.middleRows(n, n) = grad.z_b;
    if (hard_negatives) {
      dz.middleRows(2 * n, n) = grad.z_hn_a;
      dz.middleRows(3 * n, n) = grad.z_hn_b;
    }
    model.backward(cache, dz);
  }
  return loss;
}

template double contrastive_step<float>(EmbeddingModel<float>&, std::span<const TrainingQuad>, bool, bool);
template double contrastive_step<double>(EmbeddingModel<double>&, std::span<const TrainingQuad>, bool, bool);

namespace {

Eigen::MatrixXd pristine_embeddings(const EmbeddingModel<float>& model, std::span<const ImageRecord> train) {
  std::vector<ImageBuffer> images;
  images.reserve(train.size());
  for (const auto& r : train) images.push_back(r.image);
  return embed_images(model, images).cast<double>();
}

Eigen::MatrixXd pristine_embeddings(const EmbeddingModel<float>& model, std::span<const ImageRecord> train,
                                    std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  std::vector<ImageBuffer> images;
  images.reserve(pairs.size() * 2);
  for (const auto& [a, b] : pairs) {
    images.push_back(train[a].image);
    images.push_back(train[b].image);
  }
  return embed_images(model, images).cast<double>();
}

}  // namespace

TrainResult train_manifold(EmbeddingModel<float>& model, std::span<const ImageRecord> train,
                           const DegradationConfig& degradation, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  degradation.validate();
  if (train.empty()) throw ValidationError("training set is empty");
  if (train.size() < 4) throw ValidationError("training needs at least 4 images to form 2 pairs");

  model.backbone().set_trainable(!cfg.freeze_backbone);
  Adam<float> adam(model.parameters(), cfg.adam);
  TrainResult result;
  result.prototype = PristinePrototype(model.embed_dim(), cfg.prototype_momentum, cfg.resolved_warmup());

  const bool per_step = cfg.prototype_schedule == PrototypeSchedule::kPerStep;
  const int warmup = cfg.resolved_warmup();
  std::vector<std::size_t> order(train.size());
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch), 0));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i + 1 < order.size(); i += 2) pairs.emplace_back(order[i], order[i + 1]);

    double loss_sum = 0.0;
    int batches = 0;
    const auto per_batch = static_cast<std::size_t>(cfg.batch_pairs);
    for (std::size_t b = 0; b < pairs.size(); b += per_batch) {
      const std::size_t count = std::min(per_batch, pairs.size() - b);
      if (count < 2) break;
      const auto quads = make_batch_quads(train, std::span(pairs).subspan(b, count), degradation, cfg.seed, epoch);
      adam.zero_grad();
      const double loss = contrastive_step(model, quads, cfg.hard_negatives, true);
      if (!std::isfinite(loss)) throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      adam.step();
      if (per_step && epoch >= warmup) {
        result.prototype.maybe_init(epoch, pristine_embeddings(model, train, std::span(pairs).subspan(b, count)));
      }
      loss_sum += loss;
      ++batches;
    }
    if (!per_step && epoch >= warmup) result.prototype.maybe_init(epoch, pristine_embeddings(model, train));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = batches > 0 ? loss_sum / batches : 0.0;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    spdlog::debug("epoch {} loss {:.5f} ({:.1f}s)", rec.epoch, rec.loss, rec.wall_time);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::string epoch_record_json(const EpochRecord& r) {
  return nlohmann::json{{"epoch", r.epoch}, {"loss", r.loss}, {"wall_time", r.wall_time}}.dump();
}

}  // namespace degmon
