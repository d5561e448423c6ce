#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "degmon/dataset.hpp"
#include "degmon/degradation.hpp"
#include "degmon/image.hpp"
#include "degmon/model.hpp"
#include "degmon/optimizer.hpp"
#include "degmon/prototype.hpp"

namespace degmon {

enum class PrototypeSchedule { kPerStep, kPerEpoch };

std::string_view prototype_schedule_name(PrototypeSchedule s);
PrototypeSchedule parse_prototype_schedule(std::string_view name);

struct TrainConfig {
  int epochs = 50;
  int batch_pairs = 32;
  AdamConfig adam;
  bool freeze_backbone = false;
  bool hard_negatives = true;
  double prototype_momentum = 0.99;
  int warmup_epoch = -1;  // negative: epochs / 2
  PrototypeSchedule prototype_schedule = PrototypeSchedule::kPerStep;
  std::uint64_t seed = 0;

  int resolved_warmup() const { return warmup_epoch < 0 ? epochs / 2 : warmup_epoch; }
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double wall_time = 0.0;  // seconds since training start
};

struct TrainResult {
  std::vector<EpochRecord> log;
  PristinePrototype prototype;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Contrastive training over degraded view pairs. Consecutive images of a
/// seeded shuffle form the pairs of each epoch; from the warm-up epoch on,
/// the prototype follows the pristine images: per step from the batch's source
/// images, or per epoch from the whole training set.
TrainResult train_manifold(EmbeddingModel<float>& model, std::span<const ImageRecord> train,
                           const DegradationConfig& degradation, const TrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

/// Builds the contrastive batch for the given image pairs and epoch.
std::vector<TrainingQuad> make_batch_quads(std::span<const ImageRecord> images,
                                           std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                           const DegradationConfig& degradation, std::uint64_t seed, int epoch);

/// Mean loss of one batch of quads; accumulates gradients into `model` when
/// `with_grad`.
template <typename T>
double contrastive_step(EmbeddingModel<T>& model, std::span<const TrainingQuad> quads, bool hard_negatives,
                        bool with_grad);

/// JSON line {"epoch":..,"loss":..,"wall_time":..}.
std::string epoch_record_json(const EpochRecord& r);

}  // namespace degmon
