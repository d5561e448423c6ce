#pragma once

#include <memory>
#include <span>
#include <vector>

#include "degmon/config.hpp"
#include "degmon/evaluation.hpp"

namespace degmon {

/// Images of a run, split by role.
struct DataSplits {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> val;        // held-out images of the tags seen in training
  std::vector<ImageRecord> secondary;  // validation images of tags absent from training
};

/// Reads the run's manifest and decodes every image at the configured size.
DataSplits load_splits(const RunConfig& cfg);

struct TrainedManifold {
  std::shared_ptr<EmbeddingModel<float>> model;
  TrainResult result;
};

TrainedManifold fit_manifold(const RunConfig& cfg, std::span<const ImageRecord> train,
                             const EpochCallback& on_epoch = {});

std::vector<ImageBuffer> images_of(std::span<const ImageRecord> records);

/// Round-robin benchmark over `val`, held in memory, with its degraded images.
struct InMemoryBenchmark {
  SeverityBenchmark bench;
  std::vector<ImageBuffer> degraded;
  std::vector<ImageBuffer> pristine;
};

InMemoryBenchmark build_val_benchmark(const RunConfig& cfg, std::span<const ImageRecord> val);

/// Severity sweep plus the per-corruption and mixed-pool tables the
/// evaluation section asks for.
std::vector<ReportRow> evaluate_monitor(const Monitor& monitor, const RunConfig& cfg, const DataSplits& data,
                                        const SeverityBenchmark& bench, std::span<const ImageBuffer> degraded,
                                        std::span<const ImageBuffer> pristine);

struct BenchmarkRun {
  BenchmarkReport report;
  TrainedManifold manifold;
  std::vector<std::vector<double>> flow_histories;
};

/// Trains the manifold monitor and the flow baselines, then evaluates every
/// configured monitor on the validation benchmark.
BenchmarkRun run_benchmark(const RunConfig& cfg, const DataSplits& data, const EpochCallback& on_epoch = {});

/// Monitors named in the configuration, built around one trained model.
std::vector<std::unique_ptr<Monitor>> configured_monitors(const RunConfig& cfg,
                                                          std::shared_ptr<const EmbeddingModel<float>> model,
                                                          const PristinePrototype& prototype,
                                                          std::span<const ImageRecord> train,
                                                          std::vector<std::vector<double>>* flow_histories = nullptr);

}  // namespace degmon
