#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "degmon/benchmark.hpp"
#include "degmon/dataset.hpp"
#include "degmon/flow.hpp"
#include "degmon/metrics.hpp"
#include "degmon/model.hpp"
#include "degmon/trainer.hpp"

namespace degmon {

/// Anything that maps images to degradation scores, larger = more degraded.
class Monitor {
 public:
  virtual ~Monitor() = default;
  virtual std::string id() const = 0;
  virtual std::vector<double> score(std::span<const ImageBuffer> images) const = 0;
};

class ManifoldMonitor final : public Monitor {
 public:
  ManifoldMonitor(std::shared_ptr<const EmbeddingModel<float>> model, PristinePrototype prototype,
                  std::string id = "manifold");

  std::string id() const override { return id_; }
  std::vector<double> score(std::span<const ImageBuffer> images) const override;
  Eigen::MatrixXd embed(std::span<const ImageBuffer> images) const;

  const EmbeddingModel<float>& model() const { return *model_; }
  const PristinePrototype& prototype() const { return prototype_; }

 private:
  std::shared_ptr<const EmbeddingModel<float>> model_;
  PristinePrototype prototype_;
  std::string id_;
};

/// Globally pooled backbone taps, one matrix per requested tap.
std::vector<Eigen::MatrixXd> pooled_taps(const Backbone<float>& backbone, std::span<const ImageBuffer> images,
                                         const std::vector<int>& layers, int chunk = 64);

/// Normalizing-flow likelihood monitor over pooled backbone taps: a single
/// flow over the concatenated taps, or one flow per tap with z-scored NLLs
/// summed.
class FlowMonitor final : public Monitor {
 public:
  FlowMonitor(std::shared_ptr<const EmbeddingModel<float>> features, std::vector<int> layers, FlowModel flow,
              std::string id = "nf_single");
  FlowMonitor(std::shared_ptr<const EmbeddingModel<float>> features, MultiScaleFlow flows,
              std::string id = "nf_multi");

  std::string id() const override { return id_; }
  std::vector<double> score(std::span<const ImageBuffer> images) const override;

  bool multi_scale() const { return multi_.has_value(); }
  const std::vector<int>& layers() const { return layers_; }
  /// The flows in tap order (one entry for the single-flow monitor).
  std::vector<const FlowModel*> flows() const;
  const MultiScaleFlow* multi() const { return multi_ ? &*multi_ : nullptr; }

 private:
  std::shared_ptr<const EmbeddingModel<float>> features_;
  std::vector<int> layers_;
  std::optional<FlowModel> single_;
  std::optional<MultiScaleFlow> multi_;
  std::string id_;
};

struct FlowTraining {
  FlowMonitor single;
  FlowMonitor multi;
  std::vector<std::vector<double>> histories;  // single flow first, then one per tap
};

/// Fits both flow monitors on the pristine training images.
FlowTraining train_flow_monitors(std::shared_ptr<const EmbeddingModel<float>> features,
                                 std::span<const ImageBuffer> pristine, const std::vector<int>& layers,
                                 const FlowConfig& cfg);

void save_flow_monitors(const std::filesystem::path& path, const FlowMonitor& single, const FlowMonitor& multi,
                        const std::string& config_hash);

struct LoadedFlowMonitors {
  std::unique_ptr<FlowMonitor> single;
  std::unique_ptr<FlowMonitor> multi;
  std::string config_hash;
};

LoadedFlowMonitors load_flow_monitors(const std::filesystem::path& path,
                                      std::shared_ptr<const EmbeddingModel<float>> features);

struct ReportRow {
  std::string monitor_id;
  int severity = 0;
  std::string corruption_id;  // "mixed" for pooled corruption rows
  double auroc = 0.0;
  double fpr_at_95tpr = 0.0;
  double fnr_at_95tnr = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  double z_mean = 0.0;  // pooled statistics used for the z-scored presentation
  double z_std = 0.0;
};

inline constexpr const char* kMixed = "mixed";

/// Metrics of one comparison after z-score normalization with the pooled
/// statistics (skipped when the pooled std is zero).
ReportRow evaluate_scores(const ScoreSet& s);

struct BenchmarkReport {
  static constexpr int kSchemaVersion = 1;

  std::string config_hash;
  std::string created_at;  // ISO-8601 UTC; JSON only
  std::vector<ReportRow> rows;

  nlohmann::json to_json() const;
  static BenchmarkReport from_json(const nlohmann::json& j);
  /// Flat mirror of the rows with fixed six-decimal formatting.
  std::string to_csv() const;

  /// Writes <stem>.json and <stem>.csv.
  void write(const std::filesystem::path& stem) const;

  const ReportRow* find(const std::string& monitor_id, int severity, const std::string& corruption_id) const;
};

std::string utc_timestamp();

/// Degraded images of `bench` generated in memory, in entry order.
std::vector<ImageBuffer> degrade_benchmark(const SeverityBenchmark& bench, std::span<const OperatorLadder> ladders,
                                           const ImageLoader& load);

/// Loads the materialised images of `bench` below `root`, in entry order.
/// Missing files raise one IoError listing every missing path.
std::vector<ImageBuffer> load_benchmark_images(const SeverityBenchmark& bench, const std::filesystem::path& root);

/// One "mixed" row per severity; `degraded` is aligned with bench.entries and
/// the pristine scores are shared by all severities.
std::vector<ReportRow> severity_sweep(const Monitor& monitor, const SeverityBenchmark& bench,
                                      std::span<const ImageBuffer> degraded, std::span<const ImageBuffer> pristine);

/// Every corruption applied to every pristine image at each level.
std::vector<ReportRow> per_corruption_table(const Monitor& monitor, std::span<const OperatorLadder> corruptions,
                                            const std::vector<int>& levels, std::span<const ImageRecord> pristine,
                                            std::uint64_t seed);

/// `k` of `n` indices drawn uniformly without replacement, sorted.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

/// The larger pool is subsampled to the size of the smaller; the combined set
/// gets a round-robin benchmark and one "mixed" row per severity.
std::vector<ReportRow> mixed_pool_protocol(const Monitor& monitor, std::span<const ImageRecord> pool_a,
                                           std::span<const ImageRecord> pool_b,
                                           std::span<const OperatorLadder> corruptions, std::uint64_t seed);

enum class AblationVariant { kFull, kLastLayerOnly, kGap, kNoHardNegatives };

std::string_view ablation_name(AblationVariant v);
std::vector<AblationVariant> all_ablations();

/// Applies one ablation switch to the model and training configuration.
void apply_ablation(AblationVariant v, ModelConfig& model, TrainConfig& train);

struct AblationInputs {
  std::span<const ImageRecord> train;
  std::span<const ImageRecord> val;
  DegradationConfig degradation;
  ModelConfig model;
  TrainConfig train_config;
  std::uint64_t seed = 0;
};

/// Trains and sweeps every variant under identical seeds and data; rows carry
/// monitor ids "manifold/<variant>".
std::vector<ReportRow> ablation_suite(const AblationInputs& in, const std::vector<AblationVariant>& variants);

struct EmbeddingLabel {
  std::string image_id;
  std::string dataset_tag;
  std::string corruption_id = "none";
  int severity = 0;
};

/// Named-array container with an "embeddings" f32 array (n x D) plus a
/// sidecar CSV `image_id,dataset_tag,corruption_id,severity` next to it.
void export_embeddings(const std::filesystem::path& path, const Eigen::MatrixXf& embeddings,
                       const std::vector<EmbeddingLabel>& labels, const std::string& config_hash);

struct EmbeddingExport {
  Eigen::MatrixXf embeddings;
  std::vector<EmbeddingLabel> labels;
};

EmbeddingExport load_embeddings(const std::filesystem::path& path);
std::filesystem::path embeddings_sidecar_path(const std::filesystem::path& path);

/// Value at quantile q of `scores` (linear interpolation between order
/// statistics, numpy's default).
double quantile(std::vector<double> scores, double q);

}  // namespace degmon
