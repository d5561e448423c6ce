#include "degmon/pipeline.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "degmon/error.hpp"
#include "degmon/rng.hpp"

namespace degmon {

namespace {

// Corruption id of the rows produced by the two-pool protocol, kept apart
// from the single-pool "mixed" rows.
constexpr const char* kMixedPool = "mixed_pool";

bool wants(const RunConfig& cfg, const std::string& monitor) {
  const auto& m = cfg.evaluation.monitors;
  return std::find(m.begin(), m.end(), monitor) != m.end();
}

}  // namespace

DataSplits load_splits(const RunConfig& cfg) {
  const auto manifest = read_manifest(cfg.manifest);
  manifest.validate();
  std::set<std::string> train_tags;
  for (const auto& r : manifest.rows) {
    if (r.split == "train") train_tags.insert(r.dataset_tag);
  }
  if (train_tags.empty()) throw ValidationError("manifest has no training images");
  DataSplits out;
  out.train = load_images(cfg.manifest, manifest, std::string("train"), std::nullopt, cfg.input_size);
  for (auto& rec : load_images(cfg.manifest, manifest, std::string("val"), std::nullopt, cfg.input_size)) {
    const auto row = std::find_if(manifest.rows.begin(), manifest.rows.end(),
                                  [&](const ManifestRow& r) { return r.image_id == rec.id; });
    (train_tags.count(row->dataset_tag) ? out.val : out.secondary).push_back(std::move(rec));
  }
  if (out.val.empty()) throw ValidationError("manifest has no validation images of the training tags");
  spdlog::info("dataset: {} train, {} val, {} secondary", out.train.size(), out.val.size(), out.secondary.size());
  return out;
}

TrainedManifold fit_manifold(const RunConfig& cfg, std::span<const ImageRecord> train, const EpochCallback& on_epoch) {
  TrainedManifold out;
  out.model = std::make_shared<EmbeddingModel<float>>(cfg.model);
  out.model->init(cfg.seed);
  out.result = train_manifold(*out.model, train, cfg.degradation, cfg.train, on_epoch);
  return out;
}

std::vector<ImageBuffer> images_of(std::span<const ImageRecord> records) {
  std::vector<ImageBuffer> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.image);
  return out;
}

InMemoryBenchmark build_val_benchmark(const RunConfig& cfg, std::span<const ImageRecord> val) {
  std::map<std::string, const ImageBuffer*> by_id;
  std::vector<std::string> ids;
  for (const auto& r : val) {
    by_id[r.id] = &r.image;
    ids.push_back(r.id);
  }
  const auto loader = [&](const std::string& id) { return *by_id.at(id); };
  InMemoryBenchmark out;
  out.bench = build_severity_benchmark(ids, cfg.degradation.evaluation, cfg.seed, loader, {});
  out.bench.config_hash = cfg.hash();
  out.degraded = degrade_benchmark(out.bench, cfg.degradation.evaluation, loader);
  out.pristine = images_of(val);
  return out;
}

std::vector<ReportRow> evaluate_monitor(const Monitor& monitor, const RunConfig& cfg, const DataSplits& data,
                                        const SeverityBenchmark& bench, std::span<const ImageBuffer> degraded,
                                        std::span<const ImageBuffer> pristine) {
  spdlog::info("evaluating '{}'", monitor.id());
  auto rows = severity_sweep(monitor, bench, degraded, pristine);
  if (cfg.evaluation.per_corruption) {
    for (auto& r : per_corruption_table(monitor, cfg.degradation.evaluation, cfg.evaluation.levels, data.val, cfg.seed)) {
      rows.push_back(std::move(r));
    }
  }
  if (cfg.evaluation.mixed_pools && !data.secondary.empty()) {
    for (auto& r : mixed_pool_protocol(monitor, data.val, data.secondary, cfg.degradation.evaluation, cfg.seed)) {
      r.corruption_id = kMixedPool;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::vector<std::unique_ptr<Monitor>> configured_monitors(const RunConfig& cfg,
                                                          std::shared_ptr<const EmbeddingModel<float>> model,
                                                          const PristinePrototype& prototype,
                                                          std::span<const ImageRecord> train,
                                                          std::vector<std::vector<double>>* flow_histories) {
  std::vector<std::unique_ptr<Monitor>> out;
  if (wants(cfg, "manifold")) out.push_back(std::make_unique<ManifoldMonitor>(model, prototype));
  if (wants(cfg, "nf_single") || wants(cfg, "nf_multi")) {
    spdlog::info("training flow baselines on {} taps", cfg.flow_layers.size());
    const auto pristine = images_of(train);
    auto flows = train_flow_monitors(model, pristine, cfg.flow_layers, cfg.flow);
    if (flow_histories) *flow_histories = flows.histories;
    if (wants(cfg, "nf_single")) out.push_back(std::make_unique<FlowMonitor>(std::move(flows.single)));
    if (wants(cfg, "nf_multi")) out.push_back(std::make_unique<FlowMonitor>(std::move(flows.multi)));
  }
  return out;
}

BenchmarkRun run_benchmark(const RunConfig& cfg, const DataSplits& data, const EpochCallback& on_epoch) {
  BenchmarkRun out;
  out.manifold = fit_manifold(cfg, data.train, on_epoch);
  const auto monitors =
      configured_monitors(cfg, out.manifold.model, out.manifold.result.prototype, data.train, &out.flow_histories);
  const auto mem = build_val_benchmark(cfg, data.val);
  out.report.config_hash = cfg.hash();
  out.report.created_at = utc_timestamp();
  for (const auto& m : monitors) {
    for (auto& r : evaluate_monitor(*m, cfg, data, mem.bench, mem.degraded, mem.pristine)) {
      out.report.rows.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace degmon
