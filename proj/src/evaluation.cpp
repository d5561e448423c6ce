#include "degmon/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "degmon/array_store.hpp"
#include "degmon/csv.hpp"
#include "degmon/error.hpp"
#include "degmon/image_io.hpp"
#include "degmon/rng.hpp"

namespace degmon {

ManifoldMonitor::ManifoldMonitor(std::shared_ptr<const EmbeddingModel<float>> model, PristinePrototype prototype,
                                 std::string id)
    : model_(std::move(model)), prototype_(std::move(prototype)), id_(std::move(id)) {
  if (!model_) throw ValidationError("manifold monitor needs a model");
  if (!prototype_.initialized()) throw StateError("manifold monitor needs an initialised prototype");
}

Eigen::MatrixXd ManifoldMonitor::embed(std::span<const ImageBuffer> images) const {
  Eigen::MatrixXd z = embed_images(*model_, images).cast<double>();
  return z;
}

std::vector<double> ManifoldMonitor::score(std::span<const ImageBuffer> images) const {
  const Eigen::MatrixXd z = embed(images);
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = degradation_score(z.row(i).transpose(), prototype_);
  }
  return out;
}

std::vector<Eigen::MatrixXd> pooled_taps(const Backbone<float>& backbone, std::span<const ImageBuffer> images,
                                         const std::vector<int>& layers, int chunk) {
  if (layers.empty()) throw ValidationError("no feature layers selected");
  const int size = backbone.config().input_size;
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(chunk));
    std::vector<ImageBuffer> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(resize(images[i], size, size));
    const auto fm = backbone.forward(images_to_tensor<float>(batch), nullptr);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Eigen::MatrixXd p = pool_features(fm, {layers[l]});
      if (out.size() <= l) out.emplace_back(static_cast<Eigen::Index>(images.size()), p.cols());
      out[l].middleRows(static_cast<Eigen::Index>(start), p.rows()) = p;
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd concat_columns(const std::vector<Eigen::MatrixXd>& parts) {
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Eigen::MatrixXd out(parts.empty() ? 0 : parts.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return out;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

FlowMonitor::FlowMonitor(std::shared_ptr<const EmbeddingModel<float>> features, std::vector<int> layers,
                         FlowModel flow, std::string id)
    : features_(std::move(features)), layers_(std::move(layers)), single_(std::move(flow)), id_(std::move(id)) {
  if (!features_) throw ValidationError("flow monitor needs a feature extractor");
}

FlowMonitor::FlowMonitor(std::shared_ptr<const EmbeddingModel<float>> features, MultiScaleFlow flows, std::string id)
    : features_(std::move(features)), layers_(flows.layers), multi_(std::move(flows)), id_(std::move(id)) {
  if (!features_) throw ValidationError("flow monitor needs a feature extractor");
}

std::vector<const FlowModel*> FlowMonitor::flows() const {
  if (single_) return {&*single_};
  std::vector<const FlowModel*> out;
  for (const auto& f : multi_->flows) out.push_back(&f);
  return out;
}

std::vector<double> FlowMonitor::score(std::span<const ImageBuffer> images) const {
  if (images.empty()) return {};
  const auto pooled = pooled_taps(features_->backbone(), images, layers_);
  if (single_) {
    if (!single_->trained()) throw StateError("flow '" + single_->name() + "' has not been trained");
    return to_vector(single_->nll(concat_columns(pooled)));
  }
  return to_vector(multi_->score(pooled));
}

FlowTraining train_flow_monitors(std::shared_ptr<const EmbeddingModel<float>> features,
                                 std::span<const ImageBuffer> pristine, const std::vector<int>& layers,
                                 const FlowConfig& cfg) {
  if (pristine.size() < 2) throw ValidationError("flow training needs at least 2 pristine images");
  const auto pooled = pooled_taps(features->backbone(), pristine, layers);
  std::vector<std::vector<double>> histories;

  const Eigen::MatrixXd all = concat_columns(pooled);
  FlowConfig single_cfg = cfg;
  single_cfg.seed = combine_seed(cfg.seed, 100);
  FlowModel single("nf_single", static_cast<int>(all.cols()), single_cfg);
  histories.push_back(train_flow(single, all, single_cfg));

  MultiScaleFlow multi;
  multi.layers = layers;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    FlowConfig layer_cfg = cfg;
    layer_cfg.seed = combine_seed(cfg.seed, 200 + l);
    FlowModel flow("nf_multi.tap" + std::to_string(layers[l]), static_cast<int>(pooled[l].cols()), layer_cfg);
    histories.push_back(train_flow(flow, pooled[l], layer_cfg));
    const Eigen::VectorXd nll = flow.nll(pooled[l]);
    const double mean = nll.mean();
    const double std = std::sqrt((nll.array() - mean).square().mean());
    if (!(std > 0.0)) throw NumericalError("tap " + std::to_string(layers[l]) + " flow gives constant training NLL");
    multi.stats.push_back({mean, std});
    multi.flows.push_back(std::move(flow));
  }
  return {FlowMonitor(features, layers, std::move(single)), FlowMonitor(features, std::move(multi)),
          std::move(histories)};
}

void save_flow_monitors(const std::filesystem::path& path, const FlowMonitor& single, const FlowMonitor& multi,
                        const std::string& config_hash) {
  if (single.multi_scale() || !multi.multi_scale()) throw ValidationError("expected a single and a multi-scale monitor");
  std::vector<const FlowModel*> flows = single.flows();
  for (const auto* f : multi.flows()) flows.push_back(f);
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : multi.multi()->stats) stats.push_back({{"mean", s.mean}, {"std", s.std}});
  save_flows(path, flows,
             {{"config_hash", config_hash},
              {"single_layers", single.layers()},
              {"multi_layers", multi.layers()},
              {"multi_stats", stats}});
}

LoadedFlowMonitors load_flow_monitors(const std::filesystem::path& path,
                                      std::shared_ptr<const EmbeddingModel<float>> features) {
  auto loaded = load_flows(path);
  const auto& meta = loaded.meta;
  const auto single_layers = meta.at("single_layers").get<std::vector<int>>();
  MultiScaleFlow multi;
  multi.layers = meta.at("multi_layers").get<std::vector<int>>();
  for (const auto& s : meta.at("multi_stats")) multi.stats.push_back({s.at("mean").get<double>(), s.at("std").get<double>()});
  if (loaded.flows.size() != 1 + multi.layers.size() || multi.stats.size() != multi.layers.size()) {
    throw FormatError(path.string() + " does not hold one single flow plus one flow per tap");
  }
  for (std::size_t i = 1; i < loaded.flows.size(); ++i) multi.flows.push_back(std::move(loaded.flows[i]));
  LoadedFlowMonitors out;
  out.single = std::make_unique<FlowMonitor>(features, single_layers, std::move(loaded.flows[0]));
  out.multi = std::make_unique<FlowMonitor>(features, std::move(multi));
  out.config_hash = meta.value("config_hash", "");
  return out;
}

ReportRow evaluate_scores(const ScoreSet& s) {
  s.validate();
  ReportRow row;
  row.monitor_id = s.monitor_id;
  row.severity = s.severity;
  row.corruption_id = s.corruption_id;
  row.n_id = s.id_scores.size();
  row.n_ood = s.ood_scores.size();
  const ScoreStats stats = pooled_stats(s);
  row.z_mean = stats.mean;
  row.z_std = stats.std;
  ScoreSet z = s;
  if (stats.std > 0.0) {
    z.id_scores = z_score_normalize(s.id_scores, stats.mean, stats.std);
    z.ood_scores = z_score_normalize(s.ood_scores, stats.mean, stats.std);
  }
  row.auroc = auroc(z);
  row.fpr_at_95tpr = rate_at_operating_point(z, OperatingPoint::kTpr95);
  row.fnr_at_95tnr = rate_at_operating_point(z, OperatingPoint::kTnr95);
  return row;
}

nlohmann::json BenchmarkReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"monitor_id", r.monitor_id},
                         {"severity", r.severity},
                         {"corruption_id", r.corruption_id},
                         {"auroc", r.auroc},
                         {"fpr_at_95tpr", r.fpr_at_95tpr},
                         {"fnr_at_95tnr", r.fnr_at_95tnr},
                         {"n_id", r.n_id},
                         {"n_ood", r.n_ood},
                         {"z_mean", r.z_mean},
                         {"z_std", r.z_std}});
  }
  return {{"schema_version", kSchemaVersion},
          {"config_hash", config_hash},
          {"created_at", created_at},
          {"rows", rows_json}};
}

BenchmarkReport BenchmarkReport::from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != kSchemaVersion) throw FormatError("unsupported report schema version");
  BenchmarkReport rep;
  rep.config_hash = j.value("config_hash", "");
  rep.created_at = j.value("created_at", "");
  for (const auto& r : j.at("rows")) {
    ReportRow row;
    row.monitor_id = r.at("monitor_id").get<std::string>();
    row.severity = r.at("severity").get<int>();
    row.corruption_id = r.at("corruption_id").get<std::string>();
    row.auroc = r.at("auroc").get<double>();
    row.fpr_at_95tpr = r.at("fpr_at_95tpr").get<double>();
    row.fnr_at_95tnr = r.at("fnr_at_95tnr").get<double>();
    row.n_id = r.at("n_id").get<std::size_t>();
    row.n_ood = r.at("n_ood").get<std::size_t>();
    row.z_mean = r.value("z_mean", 0.0);
    row.z_std = r.value("z_std", 0.0);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string BenchmarkReport::to_csv() const {
  std::string out =
      "monitor_id,severity,corruption_id,auroc,fpr_at_95tpr,fnr_at_95tnr,n_id,n_ood,z_mean,z_std,config_hash\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{},{},{:.6f},{:.6f},{}\n", r.monitor_id, r.severity,
                       r.corruption_id, r.auroc, r.fpr_at_95tpr, r.fnr_at_95tnr, r.n_id, r.n_ood, r.z_mean, r.z_std,
                       config_hash);
  }
  return out;
}

void BenchmarkReport::write(const std::filesystem::path& stem) const {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const auto json_path = std::filesystem::path(stem.string() + ".json");
  const auto csv_path = std::filesystem::path(stem.string() + ".csv");
  std::ofstream js(json_path, std::ios::binary);
  std::ofstream cs(csv_path, std::ios::binary);
  if (!js || !cs) throw IoError("cannot write report " + stem.string());
  js << to_json().dump(2) << '\n';
  cs << to_csv();
}

const ReportRow* BenchmarkReport::find(const std::string& monitor_id, int severity,
                                       const std::string& corruption_id) const {
  for (const auto& r : rows) {
    if (r.monitor_id == monitor_id && r.severity == severity && r.corruption_id == corruption_id) return &r;
  }
  return nullptr;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<ImageBuffer> degrade_benchmark(const SeverityBenchmark& bench, std::span<const OperatorLadder> ladders,
                                           const ImageLoader& load) {
  std::map<std::string, ImageBuffer> cache;
  std::vector<ImageBuffer> out;
  out.reserve(bench.entries.size());
  for (const auto& e : bench.entries) {
    auto it = cache.find(e.image_id);
    if (it == cache.end()) it = cache.emplace(e.image_id, load(e.image_id)).first;
    const auto ladder = std::find_if(ladders.begin(), ladders.end(),
                                     [&](const OperatorLadder& l) { return l.op_id == e.corruption_id; });
    if (ladder == ladders.end()) throw ConfigError("no evaluation ladder for corruption '" + e.corruption_id + "'");
    out.push_back(apply_corruption(it->second, *ladder, e.severity, e.seed));
  }
  return out;
}

std::vector<ImageBuffer> load_benchmark_images(const SeverityBenchmark& bench, const std::filesystem::path& root) {
  std::vector<std::string> missing;
  for (const auto& e : bench.entries) {
    if (!std::filesystem::exists(root / e.relpath)) missing.push_back((root / e.relpath).string());
  }
  if (!missing.empty()) {
    std::string msg = fmt::format("{} degraded image(s) missing:", missing.size());
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  std::vector<ImageBuffer> out;
  out.reserve(bench.entries.size());
  for (const auto& e : bench.entries) out.push_back(read_image(root / e.relpath));
  return out;
}

std::vector<ReportRow> severity_sweep(const Monitor& monitor, const SeverityBenchmark& bench,
                                      std::span<const ImageBuffer> degraded, std::span<const ImageBuffer> pristine) {
  if (degraded.size() != bench.entries.size()) {
    throw ValidationError("degraded images do not match the benchmark entries");
  }
  ScoreSet base;
  base.monitor_id = monitor.id();
  base.corruption_id = kMixed;
  base.id_scores = monitor.score(pristine);
  const std::vector<double> all = monitor.score(degraded);
  std::vector<ReportRow> rows;
  for (int severity = 1; severity <= 5; ++severity) {
    ScoreSet s = base;
    s.severity = severity;
    for (std::size_t i = 0; i < bench.entries.size(); ++i) {
      if (bench.entries[i].severity == severity) s.ood_scores.push_back(all[i]);
    }
    rows.push_back(evaluate_scores(s));
  }
  return rows;
}

std::vector<ReportRow> per_corruption_table(const Monitor& monitor, std::span<const OperatorLadder> corruptions,
                                            const std::vector<int>& levels, std::span<const ImageRecord> pristine,
                                            std::uint64_t seed) {
  if (pristine.empty()) throw ValidationError("pristine set is empty");
  std::vector<ImageBuffer> clean;
  for (const auto& r : pristine) clean.push_back(r.image);
  ScoreSet base;
  base.monitor_id = monitor.id();
  base.id_scores = monitor.score(clean);
  std::vector<ReportRow> rows;
  for (const auto& ladder : corruptions) {
    for (int level : levels) {
      if (level < 1 || level > 5) throw ValidationError("severity levels must lie in 1..5");
      std::vector<ImageBuffer> degraded;
      degraded.reserve(pristine.size());
      for (const auto& r : pristine) {
        degraded.push_back(apply_corruption(r.image, ladder, level, corruption_seed(seed, r.id)));
      }
      ScoreSet s = base;
      s.corruption_id = ladder.op_id;
      s.severity = level;
      s.ood_scores = monitor.score(degraded);
      rows.push_back(evaluate_scores(s));
    }
  }
  return rows;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) throw ValidationError("cannot subsample more items than available");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(combine_seed(seed, fnv1a64("subsample")));
  // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<ReportRow> mixed_pool_protocol(const Monitor& monitor, std::span<const ImageRecord> pool_a,
                                           std::span<const ImageRecord> pool_b,
                                           std::span<const OperatorLadder> corruptions, std::uint64_t seed) {
  if (pool_a.empty() || pool_b.empty()) throw ValidationError("both pristine pools must be non-empty");
  const bool a_larger = pool_a.size() > pool_b.size();
  const auto larger = a_larger ? pool_a : pool_b;
  const auto smaller = a_larger ? pool_b : pool_a;
  std::map<std::string, const ImageBuffer*> by_id;
  for (const auto& r : smaller) by_id[r.id] = &r.image;
  for (std::size_t i : subsample_indices(larger.size(), smaller.size(), seed)) {
    if (!by_id.emplace(larger[i].id, &larger[i].image).second) {
      throw ValidationError("image id '" + larger[i].id + "' appears in both pools");
    }
  }
  std::vector<std::string> ids;
  std::vector<ImageBuffer> pristine;
  for (const auto& [id, img] : by_id) {
    ids.push_back(id);
    pristine.push_back(*img);
  }
  const auto loader = [&](const std::string& id) { return *by_id.at(id); };
  const auto bench = build_severity_benchmark(ids, corruptions, seed, loader, {});
  const auto degraded = degrade_benchmark(bench, corruptions, loader);
  return severity_sweep(monitor, bench, degraded, pristine);
}

std::string_view ablation_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::kFull:
      return "full";
    case AblationVariant::kLastLayerOnly:
      return "last_layer_only";
    case AblationVariant::kGap:
      return "gap";
    case AblationVariant::kNoHardNegatives:
      return "no_hard_negatives";
  }
  return "?";
}

std::vector<AblationVariant> all_ablations() {
  return {AblationVariant::kFull, AblationVariant::kLastLayerOnly, AblationVariant::kGap,
          AblationVariant::kNoHardNegatives};
}

void apply_ablation(AblationVariant v, ModelConfig& model, TrainConfig& train) {
  switch (v) {
    case AblationVariant::kFull:
      break;
    case AblationVariant::kLastLayerOnly:
      model.last_layer_only = true;
      break;
    case AblationVariant::kGap:
      model.pool = PoolMode::kGap;
      break;
    case AblationVariant::kNoHardNegatives:
      train.hard_negatives = false;
      break;
  }
}

std::vector<ReportRow> ablation_suite(const AblationInputs& in, const std::vector<AblationVariant>& variants) {
  if (in.val.empty()) throw ValidationError("ablation needs validation images");
  std::vector<std::string> ids;
  std::map<std::string, const ImageBuffer*> by_id;
  std::vector<ImageBuffer> pristine;
  for (const auto& r : in.val) {
    ids.push_back(r.id);
    by_id[r.id] = &r.image;
    pristine.push_back(r.image);
  }
  const auto loader = [&](const std::string& id) { return *by_id.at(id); };
  const auto bench = build_severity_benchmark(ids, in.degradation.evaluation, in.seed, loader, {});
  const auto degraded = degrade_benchmark(bench, in.degradation.evaluation, loader);

  std::vector<ReportRow> rows;
  for (auto v : variants) {
    ModelConfig mc = in.model;
    TrainConfig tc = in.train_config;
    apply_ablation(v, mc, tc);
    auto model = std::make_shared<EmbeddingModel<float>>(mc);
    model->init(in.seed);
    tc.seed = in.seed;
    spdlog::info("ablation '{}': training", ablation_name(v));
    auto result = train_manifold(*model, in.train, in.degradation, tc);
    ManifoldMonitor monitor(model, result.prototype, "manifold/" + std::string(ablation_name(v)));
    for (auto& r : severity_sweep(monitor, bench, degraded, pristine)) rows.push_back(std::move(r));
  }
  return rows;
}

std::filesystem::path embeddings_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".csv");
  return p;
}

void export_embeddings(const std::filesystem::path& path, const Eigen::MatrixXf& embeddings,
                       const std::vector<EmbeddingLabel>& labels, const std::string& config_hash) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw ValidationError("one label per embedding row is required");
  }
  // Row-major copy so the container holds rows contiguously.
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = embeddings;
  ArrayStore store;
  store.put("embeddings", NamedArray::from_f32({rm.rows(), rm.cols()},
                                               std::span<const float>(rm.data(), static_cast<std::size_t>(rm.size()))));
  store.set_metadata({{"kind", "degmon.embeddings"}, {"config_hash", config_hash}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  store.save(path);
  std::ofstream side(embeddings_sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("cannot write " + embeddings_sidecar_path(path).string());
  side << "image_id,dataset_tag,corruption_id,severity\n";
  for (const auto& l : labels) side << l.image_id << ',' << l.dataset_tag << ',' << l.corruption_id << ',' << l.severity << '\n';
}

EmbeddingExport load_embeddings(const std::filesystem::path& path) {
  const auto store = ArrayStore::load(path);
  const auto& arr = store.get("embeddings");
  if (arr.shape.size() != 2) throw FormatError("embeddings array must be two-dimensional");
  const auto values = arr.to_f32();
  EmbeddingExport out;
  out.embeddings = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), arr.shape[0], arr.shape[1]);
  const auto table =
      read_csv(embeddings_sidecar_path(path), {"image_id", "dataset_tag", "corruption_id", "severity"});
  for (const auto& row : table.rows) {
    out.labels.push_back({row[0], row[1], row[2], parse_int(row[3], "severity")});
  }
  if (out.labels.size() != static_cast<std::size_t>(out.embeddings.rows())) {
    throw FormatError("embedding sidecar row count does not match the container");
  }
  return out;
}

double quantile(std::vector<double> scores, double q) {
  if (scores.empty()) throw ValidationError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile must lie in [0, 1]");
  std::sort(scores.begin(), scores.end());
  const double pos = q * static_cast<double>(scores.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, scores.size() - 1);
  return scores[lo] + (pos - static_cast<double>(lo)) * (scores[hi] - scores[lo]);
}

}  // namespace degmon
