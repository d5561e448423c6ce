// Command-line front end: dataset preparation, training, scoring and the
// evaluation protocols. Errors go to stderr as one JSON line; the exit code
// encodes the error class.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "degmon/config.hpp"
#include "degmon/error.hpp"
#include "degmon/image_io.hpp"
#include "degmon/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace degmon;

namespace {

void emit(const json& j) {
  std::cout << j.dump() << '\n';
  std::cout.flush();
}

// Settings that may be overridden on the command line; applied before the
// config hash is taken.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> output_dir;
  bool freeze_backbone = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Override the run seed");
    cmd->add_option("--epochs", epochs, "Override the number of training epochs");
    cmd->add_option("--output-dir", output_dir, "Override the output directory");
    cmd->add_flag("--freeze-backbone", freeze_backbone, "Keep the backbone weights fixed");
  }
};

RunConfig load_config(const std::string& path, const Overrides& o) {
  RunConfig cfg = load_run_config(path);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
    cfg.flow.seed = *o.seed;
  }
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.freeze_backbone) cfg.train.freeze_backbone = true;
  cfg.validate(true);
  fs::create_directories(cfg.output_dir);
  spdlog::info("config hash {}", cfg.hash());
  return cfg;
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

// Refuses to combine artifacts produced under different configurations.
void check_hash(const std::string& what, const std::string& artifact_hash, const RunConfig& cfg, bool force) {
  if (artifact_hash == cfg.hash()) return;
  const auto msg = fmt::format("{} was produced under config hash '{}', current config hashes to '{}'", what,
                               artifact_hash, cfg.hash());
  if (!force) throw StateError(msg + " (use --force to evaluate anyway)");
  spdlog::warn("{}; continuing because of --force", msg);
}

EpochCallback ndjson_logger(std::ofstream& log) {
  return [&log](const EpochRecord& r) {
    const auto line = epoch_record_json(r);
    log << line << '\n';
    log.flush();
    std::cout << line << '\n';
    std::cout.flush();
  };
}

std::shared_ptr<const EmbeddingModel<float>> share(std::unique_ptr<EmbeddingModel<float>> m) { return m; }

int cmd_synth(const std::string& out, int count, int secondary, int size, std::uint64_t seed, double val_fraction) {
  const fs::path root(out);
  synthesize_dataset(root / "primary", count, size, seed, SynthStyle::kLeaves, "leaves");
  DatasetManifest manifest;
  for (auto row : ingest(root / "primary", {val_fraction, seed}, "leaves").manifest.rows) {
    row.relpath = "primary/" + row.relpath;
    manifest.rows.push_back(row);
  }
  if (secondary > 0) {
    synthesize_dataset(root / "secondary", secondary, size, combine_seed(seed, 1), SynthStyle::kShapes, "shapes");
    for (auto row : ingest(root / "secondary", {1.0, seed}, "shapes").manifest.rows) {
      row.relpath = "secondary/" + row.relpath;
      manifest.rows.push_back(row);
    }
  }
  manifest.validate();
  write_manifest(root / "manifest.csv", manifest);
  emit({{"manifest", (root / "manifest.csv").string()}, {"images", manifest.rows.size()}});
  return 0;
}

int cmd_ingest(const std::string& root_arg, const std::string& out_arg, const std::string& tag, double val_fraction,
               std::uint64_t seed) {
  const fs::path root(root_arg);
  const fs::path out = or_default(out_arg, root / "manifest.csv");
  auto result = ingest(root, {val_fraction, seed}, tag);
  const fs::path base = fs::absolute(out).parent_path();
  const fs::path prefix = fs::relative(fs::absolute(root), base);
  for (auto& row : result.manifest.rows) row.relpath = (prefix / row.relpath).lexically_normal().generic_string();
  write_manifest(out, result.manifest);
  emit({{"manifest", out.string()}, {"images", result.manifest.rows.size()}, {"skipped", result.skipped}});
  return 0;
}

int cmd_degrade(const RunConfig& cfg, const std::string& out_arg) {
  const fs::path out = or_default(out_arg, cfg.output_dir / "benchmark");
  const auto data = load_splits(cfg);
  std::map<std::string, const ImageBuffer*> by_id;
  std::vector<std::string> ids;
  for (const auto& r : data.val) {
    by_id[r.id] = &r.image;
    ids.push_back(r.id);
  }
  auto bench = build_severity_benchmark(ids, cfg.degradation.evaluation, cfg.seed,
                                        [&](const std::string& id) { return *by_id.at(id); }, out);
  bench.config_hash = cfg.hash();
  write_benchmark_manifest(out / "manifest.csv", bench);
  emit({{"benchmark", (out / "manifest.csv").string()}, {"entries", bench.entries.size()}, {"config_hash", cfg.hash()}});
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& out_arg) {
  const fs::path out = or_default(out_arg, cfg.output_dir / "manifold.bin");
  const auto data = load_splits(cfg);
  std::ofstream log(cfg.output_dir / "train_log.ndjson");
  auto trained = fit_manifold(cfg, data.train, ndjson_logger(log));
  save_manifold_checkpoint(out, *trained.model, trained.result.prototype, cfg.hash());
  emit({{"checkpoint", out.string()}, {"config_hash", cfg.hash()}});
  return 0;
}

int cmd_train_flow(const RunConfig& cfg, const std::string& ckpt_arg, const std::string& out_arg, bool force) {
  const fs::path ckpt_path = or_default(ckpt_arg, cfg.output_dir / "manifold.bin");
  const fs::path out = or_default(out_arg, cfg.output_dir / "flows.bin");
  auto ckpt = load_manifold_checkpoint(ckpt_path);
  check_hash("checkpoint " + ckpt_path.string(), ckpt.config_hash, cfg, force);
  const auto data = load_splits(cfg);
  const auto pristine = images_of(data.train);
  auto features = share(std::move(ckpt.model));
  auto flows = train_flow_monitors(features, pristine, cfg.flow_layers, cfg.flow);
  save_flow_monitors(out, flows.single, flows.multi, cfg.hash());
  json hist = json::array();
  for (const auto& h : flows.histories) hist.push_back({{"initial_nll", h.front()}, {"final_nll", h.back()}});
  emit({{"flows", out.string()}, {"history", hist}});
  return 0;
}

int cmd_score(const std::string& ckpt_path, const std::vector<std::string>& images, std::optional<double> tau) {
  auto ckpt = load_manifold_checkpoint(ckpt_path);
  ManifoldMonitor monitor(share(std::move(ckpt.model)), ckpt.prototype);
  for (const auto& path : images) {
    const ImageBuffer img = read_image(path);
    const double s = monitor.score(std::span<const ImageBuffer>(&img, 1)).front();
    json j{{"image_id", fs::path(path).stem().string()}, {"path", path}, {"s_deg", s}};
    if (tau) j["accept"] = gate(s, *tau);
    emit(j);
  }
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& ckpt_arg, const std::string& flows_arg,
                 const std::string& bench_arg, const std::string& out_arg, bool force) {
  const fs::path ckpt_path = or_default(ckpt_arg, cfg.output_dir / "manifold.bin");
  const fs::path bench_path = or_default(bench_arg, cfg.output_dir / "benchmark" / "manifest.csv");
  auto ckpt = load_manifold_checkpoint(ckpt_path);
  check_hash("checkpoint " + ckpt_path.string(), ckpt.config_hash, cfg, force);
  const auto bench = read_benchmark_manifest(bench_path);
  check_hash("benchmark " + bench_path.string(), bench.config_hash, cfg, force);
  const auto data = load_splits(cfg);
  const auto degraded = load_benchmark_images(bench, bench_path.parent_path());
  const auto pristine = images_of(data.val);

  auto model = share(std::move(ckpt.model));
  std::vector<std::unique_ptr<Monitor>> monitors;
  monitors.push_back(std::make_unique<ManifoldMonitor>(model, ckpt.prototype));
  const fs::path flows_path = or_default(flows_arg, cfg.output_dir / "flows.bin");
  if (!flows_arg.empty() || fs::exists(flows_path)) {
    auto flows = load_flow_monitors(flows_path, model);
    check_hash("flows " + flows_path.string(), flows.config_hash, cfg, force);
    monitors.push_back(std::move(flows.single));
    monitors.push_back(std::move(flows.multi));
  }
  BenchmarkReport report;
  report.config_hash = cfg.hash();
  report.created_at = utc_timestamp();
  for (const auto& m : monitors) {
    for (auto& r : evaluate_monitor(*m, cfg, data, bench, degraded, pristine)) report.rows.push_back(std::move(r));
  }
  const fs::path stem = or_default(out_arg, cfg.output_dir / "evaluate");
  report.write(stem);
  emit({{"report", stem.string() + ".json"}, {"rows", report.rows.size()}});
  return 0;
}

int cmd_benchmark(const RunConfig& cfg, const std::string& out_arg) {
  const auto data = load_splits(cfg);
  std::ofstream log(cfg.output_dir / "train_log.ndjson");
  auto run = run_benchmark(cfg, data, ndjson_logger(log));
  save_manifold_checkpoint(cfg.output_dir / "manifold.bin", *run.manifold.model, run.manifold.result.prototype,
                           cfg.hash());
  const fs::path stem = or_default(out_arg, cfg.output_dir / "report");
  run.report.write(stem);
  json sweep = json::object();
  for (const auto& r : run.report.rows) {
    if (r.corruption_id == kMixed) sweep[r.monitor_id].push_back(r.auroc);
  }
  emit({{"report", stem.string() + ".json"}, {"rows", run.report.rows.size()}, {"auroc_by_severity", sweep}});
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::vector<std::string>& names, const std::string& out_arg) {
  std::vector<AblationVariant> variants;
  for (const auto& n : names) {
    bool found = false;
    for (auto v : all_ablations()) {
      if (ablation_name(v) == n) {
        variants.push_back(v);
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown ablation variant '" + n + "'");
  }
  if (variants.empty()) variants = all_ablations();
  const auto data = load_splits(cfg);
  AblationInputs in{data.train, data.val, cfg.degradation, cfg.model, cfg.train, cfg.seed};
  BenchmarkReport report;
  report.config_hash = cfg.hash();
  report.created_at = utc_timestamp();
  report.rows = ablation_suite(in, variants);
  const fs::path stem = or_default(out_arg, cfg.output_dir / "ablation");
  report.write(stem);
  json sweep = json::object();
  for (const auto& r : report.rows) sweep[r.monitor_id].push_back(r.auroc);
  emit({{"report", stem.string() + ".json"}, {"auroc_by_severity", sweep}});
  return 0;
}

int cmd_export(const RunConfig& cfg, const std::string& ckpt_arg, const std::string& out_arg, bool force) {
  const fs::path ckpt_path = or_default(ckpt_arg, cfg.output_dir / "manifold.bin");
  auto ckpt = load_manifold_checkpoint(ckpt_path);
  check_hash("checkpoint " + ckpt_path.string(), ckpt.config_hash, cfg, force);
  ManifoldMonitor monitor(share(std::move(ckpt.model)), ckpt.prototype);
  const auto data = load_splits(cfg);
  const auto manifest = read_manifest(cfg.manifest);
  std::map<std::string, std::string> tag_of;
  for (const auto& r : manifest.rows) tag_of[r.image_id] = r.dataset_tag;

  std::vector<ImageBuffer> images;
  std::vector<EmbeddingLabel> labels;
  for (const auto* split : {&data.val, &data.secondary}) {
    for (const auto& r : *split) {
      images.push_back(r.image);
      labels.push_back({r.id, tag_of.at(r.id), "none", 0});
    }
  }
  const auto mem = build_val_benchmark(cfg, data.val);
  for (std::size_t i = 0; i < mem.bench.entries.size(); ++i) {
    const auto& e = mem.bench.entries[i];
    images.push_back(mem.degraded[i]);
    labels.push_back({e.image_id, tag_of.at(e.image_id), e.corruption_id, e.severity});
  }
  const Eigen::MatrixXf z = monitor.embed(images).cast<float>();
  const fs::path out = or_default(out_arg, cfg.output_dir / "embeddings.bin");
  export_embeddings(out, z, labels, cfg.hash());
  emit({{"embeddings", out.string()}, {"labels", embeddings_sidecar_path(out).string()}, {"rows", labels.size()}});
  return 0;
}

int cmd_suggest_threshold(const RunConfig& cfg, const std::string& ckpt_arg, double q, bool force) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("--quantile must lie in (0, 1)");
  const fs::path ckpt_path = or_default(ckpt_arg, cfg.output_dir / "manifold.bin");
  auto ckpt = load_manifold_checkpoint(ckpt_path);
  check_hash("checkpoint " + ckpt_path.string(), ckpt.config_hash, cfg, force);
  ManifoldMonitor monitor(share(std::move(ckpt.model)), ckpt.prototype);
  const auto data = load_splits(cfg);
  const auto scores = monitor.score(images_of(data.val));
  emit({{"quantile", q}, {"tau", quantile(scores, q)}, {"n", scores.size()}});
  return 0;
}

int report_error(std::string_view cls, int code, const std::string& message) {
  std::cerr << json{{"error", cls}, {"message", message}}.dump() << std::endl;
  return code;
}

int report_error(ErrorClass cls, const std::string& message) {
  return report_error(error_class_name(cls), exit_code_for(cls), message);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("degmon"));

  CLI::App app{"Degradation-aware input monitor"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  std::string config_path, out, ckpt, flows, bench;
  bool force = false;
  Overrides overrides;
  const auto with_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Run configuration (YAML)")->required()->check(CLI::ExistingFile);
    overrides.attach(cmd);
  };

  int count = 512, secondary = 128, size = 64;
  std::uint64_t seed = 7;
  double val_fraction = 0.25;
  auto* synth = app.add_subcommand("synth", "Render a procedural dataset with a manifest");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--count", count, "Primary images");
  synth->add_option("--secondary", secondary, "Secondary-pool images (validation only)");
  synth->add_option("--size", size, "Image side length");
  synth->add_option("--seed", seed, "Seed");
  synth->add_option("--val-fraction", val_fraction, "Share of primary images held out");

  std::string root, tag = "default";
  auto* ingest_cmd = app.add_subcommand("ingest", "Build a manifest from a folder of images");
  ingest_cmd->add_option("--root", root, "Image folder")->required()->check(CLI::ExistingDirectory);
  ingest_cmd->add_option("--out", out, "Manifest path (default <root>/manifest.csv)");
  ingest_cmd->add_option("--tag", tag, "Dataset tag");
  ingest_cmd->add_option("--val-fraction", val_fraction, "Share of images held out");
  ingest_cmd->add_option("--seed", seed, "Split seed");

  auto* degrade = app.add_subcommand("degrade", "Materialise the severity benchmark of the validation split");
  with_config(degrade);
  degrade->add_option("--out", out, "Benchmark directory");

  auto* train = app.add_subcommand("train", "Train the manifold monitor");
  with_config(train);
  train->add_option("--out", out, "Checkpoint path");

  auto* train_flow = app.add_subcommand("train-flow", "Train the flow baselines on backbone features");
  with_config(train_flow);
  train_flow->add_option("--checkpoint", ckpt, "Manifold checkpoint providing the backbone");
  train_flow->add_option("--out", out, "Flow checkpoint path");
  train_flow->add_flag("--force", force, "Ignore config hash mismatches");

  std::vector<std::string> images;
  std::optional<double> tau;
  auto* score = app.add_subcommand("score", "Score images with a trained monitor");
  score->add_option("--checkpoint", ckpt, "Manifold checkpoint")->required()->check(CLI::ExistingFile);
  score->add_option("-i,--image", images, "Image file (repeatable)")->required()->check(CLI::ExistingFile);
  score->add_option("--tau", tau, "Gate threshold; accept iff score <= tau");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate trained monitors on a materialised benchmark");
  with_config(evaluate);
  evaluate->add_option("--checkpoint", ckpt, "Manifold checkpoint");
  evaluate->add_option("--flows", flows, "Flow checkpoint");
  evaluate->add_option("--benchmark", bench, "Benchmark manifest");
  evaluate->add_option("--out", out, "Report stem");
  evaluate->add_flag("--force", force, "Ignore config hash mismatches");

  auto* benchmark = app.add_subcommand("benchmark", "Train and evaluate every configured monitor");
  with_config(benchmark);
  benchmark->add_option("--out", out, "Report stem");

  std::vector<std::string> variants;
  auto* ablate = app.add_subcommand("ablate", "Train and sweep the ablation variants");
  with_config(ablate);
  ablate->add_option("--variants", variants, "Subset of full, last_layer_only, gap, no_hard_negatives");
  ablate->add_option("--out", out, "Report stem");

  auto* exp = app.add_subcommand("export-embeddings", "Write embeddings of pristine and degraded images");
  with_config(exp);
  exp->add_option("--checkpoint", ckpt, "Manifold checkpoint");
  exp->add_option("--out", out, "Output path");
  exp->add_flag("--force", force, "Ignore config hash mismatches");

  double q = 0.95;
  auto* suggest = app.add_subcommand("suggest-threshold", "Quantile of pristine validation scores");
  with_config(suggest);
  suggest->add_option("--checkpoint", ckpt, "Manifold checkpoint");
  suggest->add_option("--quantile", q, "Quantile in (0, 1)");
  suggest->add_flag("--force", force, "Ignore config hash mismatches");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error(ErrorClass::kConfig, e.what());
  }

  try {
    const auto level = spdlog::level::from_str(log_level);
    if (level == spdlog::level::off && log_level != "off") throw ConfigError("unknown log level '" + log_level + "'");
    spdlog::set_level(level);

    if (*synth) return cmd_synth(out, count, secondary, size, seed, val_fraction);
    if (*ingest_cmd) return cmd_ingest(root, out, tag, val_fraction, seed);
    if (*score) return cmd_score(ckpt, images, tau);
    const RunConfig cfg = load_config(config_path, overrides);
    if (*degrade) return cmd_degrade(cfg, out);
    if (*train) return cmd_train(cfg, out);
    if (*train_flow) return cmd_train_flow(cfg, ckpt, out, force);
    if (*evaluate) return cmd_evaluate(cfg, ckpt, flows, bench, out, force);
    if (*benchmark) return cmd_benchmark(cfg, out);
    if (*ablate) return cmd_ablate(cfg, variants, out);
    if (*exp) return cmd_export(cfg, ckpt, out, force);
    if (*suggest) return cmd_suggest_threshold(cfg, ckpt, q, force);
  } catch (const Error& e) {
    return report_error(e.error_class(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(ErrorClass::kIo, e.what());
  } catch (const std::exception& e) {
    // Unclassified failures share the numerical exit code.
    return report_error("internal", exit_code_for(ErrorClass::kNumerical), e.what());
  }
  return 0;
}
