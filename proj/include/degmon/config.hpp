#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "degmon/degradation.hpp"
#include "degmon/flow.hpp"
#include "degmon/model.hpp"
#include "degmon/trainer.hpp"

namespace degmon {

/// Environment variable that may replace `output_dir`; the only setting read
/// from the environment.
inline constexpr const char* kOutputDirEnv = "DEGMON_OUTPUT_DIR";

struct EvaluationSection {
  std::vector<std::string> monitors{"manifold", "nf_single", "nf_multi"};
  std::vector<int> levels{1, 2, 3, 4, 5};
  bool per_corruption = true;
  bool mixed_pools = true;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int input_size = 64;
  std::filesystem::path manifest;  // dataset manifest CSV, resolved
  std::string manifest_ref;        // as written in the file; hashed instead of the resolved path
  std::filesystem::path output_dir = "runs/default";
  DegradationConfig degradation = DegradationConfig::defaults();
  ModelConfig model;
  TrainConfig train;
  FlowConfig flow;
  std::vector<int> flow_layers{0, 1, 2, 3};  // indices into the backbone taps
  EvaluationSection evaluation;

  /// Every setting except output_dir, with fixed key order; the basis of
  /// hash().
  nlohmann::json canonical() const;
  /// 16 hex digits of FNV-1a over canonical().dump().
  std::string hash() const;

  /// Value checks; with `check_paths`, the manifest must exist.
  void validate(bool check_paths) const;
};

/// Parses a YAML run configuration. Relative paths resolve against the file's
/// directory; unknown keys raise ConfigError. The output-dir environment
/// override is applied when set.
RunConfig load_run_config(const std::filesystem::path& path, bool check_paths = true);
RunConfig parse_run_config(const std::string& yaml_text, const std::filesystem::path& base_dir, bool check_paths);

}  // namespace degmon
