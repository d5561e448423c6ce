#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "degmon/degradation.hpp"
#include "degmon/image.hpp"

namespace degmon {

struct BenchmarkEntry {
  std::string image_id;
  std::string corruption_id;
  int severity = 0;
  std::string relpath;
  std::uint64_t seed = 0;

  bool operator==(const BenchmarkEntry&) const = default;
};

struct SeverityBenchmark {
  std::vector<BenchmarkEntry> entries;
  std::vector<std::string> corruption_set;
  std::string config_hash;

  std::vector<const BenchmarkEntry*> at_severity(int severity) const;
};

/// Image i of the sorted ids receives corruption_set[i mod K].
std::vector<std::string> round_robin_assignment(std::span<const std::string> sorted_ids,
                                                std::span<const std::string> corruption_set);

/// Degrades with the ladder value at `severity` and snaps to the 8-bit grid,
/// matching what a materialised PNG holds. Severity 0 returns the input.
ImageBuffer apply_corruption(const ImageBuffer& img, const OperatorLadder& ladder, int severity, std::uint64_t seed);

/// Seed used for one (image, corruption); shared by all severities so that the
/// random realisation is nested across levels.
std::uint64_t corruption_seed(std::uint64_t master_seed, const std::string& image_id);

using ImageLoader = std::function<ImageBuffer(const std::string& image_id)>;

/// Round-robin corruption benchmark over severities 1..5. When `out_dir` is
/// non-empty every degraded image is written to out_dir/relpath.
SeverityBenchmark build_severity_benchmark(std::vector<std::string> image_ids,
                                           std::span<const OperatorLadder> corruption_set, std::uint64_t seed,
                                           const ImageLoader& load, const std::filesystem::path& out_dir);

/// CSV with header `image_id,corruption_id,severity,relpath,seed`.
void write_benchmark_manifest(const std::filesystem::path& csv_path, const SeverityBenchmark& bench);
SeverityBenchmark read_benchmark_manifest(const std::filesystem::path& csv_path);

/// Sidecar JSON next to the manifest carrying the config hash and corruption set.
std::filesystem::path benchmark_sidecar_path(const std::filesystem::path& csv_path);

}  // namespace degmon
