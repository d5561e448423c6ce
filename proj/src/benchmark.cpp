#include "degmon/benchmark.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "degmon/csv.hpp"
#include "degmon/error.hpp"
#include "degmon/image_io.hpp"

namespace degmon {

std::vector<const BenchmarkEntry*> SeverityBenchmark::at_severity(int severity) const {
  std::vector<const BenchmarkEntry*> out;
  for (const auto& e : entries) {
    if (e.severity == severity) out.push_back(&e);
  }
  return out;
}

std::vector<std::string> round_robin_assignment(std::span<const std::string> sorted_ids,
                                                std::span<const std::string> corruption_set) {
  if (corruption_set.empty()) throw ValidationError("corruption set is empty");
  std::vector<std::string> out;
  out.reserve(sorted_ids.size());
  for (std::size_t i = 0; i < sorted_ids.size(); ++i) {
    out.push_back(corruption_set[i % corruption_set.size()]);
  }
  return out;
}

ImageBuffer apply_corruption(const ImageBuffer& img, const OperatorLadder& ladder, int severity, std::uint64_t seed) {
  if (severity == 0) return img;
  return quantize8(apply_operator(img, ladder.op_id, ladder.at_severity(severity), seed));
}

std::uint64_t corruption_seed(std::uint64_t master_seed, const std::string& image_id) {
  return derive_seed(master_seed, image_id, 0, 0xbe);
}

SeverityBenchmark build_severity_benchmark(std::vector<std::string> image_ids,
                                           std::span<const OperatorLadder> corruption_set, std::uint64_t seed,
                                           const ImageLoader& load, const std::filesystem::path& out_dir) {
  if (image_ids.empty()) throw ValidationError("image manifest is empty");
  if (corruption_set.empty()) throw ValidationError("corruption set is empty");
  std::sort(image_ids.begin(), image_ids.end());
  if (std::adjacent_find(image_ids.begin(), image_ids.end()) != image_ids.end()) {
    throw ValidationError("duplicate image ids in benchmark manifest");
  }
  SeverityBenchmark bench;
  for (const auto& l : corruption_set) bench.corruption_set.push_back(l.op_id);
  const auto assignment = round_robin_assignment(image_ids, bench.corruption_set);

  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    const auto& id = image_ids[i];
    const auto& ladder = corruption_set[i % corruption_set.size()];
    const auto s = corruption_seed(seed, id);
    std::optional<ImageBuffer> pristine;
    if (!out_dir.empty()) pristine = load(id);
    for (int severity = 1; severity <= 5; ++severity) {
      BenchmarkEntry e{id, assignment[i], severity,
                       "sev" + std::to_string(severity) + "/" + assignment[i] + "/" + id + ".png", s};
      if (pristine) {
        write_png(out_dir / e.relpath, apply_corruption(*pristine, ladder, severity, s));
      }
      bench.entries.push_back(std::move(e));
    }
  }
  std::stable_sort(bench.entries.begin(), bench.entries.end(),
                   [](const BenchmarkEntry& a, const BenchmarkEntry& b) { return a.severity < b.severity; });
  return bench;
}

std::filesystem::path benchmark_sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".meta.json");
  return p;
}

void write_benchmark_manifest(const std::filesystem::path& csv_path, const SeverityBenchmark& bench) {
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << "image_id,corruption_id,severity,relpath,seed\n";
  for (const auto& e : bench.entries) {
    out << e.image_id << ',' << e.corruption_id << ',' << e.severity << ',' << e.relpath << ',' << e.seed << '\n';
  }
  nlohmann::json meta{{"config_hash", bench.config_hash}, {"corruption_set", bench.corruption_set}, {"levels", 5}};
  std::ofstream side(benchmark_sidecar_path(csv_path), std::ios::binary);
  side << meta.dump(2) << '\n';
}

SeverityBenchmark read_benchmark_manifest(const std::filesystem::path& csv_path) {
  const auto table = read_csv(csv_path, {"image_id", "corruption_id", "severity", "relpath", "seed"});
  SeverityBenchmark bench;
  for (const auto& row : table.rows) {
    BenchmarkEntry e;
    e.image_id = row[0];
    e.corruption_id = row[1];
    e.severity = parse_int(row[2], "severity");
    e.relpath = row[3];
    e.seed = parse_u64(row[4], "seed");
    if (e.severity < 1 || e.severity > 5) throw FormatError("severity out of range in " + csv_path.string());
    bench.entries.push_back(std::move(e));
  }
  const auto side = benchmark_sidecar_path(csv_path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    const auto meta = nlohmann::json::parse(in, nullptr, false);
    if (meta.is_discarded()) throw FormatError("malformed " + side.string());
    bench.config_hash = meta.value("config_hash", "");
    bench.corruption_set = meta.value("corruption_set", std::vector<std::string>{});
  }
  return bench;
}

}  // namespace degmon
