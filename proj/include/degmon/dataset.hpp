#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "degmon/image.hpp"

namespace degmon {

struct ImageRecord {
  std::string id;
  ImageBuffer image;
};

struct ManifestRow {
  std::string image_id;
  std::string relpath;  // relative to the manifest's directory
  std::string split;    // "train" or "val"
  std::string dataset_tag;

  bool operator==(const ManifestRow&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;

  /// Unique ids, known splits, no empty fields.
  void validate() const;
  std::vector<std::string> dataset_tags() const;
};

/// CSV with header `image_id,relpath,split,dataset_tag`.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct SplitRule {
  double val_fraction = 0.25;
  std::uint64_t seed = 0;
};

struct IngestResult {
  DatasetManifest manifest;
  std::vector<std::string> skipped;  // relpaths that failed to decode
};

/// Scans `root` recursively for PNG/JPEG files. Rows are sorted by relpath;
/// round(val_fraction * n) images with the smallest seeded path hash form the
/// validation split. Undecodable files are skipped with a warning.
IngestResult ingest(const std::filesystem::path& root, const SplitRule& rule, const std::string& dataset_tag);

/// Decodes the selected rows, resized to `input_size`, in manifest order.
std::vector<ImageRecord> load_images(const std::filesystem::path& manifest_path, const DatasetManifest& manifest,
                                     const std::optional<std::string>& split,
                                     const std::optional<std::string>& dataset_tag, int input_size);

enum class SynthStyle { kShapes, kTextures, kLeaves };

SynthStyle parse_synth_style(const std::string& name);

/// Procedural scene rendered at 4x resolution and area-downsampled, so edges
/// are anti-aliased and the image carries fine detail.
ImageBuffer synth_image(std::uint64_t seed, int size, SynthStyle style);

/// Writes `count` PNGs named `<prefix>_<index>.png` into `out_dir`.
void synthesize_dataset(const std::filesystem::path& out_dir, int count, int size, std::uint64_t seed, SynthStyle style,
                        const std::string& prefix);

}  // namespace degmon
