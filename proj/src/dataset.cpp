#include "degmon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "degmon/csv.hpp"
#include "degmon/error.hpp"
#include "degmon/image_io.hpp"
#include "degmon/rng.hpp"

namespace degmon {

namespace {

const std::vector<std::string> kManifestHeader{"image_id", "relpath", "split", "dataset_tag"};

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string id_from_relpath(const std::string& relpath) {
  std::string id = std::filesystem::path(relpath).replace_extension().generic_string();
  std::replace(id.begin(), id.end(), '/', '_');
  std::replace(id.begin(), id.end(), ',', '_');
  return id;
}

}  // namespace

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : rows) {
    if (r.image_id.empty() || r.relpath.empty() || r.dataset_tag.empty()) {
      throw ValidationError("manifest row with an empty field");
    }
    if (r.split != "train" && r.split != "val") throw ValidationError("unknown split '" + r.split + "'");
    if (!ids.insert(r.image_id).second) throw ValidationError("duplicate image_id '" + r.image_id + "'");
  }
}

std::vector<std::string> DatasetManifest::dataset_tags() const {
  std::set<std::string> tags;
  for (const auto& r : rows) tags.insert(r.dataset_tag);
  return {tags.begin(), tags.end()};
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image_id,relpath,split,dataset_tag\n";
  for (const auto& r : manifest.rows) out << r.image_id << ',' << r.relpath << ',' << r.split << ',' << r.dataset_tag << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto table = read_csv(path, kManifestHeader);
  DatasetManifest m;
  for (const auto& row : table.rows) m.rows.push_back({row[0], row[1], row[2], row[3]});
  m.validate();
  return m;
}

IngestResult ingest(const std::filesystem::path& root, const SplitRule& rule, const std::string& dataset_tag) {
  if (!std::filesystem::is_directory(root)) throw IoError("not a directory: " + root.string());
  if (!(rule.val_fraction >= 0.0 && rule.val_fraction <= 1.0)) throw ConfigError("val_fraction must lie in [0, 1]");
  std::vector<std::string> relpaths;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      relpaths.push_back(std::filesystem::relative(entry.path(), root).generic_string());
    }
  }
  std::sort(relpaths.begin(), relpaths.end());
  if (relpaths.empty()) throw ValidationError("no PNG/JPEG images under " + root.string());

  IngestResult result;
  std::vector<std::string> valid;
  for (const auto& rel : relpaths) {
    if (try_read_image(root / rel)) {
      valid.push_back(rel);
    } else {
      spdlog::warn("skipping undecodable image {}", rel);
      result.skipped.push_back(rel);
    }
  }
  if (valid.empty()) throw ValidationError("no decodable images under " + root.string());

  std::vector<std::pair<std::uint64_t, std::size_t>> keys;
  for (std::size_t i = 0; i < valid.size(); ++i) keys.emplace_back(mix64(fnv1a64(valid[i]) ^ mix64(rule.seed)), i);
  std::sort(keys.begin(), keys.end());
  const auto n_val = static_cast<std::size_t>(std::lround(rule.val_fraction * static_cast<double>(valid.size())));
  std::vector<bool> is_val(valid.size(), false);
  for (std::size_t k = 0; k < n_val; ++k) is_val[keys[k].second] = true;

  for (std::size_t i = 0; i < valid.size(); ++i) {
    result.manifest.rows.push_back({id_from_relpath(valid[i]), valid[i], is_val[i] ? "val" : "train", dataset_tag});
  }
  result.manifest.validate();
  return result;
}

std::vector<ImageRecord> load_images(const std::filesystem::path& manifest_path, const DatasetManifest& manifest,
                                     const std::optional<std::string>& split,
                                     const std::optional<std::string>& dataset_tag, int input_size) {
  const auto base = manifest_path.parent_path();
  std::vector<ImageRecord> out;
  std::vector<std::string> missing;
  for (const auto& r : manifest.rows) {
    if (split && r.split != *split) continue;
    if (dataset_tag && r.dataset_tag != *dataset_tag) continue;
    auto img = try_read_image(base / r.relpath);
    if (!img) {
      missing.push_back(r.relpath);
      continue;
    }
    out.push_back({r.image_id, resize(*img, input_size, input_size)});
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw IoError("unreadable dataset images: " + list);
  }
  return out;
}

SynthStyle parse_synth_style(const std::string& name) {
  if (name == "shapes") return SynthStyle::kShapes;
  if (name == "textures") return SynthStyle::kTextures;
  if (name == "leaves") return SynthStyle::kLeaves;
  throw ConfigError("unknown synthetic style '" + name + "' (expected shapes|textures|leaves)");
}

namespace {

cv::Scalar random_color(Rng& rng) {
  return {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)};
}

void draw_background(cv::Mat& canvas, Rng& rng) {
  const cv::Scalar c0 = random_color(rng);
  const cv::Scalar c1 = random_color(rng);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  const double n = canvas.rows;
  for (int y = 0; y < canvas.rows; ++y) {
    auto* row = canvas.ptr<cv::Vec3f>(y);
    for (int x = 0; x < canvas.cols; ++x) {
      const double t = std::clamp(0.5 + ((x / n - 0.5) * dx + (y / n - 0.5) * dy), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) row[x][c] = static_cast<float>((1.0 - t) * c0[c] + t * c1[c]);
    }
  }
}

void add_grating(cv::Mat& canvas, Rng& rng, double amplitude) {
  const double freq = uniform(rng, 4.0, 14.0);
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const cv::Scalar tint = random_color(rng);
  const double n = canvas.rows;
  for (int y = 0; y < canvas.rows; ++y) {
    auto* row = canvas.ptr<cv::Vec3f>(y);
    for (int x = 0; x < canvas.cols; ++x) {
      const double u = (x * std::cos(angle) + y * std::sin(angle)) / n;
      const double v = amplitude * std::sin(2.0 * std::numbers::pi * freq * u + phase);
      for (int c = 0; c < 3; ++c) row[x][c] += static_cast<float>(v * (tint[c] + 0.5));
    }
  }
}

// Shape outline drawn into a single-channel mask so the fill can be any
// pattern.
void draw_mask(cv::Mat& mask, Rng& rng) {
  const int n = mask.rows;
  const cv::Point center(static_cast<int>(uniform(rng, 0.1, 0.9) * n), static_cast<int>(uniform(rng, 0.1, 0.9) * n));
  const int kind = static_cast<int>(rng() % 4);
  const int radius = static_cast<int>(uniform(rng, 0.04, 0.3) * n);
  const cv::Scalar on(1.0);
  switch (kind) {
    case 0:
      cv::circle(mask, center, radius, on, cv::FILLED, cv::LINE_AA);
      break;
    case 1: {
      const cv::RotatedRect rect(center, cv::Size2f(static_cast<float>(radius * 2), static_cast<float>(radius)),
                                 static_cast<float>(uniform(rng, 0.0, 180.0)));
      cv::Point2f pts[4];
      rect.points(pts);
      std::vector<cv::Point> poly(pts, pts + 4);
      cv::fillConvexPoly(mask, poly, on, cv::LINE_AA);
      break;
    }
    case 2: {
      const cv::Point end(static_cast<int>(uniform(rng, 0.0, 1.0) * n), static_cast<int>(uniform(rng, 0.0, 1.0) * n));
      cv::line(mask, center, end, on, std::max(2, radius / 6), cv::LINE_AA);
      break;
    }
    default: {
      std::vector<cv::Point> tri;
      for (int k = 0; k < 3; ++k) {
        tri.emplace_back(center.x + static_cast<int>(uniform(rng, -1.0, 1.0) * radius),
                         center.y + static_cast<int>(uniform(rng, -1.0, 1.0) * radius));
      }
      cv::fillConvexPoly(mask, tri, on, cv::LINE_AA);
      break;
    }
  }
}

// Flat colour or a two-colour stripe pattern whose period is given in output
// pixels (`scale` canvas pixels per output pixel).
void draw_shape(cv::Mat& canvas, Rng& rng, int scale) {
  cv::Mat mask = cv::Mat::zeros(canvas.size(), CV_32FC1);
  draw_mask(mask, rng);
  const cv::Scalar c0 = random_color(rng);
  const bool striped = rng() % 2 == 0;
  const cv::Scalar c1 = random_color(rng);
  const double period = uniform(rng, 2.5, 7.0) * scale;
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int y = 0; y < canvas.rows; ++y) {
    auto* row = canvas.ptr<cv::Vec3f>(y);
    const auto* m = mask.ptr<float>(y);
    for (int x = 0; x < canvas.cols; ++x) {
      if (m[x] <= 0.0f) continue;
      double t = 0.0;
      if (striped) t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (x * ca + y * sa) / period);
      for (int c = 0; c < 3; ++c) {
        const double fill = (1.0 - t) * c0[c] + t * c1[c];
        row[x][c] = static_cast<float>((1.0 - m[x]) * row[x][c] + m[x] * fill);
      }
    }
  }
}

// Dead-leaves model: opaque discs with radii drawn from a 1/r^3 law painted
// back to front, which gives scale-invariant statistics and sharp occlusion
// edges everywhere in the frame.
void draw_leaves(cv::Mat& canvas, Rng& rng, int scale) {
  const double r_min = 2.5 * scale;
  const double r_max = 0.25 * canvas.rows;
  const double a = 1.0 / (r_min * r_min);
  const double b = 1.0 / (r_max * r_max);
  const int leaves = 600;
  for (int i = 0; i < leaves; ++i) {
    const double r = 1.0 / std::sqrt(a - uniform(rng, 0.0, 1.0) * (a - b));
    const cv::Point center(static_cast<int>(uniform(rng, 0.0, 1.0) * canvas.cols),
                           static_cast<int>(uniform(rng, 0.0, 1.0) * canvas.rows));
    cv::circle(canvas, center, std::max(1, static_cast<int>(r)), random_color(rng), cv::FILLED, cv::LINE_AA);
  }
}

}  // namespace

ImageBuffer synth_image(std::uint64_t seed, int size, SynthStyle style) {
  if (size < 4) throw ValidationError("synthetic image size must be >= 4");
  Rng rng(mix64(seed));
  constexpr int kScale = 4;
  cv::Mat canvas(size * kScale, size * kScale, CV_32FC3);
  draw_background(canvas, rng);
  if (style == SynthStyle::kLeaves) {
    draw_leaves(canvas, rng, kScale);
  } else if (style == SynthStyle::kShapes) {
    if (rng() % 2 == 0) add_grating(canvas, rng, 0.05);
    const int shapes = 4 + static_cast<int>(rng() % 8);
    for (int i = 0; i < shapes; ++i) draw_shape(canvas, rng, kScale);
  } else {
    const int gratings = 2 + static_cast<int>(rng() % 2);
    for (int i = 0; i < gratings; ++i) add_grating(canvas, rng, 0.12);
    const int shapes = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < shapes; ++i) draw_shape(canvas, rng, kScale);
  }
  cv::Mat small;
  cv::resize(canvas, small, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  ImageBuffer out = ImageBuffer::from_mat(small);
  out.clamp();
  return quantize8(out);
}

void synthesize_dataset(const std::filesystem::path& out_dir, int count, int size, std::uint64_t seed, SynthStyle style,
                        const std::string& prefix) {
  if (count < 1) throw ValidationError("count must be >= 1");
  for (int i = 0; i < count; ++i) {
    const auto img = synth_image(combine_seed(seed, static_cast<std::uint64_t>(i)), size, style);
    write_png(out_dir / fmt::format("{}_{:04d}.png", prefix, i), img);
  }
}

}  // namespace degmon
