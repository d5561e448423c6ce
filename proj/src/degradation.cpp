#include "degmon/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "degmon/error.hpp"

namespace degmon {

namespace {

constexpr int kBorder = cv::BORDER_REFLECT_101;

ImageBuffer finish(const cv::Mat& m) {
  ImageBuffer out = ImageBuffer::from_mat(m);
  out.clamp();
  return out;
}

template <typename F>
ImageBuffer map_values(const ImageBuffer& img, F&& f) {
  ImageBuffer out = img;
  for (float& v : out.values()) v = f(v);
  out.clamp();
  return out;
}

// ---- blur ----

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma, Rng&) {
  cv::Mat dst;
  cv::GaussianBlur(img.to_mat(), dst, cv::Size(0, 0), sigma, sigma, kBorder);
  return finish(dst);
}

ImageBuffer motion_blur(const ImageBuffer& img, double length, Rng& rng) {
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  if (length <= 1.0) return img;
  const int half = static_cast<int>(std::ceil(length / 2.0));
  const int k = 2 * half + 1;
  cv::Mat kernel = cv::Mat::zeros(k, k, CV_32F);
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  const int samples = 8 * k;
  const double extent = (length - 1.0) / 2.0;
  for (int i = 0; i < samples; ++i) {
    const double t = -extent + 2.0 * extent * i / (samples - 1);
    const double px = half + t * dx;
    const double py = half + t * dy;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    for (int oy = 0; oy <= 1; ++oy) {
      for (int ox = 0; ox <= 1; ++ox) {
        const int xx = x0 + ox;
        const int yy = y0 + oy;
        if (xx < 0 || yy < 0 || xx >= k || yy >= k) continue;
        const double w = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
        kernel.at<float>(yy, xx) += static_cast<float>(w);
      }
    }
  }
  kernel /= cv::sum(kernel)[0];
  cv::Mat dst;
  cv::filter2D(img.to_mat(), dst, -1, kernel, cv::Point(-1, -1), 0.0, kBorder);
  return finish(dst);
}

ImageBuffer defocus_blur(const ImageBuffer& img, double radius, Rng&) {
  const int half = static_cast<int>(std::ceil(radius));
  const int k = 2 * half + 1;
  constexpr int kSuper = 8;
  cv::Mat kernel = cv::Mat::zeros(k, k, CV_32F);
  for (int y = 0; y < k; ++y) {
    for (int x = 0; x < k; ++x) {
      int inside = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x - half - 0.5 + (sx + 0.5) / kSuper;
          const double py = y - half - 0.5 + (sy + 0.5) / kSuper;
          if (px * px + py * py <= radius * radius) ++inside;
        }
      }
      kernel.at<float>(y, x) = static_cast<float>(inside);
    }
  }
  const double total = cv::sum(kernel)[0];
  if (total <= 0.0) return img;
  kernel /= total;
  cv::Mat dst;
  cv::filter2D(img.to_mat(), dst, -1, kernel, cv::Point(-1, -1), 0.0, kBorder);
  return finish(dst);
}

// ---- noise ----

ImageBuffer gaussian_noise(const ImageBuffer& img, double sigma, Rng& rng) {
  ImageBuffer out = img;
  for (float& v : out.values()) v = static_cast<float>(v + sigma * standard_normal(rng));
  out.clamp();
  return out;
}

ImageBuffer impulse_noise(const ImageBuffer& img, double amount, Rng& rng) {
  ImageBuffer out = img;
  for (float& v : out.values()) {
    const double u = uniform(rng, 0.0, 1.0);
    const double salt = uniform(rng, 0.0, 1.0);
    if (u < amount) v = salt < 0.5 ? 0.0f : 1.0f;
  }
  return out;
}

ImageBuffer shot_noise(const ImageBuffer& img, double strength, Rng& rng) {
  const double photons = 1.0 / strength;
  ImageBuffer out = img;
  for (float& v : out.values()) v = static_cast<float>(poisson(rng, v * photons) / photons);
  out.clamp();
  return out;
}

// ---- compression ----

ImageBuffer jpeg(const ImageBuffer& img, double quality, Rng&) {
  if (quality >= 100.0) return img;
  cv::Mat bgr8;
  cv::Mat rgb = img.to_mat();
  cv::cvtColor(rgb, rgb, cv::COLOR_RGB2BGR);
  rgb.convertTo(bgr8, CV_8UC3, 255.0);
  std::vector<unsigned char> buf;
  const int q = std::clamp(static_cast<int>(std::lround(quality)), 1, 99);
  cv::imencode(".jpg", bgr8, buf, {cv::IMWRITE_JPEG_QUALITY, q});
  cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_COLOR);
  cv::cvtColor(decoded, decoded, cv::COLOR_BGR2RGB);
  cv::Mat f;
  decoded.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return finish(f);
}

ImageBuffer pixelate(const ImageBuffer& img, double block, Rng&) {
  const int small_h = std::max(1, static_cast<int>(std::lround(img.height() / block)));
  const int small_w = std::max(1, static_cast<int>(std::lround(img.width() / block)));
  if (small_h == img.height() && small_w == img.width()) return img;
  cv::Mat small;
  cv::resize(img.to_mat(), small, cv::Size(small_w, small_h), 0, 0, cv::INTER_AREA);
  // Nearest lookup by pixel centre so every output pixel reads the block that
  // averaged it (cv::INTER_NEAREST drops the half-pixel offset).
  ImageBuffer out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    const int sy = std::min(small_h - 1, static_cast<int>((y + 0.5) * small_h / img.height()));
    const auto* row = small.ptr<cv::Vec3f>(sy);
    for (int x = 0; x < img.width(); ++x) {
      const int sx = std::min(small_w - 1, static_cast<int>((x + 0.5) * small_w / img.width()));
      for (int c = 0; c < ImageBuffer::kChannels; ++c) out.at(y, x, c) = row[sx][c];
    }
  }
  return out;
}

// ---- brightness ----

ImageBuffer brighten(const ImageBuffer& img, double shift, Rng&) {
  const double g = 1.0 / (1.0 + shift);
  return map_values(img, [g](float v) { return static_cast<float>(std::pow(static_cast<double>(v), g)); });
}

ImageBuffer darken(const ImageBuffer& img, double shift, Rng&) {
  const double g = 1.0 + shift;
  return map_values(img, [g](float v) { return static_cast<float>(std::pow(static_cast<double>(v), g)); });
}

ImageBuffer brightness_add(const ImageBuffer& img, double delta, Rng&) {
  return map_values(img, [delta](float v) { return static_cast<float>(v + delta); });
}

// ---- color ----

ImageBuffer channel_shift(const ImageBuffer& img, double magnitude, Rng& rng) {
  std::array<double, 3> dir{};
  double peak = 0.0;
  for (double& d : dir) {
    d = uniform(rng, -1.0, 1.0);
    peak = std::max(peak, std::abs(d));
  }
  if (peak < 1e-3) {
    dir = {1.0, -1.0, 0.0};
    peak = 1.0;
  }
  ImageBuffer out = img;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<float>(v[i] + magnitude * dir[i % 3] / peak);
  }
  out.clamp();
  return out;
}

ImageBuffer saturate(const ImageBuffer& img, double amount, Rng&) {
  ImageBuffer out = img;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); i += 3) {
    const double gray = 0.299 * v[i] + 0.587 * v[i + 1] + 0.114 * v[i + 2];
    for (std::size_t c = 0; c < 3; ++c) {
      v[i + c] = static_cast<float>(gray + (1.0 - amount) * (v[i + c] - gray));
    }
  }
  out.clamp();
  return out;
}

// ---- spatial ----

ImageBuffer elastic_warp(const ImageBuffer& img, double amplitude, Rng& rng) {
  const int h = img.height();
  const int w = img.width();
  cv::Mat fx(h, w, CV_32F);
  cv::Mat fy(h, w, CV_32F);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      fx.at<float>(y, x) = static_cast<float>(standard_normal(rng));
      fy.at<float>(y, x) = static_cast<float>(standard_normal(rng));
    }
  }
  const double smooth = std::max(1.0, std::min(h, w) / 16.0);
  cv::GaussianBlur(fx, fx, cv::Size(0, 0), smooth, smooth, kBorder);
  cv::GaussianBlur(fy, fy, cv::Size(0, 0), smooth, smooth, kBorder);
  const double rms = std::sqrt((cv::norm(fx, cv::NORM_L2SQR) + cv::norm(fy, cv::NORM_L2SQR)) / (2.0 * h * w));
  const double scale = rms > 0.0 ? amplitude / rms : 0.0;
  cv::Mat map_x(h, w, CV_32F);
  cv::Mat map_y(h, w, CV_32F);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      map_x.at<float>(y, x) = static_cast<float>(x + scale * fx.at<float>(y, x));
      map_y.at<float>(y, x) = static_cast<float>(y + scale * fy.at<float>(y, x));
    }
  }
  cv::Mat dst;
  cv::remap(img.to_mat(), dst, map_x, map_y, cv::INTER_LINEAR, kBorder);
  return finish(dst);
}

// ---- sharpness / contrast ----

ImageBuffer oversharpen(const ImageBuffer& img, double amount, Rng&) {
  cv::Mat src = img.to_mat();
  cv::Mat blurred;
  cv::GaussianBlur(src, blurred, cv::Size(0, 0), 1.0, 1.0, kBorder);
  cv::Mat dst = src + amount * (src - blurred);
  return finish(dst);
}

ImageBuffer contrast(const ImageBuffer& img, double reduction, Rng&) {
  const double m = img.mean();
  return map_values(img, [m, reduction](float v) { return static_cast<float>(m + (1.0 - reduction) * (v - m)); });
}

using G = DegradationGroup;

constexpr DegradationOperator kCatalog[] = {
    {"gaussian_blur", G::kBlur, "sigma_px", 0.0, 10.0, 0.0, &gaussian_blur},
    {"motion_blur", G::kBlur, "length_px", 0.0, 31.0, 0.0, &motion_blur},
    {"defocus_blur", G::kBlur, "radius_px", 0.0, 10.0, 0.0, &defocus_blur},
    {"gaussian_noise", G::kNoise, "sigma", 0.0, 1.0, 0.0, &gaussian_noise},
    {"impulse_noise", G::kNoise, "amount", 0.0, 1.0, 0.0, &impulse_noise},
    {"shot_noise", G::kNoise, "inverse_photons", 0.0, 1.0, 0.0, &shot_noise},
    {"jpeg", G::kCompression, "quality", 1.0, 100.0, 100.0, &jpeg},
    {"pixelate", G::kCompression, "block_px", 1.0, 16.0, 1.0, &pixelate},
    {"brighten", G::kBrightness, "gamma_shift", 0.0, 5.0, 0.0, &brighten},
    {"darken", G::kBrightness, "gamma_shift", 0.0, 5.0, 0.0, &darken},
    {"brightness_add", G::kBrightness, "delta", 0.0, 1.0, 0.0, &brightness_add},
    {"channel_shift", G::kColor, "offset", 0.0, 1.0, 0.0, &channel_shift},
    {"saturate", G::kColor, "desaturation", 0.0, 1.0, 0.0, &saturate},
    {"elastic_warp", G::kSpatial, "amplitude_px", 0.0, 10.0, 0.0, &elastic_warp},
    {"oversharpen", G::kSharpnessContrast, "amount", 0.0, 10.0, 0.0, &oversharpen},
    {"contrast", G::kSharpnessContrast, "reduction", 0.0, 1.0, 0.0, &contrast},
};

void shuffle(std::vector<std::string>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng() % i]);
  }
}

const OperatorLadder& find_ladder(std::span<const OperatorLadder> roster, std::string_view op_id) {
  for (const auto& l : roster) {
    if (l.op_id == op_id) return l;
  }
  throw ConfigError("no severity ladder for operator '" + std::string(op_id) + "'");
}

}  // namespace

std::string_view group_name(DegradationGroup group) {
  switch (group) {
    case G::kBlur: return "blur";
    case G::kNoise: return "noise";
    case G::kCompression: return "compression";
    case G::kBrightness: return "brightness_change";
    case G::kColor: return "color_distortion";
    case G::kSpatial: return "spatial_distortion";
    case G::kSharpnessContrast: return "sharpness_contrast";
  }
  return "unknown";
}

DegradationGroup parse_group(std::string_view name) {
  for (auto g : all_groups()) {
    if (group_name(g) == name) return g;
  }
  throw ConfigError("unknown degradation group '" + std::string(name) + "'");
}

std::vector<DegradationGroup> all_groups() {
  return {G::kBlur, G::kNoise, G::kCompression, G::kBrightness, G::kColor, G::kSpatial, G::kSharpnessContrast};
}

std::span<const DegradationOperator> operator_catalog() { return kCatalog; }

const DegradationOperator& find_operator(std::string_view id) {
  for (const auto& op : kCatalog) {
    if (op.id == id) return op;
  }
  throw ConfigError("unknown degradation operator '" + std::string(id) + "'");
}

double OperatorLadder::at_severity(int severity) const {
  if (severity < 1 || severity > 5) {
    throw ValidationError("severity must be in 1..5, got " + std::to_string(severity));
  }
  return levels[static_cast<std::size_t>(severity - 1)];
}

DegradationConfig DegradationConfig::defaults() {
  DegradationConfig cfg;
  cfg.training = {
      {"gaussian_blur", {0.5, 0.8, 1.2, 1.7, 2.4}},
      {"motion_blur", {2.0, 3.0, 5.0, 7.0, 9.0}},
      {"gaussian_noise", {0.04, 0.08, 0.12, 0.18, 0.26}},
      {"impulse_noise", {0.01, 0.02, 0.04, 0.07, 0.10}},
      {"jpeg", {70.0, 50.0, 35.0, 20.0, 10.0}},
      {"pixelate", {1.5, 2.0, 3.0, 4.0, 6.0}},
      {"brighten", {0.2, 0.4, 0.6, 0.9, 1.3}},
      {"darken", {0.2, 0.4, 0.6, 0.9, 1.3}},
      {"channel_shift", {0.03, 0.06, 0.10, 0.15, 0.20}},
      {"saturate", {0.2, 0.4, 0.6, 0.8, 1.0}},
      {"elastic_warp", {0.5, 1.0, 1.5, 2.2, 3.0}},
      {"oversharpen", {0.5, 1.0, 1.8, 2.8, 4.0}},
      {"contrast", {0.1, 0.2, 0.3, 0.45, 0.6}},
  };
  cfg.evaluation = {
      {"gaussian_noise", {0.08, 0.12, 0.18, 0.26, 0.38}},
      {"shot_noise", {1.0 / 60.0, 1.0 / 25.0, 1.0 / 12.0, 1.0 / 5.0, 1.0 / 3.0}},
      {"impulse_noise", {0.03, 0.06, 0.09, 0.17, 0.27}},
      {"defocus_blur", {0.8, 1.1, 1.5, 2.0, 2.6}},
      {"motion_blur", {2.5, 3.5, 5.0, 6.5, 8.5}},
      {"contrast", {0.6, 0.7, 0.8, 0.9, 0.95}},
      {"brightness_add", {0.1, 0.2, 0.3, 0.4, 0.5}},
      {"jpeg", {25.0, 18.0, 15.0, 10.0, 7.0}},
      {"pixelate", {1.0 / 0.6, 2.0, 2.5, 1.0 / 0.3, 4.0}},
  };
  return cfg;
}

const OperatorLadder& DegradationConfig::training_ladder(std::string_view op_id) const {
  return find_ladder(training, op_id);
}

const OperatorLadder& DegradationConfig::evaluation_ladder(std::string_view op_id) const {
  return find_ladder(evaluation, op_id);
}

void DegradationConfig::validate() const {
  if (input_size < 2) throw ConfigError("input_size must be >= 2");
  if (max_ops < 1) throw ConfigError("max_ops must be >= 1");
  if (group_pool.empty()) throw ConfigError("group_pool must not be empty");
  if (static_cast<std::size_t>(max_ops) > group_pool.size()) {
    throw ConfigError("max_ops exceeds the number of groups in the pool");
  }
  auto check = [](const std::vector<OperatorLadder>& ladders, std::string_view section) {
    std::set<std::string> seen;
    for (const auto& l : ladders) {
      const auto& op = find_operator(l.op_id);
      if (!seen.insert(l.op_id).second) {
        throw ConfigError("duplicate operator '" + l.op_id + "' in " + std::string(section));
      }
      for (double p : l.levels) {
        if (!(p >= op.domain_min && p <= op.domain_max)) {
          throw ConfigError("ladder value out of domain for '" + l.op_id + "' in " + std::string(section));
        }
      }
    }
  };
  check(training, "training");
  check(evaluation, "evaluation");
  if (evaluation.empty()) throw ConfigError("evaluation corruption set is empty");
  for (auto g : group_pool) {
    const bool any = std::any_of(training.begin(), training.end(),
                                 [g](const OperatorLadder& l) { return find_operator(l.op_id).group == g; });
    if (!any) {
      throw ConfigError("group '" + std::string(group_name(g)) + "' has no training operator");
    }
  }
}

ImageBuffer apply_operator(const ImageBuffer& img, std::string_view op_id, double param, std::uint64_t seed) {
  const auto& op = find_operator(op_id);
  if (img.empty()) throw ValidationError("empty image");
  if (!(param >= op.domain_min && param <= op.domain_max)) {
    throw ValidationError("parameter " + std::to_string(param) + " outside domain of '" + std::string(op_id) + "'");
  }
  if (param == op.identity) return img;
  Rng rng(mix64(seed));
  ImageBuffer out = op.fn(img, param, rng);
  out.clamp();
  return out;
}

CompositionTemplate sample_template(std::uint64_t seed, int max_ops, std::span<const DegradationGroup> group_pool,
                                    std::span<const OperatorLadder> roster) {
  if (max_ops < 1) throw ValidationError("max_ops must be >= 1");
  if (group_pool.empty()) throw ValidationError("group pool is empty");
  if (static_cast<std::size_t>(max_ops) > group_pool.size()) {
    throw ValidationError("max_ops exceeds group pool size");
  }
  Rng rng(mix64(seed));
  const int n = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_ops));

  std::vector<std::string> groups;
  for (auto g : group_pool) groups.emplace_back(group_name(g));
  shuffle(groups, rng);

  CompositionTemplate tmpl;
  for (int i = 0; i < n; ++i) {
    const auto g = parse_group(groups[static_cast<std::size_t>(i)]);
    std::vector<std::string> candidates;
    for (const auto& l : roster) {
      if (find_operator(l.op_id).group == g) candidates.push_back(l.op_id);
    }
    if (candidates.empty()) {
      throw ConfigError("group '" + groups[static_cast<std::size_t>(i)] + "' has no operator in the roster");
    }
    tmpl.op_ids.push_back(candidates[rng() % candidates.size()]);
  }
  shuffle(tmpl.op_ids, rng);
  return tmpl;
}

CompositionSpec sample_parameters(const CompositionTemplate& tmpl, std::span<const OperatorLadder> roster, Rng& rng) {
  CompositionSpec spec;
  for (const auto& id : tmpl.op_ids) {
    const auto& ladder = find_ladder(roster, id);
    spec.ops.push_back({id, uniform(rng, ladder.levels.front(), ladder.levels.back())});
  }
  return spec;
}

CompositionSpec sample_composition(std::uint64_t seed, int max_ops, std::span<const DegradationGroup> group_pool,
                                   std::span<const OperatorLadder> roster) {
  const auto tmpl = sample_template(seed, max_ops, group_pool, roster);
  Rng rng(combine_seed(seed, 0x5eed));
  return sample_parameters(tmpl, roster, rng);
}

ImageBuffer apply_composition(const ImageBuffer& img, const CompositionSpec& comp, std::uint64_t seed) {
  ImageBuffer out = img;
  for (std::size_t j = 0; j < comp.ops.size(); ++j) {
    out = apply_operator(out, comp.ops[j].op_id, comp.ops[j].param, combine_seed(seed, j));
  }
  return out;
}

ViewPair generate_views(const ImageBuffer& src_a, const ImageBuffer& src_b, const CompositionTemplate& tmpl,
                        std::span<const OperatorLadder> roster, std::uint64_t seed, int input_size) {
  Rng rng_a(combine_seed(seed, 1));
  Rng rng_b(combine_seed(seed, 2));
  ViewPair views;
  views.spec_a = sample_parameters(tmpl, roster, rng_a);
  views.spec_b = sample_parameters(tmpl, roster, rng_b);
  views.a = resize(apply_composition(src_a, views.spec_a, combine_seed(seed, 11)), input_size, input_size);
  views.b = resize(apply_composition(src_b, views.spec_b, combine_seed(seed, 12)), input_size, input_size);
  return views;
}

ViewPair generate_views(const ImageBuffer& img, const CompositionTemplate& tmpl,
                        std::span<const OperatorLadder> roster, std::uint64_t seed, int input_size) {
  return generate_views(img, img, tmpl, roster, seed, input_size);
}

ImageBuffer make_hard_negative(const ImageBuffer& img_deg, int input_size) {
  if (img_deg.height() < 2 || img_deg.width() < 2) {
    throw ValidationError("hard negative needs an input of at least 2x2");
  }
  return resize(center_crop(img_deg, img_deg.height() / 2, img_deg.width() / 2), input_size, input_size);
}

TrainingQuad make_training_quad(const ImageBuffer& src_a, const ImageBuffer& src_b, const DegradationConfig& cfg,
                                std::uint64_t seed) {
  TrainingQuad quad;
  quad.tmpl = sample_template(seed, cfg.max_ops, cfg.group_pool, cfg.training);
  const ImageBuffer& second = cfg.view_source == ViewSource::kSameImage ? src_a : src_b;
  auto views = generate_views(src_a, second, quad.tmpl, cfg.training, seed, cfg.input_size);
  if (cfg.hard_negative_order == HardNegativeOrder::kDegradeThenCrop) {
    quad.hard_a = make_hard_negative(views.a, cfg.input_size);
    quad.hard_b = make_hard_negative(views.b, cfg.input_size);
  } else {
    const auto crop_a = make_hard_negative(src_a, cfg.input_size);
    const auto crop_b = make_hard_negative(second, cfg.input_size);
    quad.hard_a = apply_composition(crop_a, views.spec_a, combine_seed(seed, 11));
    quad.hard_b = apply_composition(crop_b, views.spec_b, combine_seed(seed, 12));
  }
  quad.view_a = std::move(views.a);
  quad.view_b = std::move(views.b);
  quad.spec_a = std::move(views.spec_a);
  quad.spec_b = std::move(views.spec_b);
  return quad;
}

}  // namespace degmon
