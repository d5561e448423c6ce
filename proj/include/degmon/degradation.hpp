#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "degmon/image.hpp"
#include "degmon/rng.hpp"

namespace degmon {

enum class DegradationGroup {
  kBlur,
  kNoise,
  kCompression,
  kBrightness,
  kColor,
  kSpatial,
  kSharpnessContrast,
};

std::string_view group_name(DegradationGroup group);
DegradationGroup parse_group(std::string_view name);
std::vector<DegradationGroup> all_groups();

using OperatorFn = ImageBuffer (*)(const ImageBuffer& img, double param, Rng& rng);

/// A single degradation primitive driven by one scalar parameter. Any
/// randomness (noise realisation, blur direction, warp field) comes from the
/// generator passed to `fn`.
struct DegradationOperator {
  std::string_view id;
  DegradationGroup group;
  std::string_view parameter;
  double domain_min;
  double domain_max;
  double identity;  // zero-strength value; returns the input unchanged
  OperatorFn fn;
};

std::span<const DegradationOperator> operator_catalog();

/// Throws ConfigError for unknown ids.
const DegradationOperator& find_operator(std::string_view id);

using SeverityLadder = std::array<double, 5>;

/// Operator plus its parameter values at severities 1..5.
struct OperatorLadder {
  std::string op_id;
  SeverityLadder levels{};

  double at_severity(int severity) const;
};

struct ScheduledOp {
  std::string op_id;
  double param = 0.0;

  bool operator==(const ScheduledOp&) const = default;
};

/// Ordered operators with concrete parameters.
struct CompositionSpec {
  std::vector<ScheduledOp> ops;

  bool operator==(const CompositionSpec&) const = default;
};

/// Ordered operator ids with parameters not yet drawn.
struct CompositionTemplate {
  std::vector<std::string> op_ids;

  bool operator==(const CompositionTemplate&) const = default;
};

enum class HardNegativeOrder { kDegradeThenCrop, kCropThenDegrade };
enum class ViewSource { kDistinctImages, kSameImage };

struct DegradationConfig {
  int input_size = 64;
  int max_ops = 4;
  std::vector<DegradationGroup> group_pool = all_groups();
  std::vector<OperatorLadder> training;
  std::vector<OperatorLadder> evaluation;
  HardNegativeOrder hard_negative_order = HardNegativeOrder::kDegradeThenCrop;
  ViewSource view_source = ViewSource::kDistinctImages;

  /// The roster and ladders shipped in configs/desk.yaml.
  static DegradationConfig defaults();

  const OperatorLadder& training_ladder(std::string_view op_id) const;
  const OperatorLadder& evaluation_ladder(std::string_view op_id) const;
  void validate() const;
};

/// Applies one operator. Output is clamped to [0,1], has the input's size and
/// is a pure function of (img, param, seed).
ImageBuffer apply_operator(const ImageBuffer& img, std::string_view op_id, double param, std::uint64_t seed);

/// Draws n ~ U{1..max_ops} distinct groups from `group_pool`, one training
/// operator per group, in shuffled order.
CompositionTemplate sample_template(std::uint64_t seed, int max_ops, std::span<const DegradationGroup> group_pool,
                                    std::span<const OperatorLadder> roster);

/// Draws each operator's parameter uniformly between its severity-1 and
/// severity-5 values.
CompositionSpec sample_parameters(const CompositionTemplate& tmpl, std::span<const OperatorLadder> roster, Rng& rng);

CompositionSpec sample_composition(std::uint64_t seed, int max_ops, std::span<const DegradationGroup> group_pool,
                                   std::span<const OperatorLadder> roster);

/// d_n(... d_2(d_1(img))): operators applied in listed order.
ImageBuffer apply_composition(const ImageBuffer& img, const CompositionSpec& comp, std::uint64_t seed);

struct ViewPair {
  ImageBuffer a;
  ImageBuffer b;
  CompositionSpec spec_a;
  CompositionSpec spec_b;
};

/// Two views sharing the operator sequence of `tmpl` with independently drawn
/// parameters, resized to input_size x input_size.
ViewPair generate_views(const ImageBuffer& src_a, const ImageBuffer& src_b, const CompositionTemplate& tmpl,
                        std::span<const OperatorLadder> roster, std::uint64_t seed, int input_size);
ViewPair generate_views(const ImageBuffer& img, const CompositionTemplate& tmpl,
                        std::span<const OperatorLadder> roster, std::uint64_t seed, int input_size);

/// Centred half-width, half-height crop resized back to input_size.
ImageBuffer make_hard_negative(const ImageBuffer& img_deg, int input_size);

/// Both views and both hard negatives for one training pair.
struct TrainingQuad {
  ImageBuffer view_a;
  ImageBuffer view_b;
  ImageBuffer hard_a;
  ImageBuffer hard_b;
  CompositionTemplate tmpl;
  CompositionSpec spec_a;
  CompositionSpec spec_b;
};

TrainingQuad make_training_quad(const ImageBuffer& src_a, const ImageBuffer& src_b, const DegradationConfig& cfg,
                                std::uint64_t seed);

}  // namespace degmon
