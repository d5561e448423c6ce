#include "degmon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "degmon/error.hpp"

namespace degmon {

namespace {

void check_classes(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw ValidationError("both score classes must be non-empty");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(id_scores.begin(), id_scores.end(), finite) ||
      !std::all_of(ood_scores.begin(), ood_scores.end(), finite)) {
    throw ValidationError("scores must be finite");
  }
}

}  // namespace

void ScoreSet::validate() const { check_classes(id_scores, ood_scores); }

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  check_classes(id_scores, ood_scores);
  const std::size_t n_id = id_scores.size();
  const std::size_t n_ood = ood_scores.size();
  std::vector<std::pair<double, bool>> all;  // (score, is_ood)
  all.reserve(n_id + n_ood);
  for (double v : id_scores) all.emplace_back(v, false);
  for (double v : ood_scores) all.emplace_back(v, true);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the rank sum keeps midranks integral.
  long long twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const long long twice_midrank = static_cast<long long>(i + 1 + j);  // (i+1 + j) = 2 * mean rank of [i, j)
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) twice_rank_sum += twice_midrank;
    }
    i = j;
  }
  const long long n1 = static_cast<long long>(n_ood);
  const long long twice_u = twice_rank_sum - n1 * (n1 + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double auroc(const ScoreSet& s) { return auroc(s.id_scores, s.ood_scores); }

double rate_at_operating_point(std::span<const double> id_scores, std::span<const double> ood_scores,
                               OperatingPoint point) {
  check_classes(id_scores, ood_scores);
  if (point == OperatingPoint::kTpr95) {
    std::vector<double> ood(ood_scores.begin(), ood_scores.end());
    std::sort(ood.begin(), ood.end(), std::greater<>());
    const auto k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ood.size()) - 1e-9));
    const double t = ood[std::max<std::size_t>(k, 1) - 1];
    const auto fp = std::count_if(id_scores.begin(), id_scores.end(), [t](double v) { return v >= t; });
    return static_cast<double>(fp) / static_cast<double>(id_scores.size());
  }
  std::vector<double> id(id_scores.begin(), id_scores.end());
  std::sort(id.begin(), id.end());
  const auto k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(id.size()) - 1e-9));
  const double t = id[std::max<std::size_t>(k, 1) - 1];
  const auto fn = std::count_if(ood_scores.begin(), ood_scores.end(), [t](double v) { return v <= t; });
  return static_cast<double>(fn) / static_cast<double>(ood_scores.size());
}

double rate_at_operating_point(const ScoreSet& s, OperatingPoint point) {
  return rate_at_operating_point(s.id_scores, s.ood_scores, point);
}

ScoreStats pooled_stats(const ScoreSet& s) {
  s.validate();
  const double n = static_cast<double>(s.id_scores.size() + s.ood_scores.size());
  double sum = std::accumulate(s.id_scores.begin(), s.id_scores.end(), 0.0);
  sum = std::accumulate(s.ood_scores.begin(), s.ood_scores.end(), sum);
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : s.id_scores) ss += (v - mean) * (v - mean);
  for (double v : s.ood_scores) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

std::vector<double> z_score_normalize(std::span<const double> scores, double mean, double std) {
  if (!(std > 0.0)) throw ValidationError("z-score reference std must be positive");
  std::vector<double> out;
  out.reserve(scores.size());
  for (double v : scores) out.push_back((v - mean) / std);
  return out;
}

}  // namespace degmon
