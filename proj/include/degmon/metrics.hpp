#pragma once

#include <span>
#include <string>
#include <vector>

namespace degmon {

/// Scores of one comparison; larger = more degraded, degraded is positive.
struct ScoreSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
  std::string monitor_id;
  std::string corruption_id;
  int severity = 0;

  /// Both classes non-empty, all values finite.
  void validate() const;
};

/// (wins + 0.5 ties) / (n_id n_ood) via midranks.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);
double auroc(const ScoreSet& s);

enum class OperatingPoint {
  kTpr95,  // FPR at the largest threshold t with frac(ood >= t) >= 0.95
  kTnr95,  // FNR at the smallest threshold t with frac(id <= t) >= 0.95
};

double rate_at_operating_point(std::span<const double> id_scores, std::span<const double> ood_scores,
                               OperatingPoint point);
double rate_at_operating_point(const ScoreSet& s, OperatingPoint point);

struct ScoreStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Mean and population standard deviation of the pooled ID + OoD scores.
ScoreStats pooled_stats(const ScoreSet& s);

std::vector<double> z_score_normalize(std::span<const double> scores, double mean, double std);

}  // namespace degmon
