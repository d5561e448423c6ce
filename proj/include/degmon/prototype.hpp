#pragma once

#include <Eigen/Core>

namespace degmon {

/// EMA estimate of the mean pristine embedding, kept at unit norm.
class PristinePrototype {
 public:
  PristinePrototype() = default;
  PristinePrototype(int dim, double momentum, int warmup_epoch);

  int dim() const { return dim_; }
  double momentum() const { return momentum_; }
  int warmup_epoch() const { return warmup_epoch_; }
  bool initialized() const { return initialized_; }
  const Eigen::VectorXd& mu() const { return mu_; }

  /// No-op before the warm-up epoch; the first eligible call initialises mu
  /// from the batch mean and later calls route to update().
  void maybe_init(int epoch, const Eigen::MatrixXd& pristine);

  /// mu <- normalize(alpha * mu + (1 - alpha) * batch mean).
  void update(const Eigen::MatrixXd& pristine);

  /// Restores a persisted prototype.
  void restore(const Eigen::VectorXd& mu);

 private:
  int dim_ = 0;
  double momentum_ = 0.99;
  int warmup_epoch_ = 0;
  bool initialized_ = false;
  Eigen::VectorXd mu_;
};

/// 1 - z.mu; larger means further from the pristine operating point.
double degradation_score(const Eigen::VectorXd& z, const PristinePrototype& proto);

/// Accepts iff score <= tau.
bool gate(double score, double tau);

}  // namespace degmon
