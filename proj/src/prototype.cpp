#include "degmon/prototype.hpp"

#include <string>

#include "degmon/error.hpp"

namespace degmon {

namespace {

Eigen::VectorXd normalized(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm >= 1e-12)) throw NumericalError("prototype has (near-)zero norm");
  return v / norm;
}

Eigen::VectorXd batch_mean(const Eigen::MatrixXd& batch, int dim) {
  if (batch.rows() == 0) throw ValidationError("empty pristine batch");
  if (batch.cols() != dim) {
    throw ValidationError("pristine batch has dimension " + std::to_string(batch.cols()) + ", expected " +
                          std::to_string(dim));
  }
  return batch.colwise().mean().transpose();
}

}  // namespace

PristinePrototype::PristinePrototype(int dim, double momentum, int warmup_epoch)
    : dim_(dim), momentum_(momentum), warmup_epoch_(warmup_epoch) {
  if (dim < 1) throw ConfigError("prototype dimension must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("prototype momentum must lie in [0, 1)");
  if (warmup_epoch < 0) throw ConfigError("warm-up epoch must be >= 0");
}

void PristinePrototype::maybe_init(int epoch, const Eigen::MatrixXd& pristine) {
  if (epoch < warmup_epoch_) return;
  if (initialized_) {
    update(pristine);
    return;
  }
  mu_ = normalized(batch_mean(pristine, dim_));
  initialized_ = true;
}

void PristinePrototype::update(const Eigen::MatrixXd& pristine) {
  if (!initialized_) throw StateError("prototype update before initialisation");
  mu_ = normalized(momentum_ * mu_ + (1.0 - momentum_) * batch_mean(pristine, dim_));
}

void PristinePrototype::restore(const Eigen::VectorXd& mu) {
  if (mu.size() != dim_) throw FormatError("stored prototype has the wrong dimension");
  mu_ = normalized(mu);
  initialized_ = true;
}

double degradation_score(const Eigen::VectorXd& z, const PristinePrototype& proto) {
  if (!proto.initialized()) throw StateError("prototype is not initialised");
  if (z.size() != proto.dim()) throw ValidationError("embedding dimension does not match the prototype");
  return 1.0 - z.dot(proto.mu());
}

bool gate(double score, double tau) { return score <= tau; }

}  // namespace degmon
