#include <gtest/gtest.h>

#include <cmath>

#include "degmon/error.hpp"
#include "degmon/prototype.hpp"
#include "degmon/rng.hpp"

using namespace degmon;

namespace {

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> r) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST(Prototype, UntouchedBeforeWarmup) {
  PristinePrototype p(2, 0.99, 25);
  p.maybe_init(0, rows({{1, 0}}));
  p.maybe_init(24, rows({{1, 0}}));
  EXPECT_FALSE(p.initialized());
}

TEST(Prototype, InitialisesToNormalisedMean) {
  PristinePrototype p(2, 0.99, 25);
  p.maybe_init(25, rows({{1, 0}, {0, 1}}));
  ASSERT_TRUE(p.initialized());
  EXPECT_NEAR(p.mu()(0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(p.mu()(1), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Prototype, LaterInitCallsUpdate) {
  PristinePrototype p(2, 0.9, 0);
  p.maybe_init(0, rows({{1, 0}}));
  p.maybe_init(1, rows({{0, 1}}));
  const double norm = std::hypot(0.9, 0.1);
  EXPECT_NEAR(p.mu()(0), 0.9 / norm, 1e-15);
  EXPECT_NEAR(p.mu()(1), 0.1 / norm, 1e-15);
}

TEST(Prototype, UpdateAtFixedPointKeepsMu) {
  PristinePrototype p(3, 0.7, 0);
  p.maybe_init(0, rows({{0.2, 0.3, 0.9}}));
  const Eigen::VectorXd before = p.mu();
  p.update(before.transpose());
  EXPECT_LT((p.mu() - before).norm(), 1e-15);
}

TEST(Prototype, ZeroMomentumTracksBatchMean) {
  PristinePrototype p(2, 0.0, 0);
  p.maybe_init(0, rows({{1, 0}}));
  p.update(rows({{0, 3}, {0, 1}}));
  EXPECT_NEAR(p.mu()(0), 0.0, 1e-15);
  EXPECT_NEAR(p.mu()(1), 1.0, 1e-15);
}

TEST(Prototype, HundredStepsMatchScriptedSequence) {
  // Oracle: the same recurrence written out with plain arrays.
  constexpr int kDim = 4;
  const double alpha = 0.95;
  Rng rng(3);
  PristinePrototype p(kDim, alpha, 0);
  double mu[kDim];
  for (int step = 0; step < 100; ++step) {
    Eigen::MatrixXd batch(5, kDim);
    for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = standard_normal(rng) + 0.5;
    double mean[kDim] = {0, 0, 0, 0};
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < kDim; ++c) mean[c] += batch(r, c) / 5.0;
    }
    double next[kDim];
    double norm = 0.0;
    for (int c = 0; c < kDim; ++c) {
      next[c] = step == 0 ? mean[c] : alpha * mu[c] + (1 - alpha) * mean[c];
      norm += next[c] * next[c];
    }
    for (int c = 0; c < kDim; ++c) mu[c] = next[c] / std::sqrt(norm);
    p.maybe_init(step, batch);
  }
  for (int c = 0; c < kDim; ++c) EXPECT_NEAR(p.mu()(c), mu[c], 1e-10);
}

TEST(Prototype, RejectsEmptyOrMismatchedBatches) {
  PristinePrototype p(2, 0.9, 0);
  EXPECT_THROW(p.maybe_init(0, Eigen::MatrixXd(0, 2)), ValidationError);
  EXPECT_THROW(p.maybe_init(0, Eigen::MatrixXd::Ones(2, 3)), ValidationError);
  EXPECT_THROW(p.update(Eigen::MatrixXd::Ones(2, 2)), StateError);
  EXPECT_THROW(PristinePrototype(2, 1.0, 0), ConfigError);
}

TEST(Score, ReferencePoints) {
  PristinePrototype p(3, 0.9, 0);
  p.maybe_init(0, rows({{1, 2, 2}}));
  const Eigen::VectorXd mu = p.mu();
  Eigen::VectorXd orth(3);
  orth << 2, -1, 0;
  orth.normalize();
  EXPECT_NEAR(degradation_score(mu, p), 0.0, 1e-12);
  EXPECT_NEAR(degradation_score(-mu, p), 2.0, 1e-12);
  EXPECT_NEAR(degradation_score(orth, p), 1.0, 1e-12);
}

TEST(Score, UninitialisedPrototypeIsStateError) {
  PristinePrototype p(3, 0.9, 0);
  EXPECT_THROW(degradation_score(Eigen::VectorXd::Ones(3), p), StateError);
}

TEST(Gate, BoundaryIsInclusive) {
  EXPECT_TRUE(gate(0.1, 0.5));
  EXPECT_TRUE(gate(0.5, 0.5));
  EXPECT_FALSE(gate(0.9, 0.5));
  EXPECT_FALSE(gate(std::nextafter(0.5, 1.0), 0.5));
}
