#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "degmon/error.hpp"
#include "degmon/flow.hpp"
#include "flow_oracle.hpp"
#include "test_util.hpp"

using namespace degmon;
using namespace degmon::testing;

namespace {

FlowConfig small_flow(std::uint64_t seed = 1) {
  FlowConfig cfg;
  cfg.hidden = 16;
  cfg.epochs = 200;
  cfg.batch = 64;
  cfg.learning_rate = 3e-3;
  cfg.seed = seed;
  return cfg;
}

FlowModel unit_flow(int dim) {
  FlowModel f("f", dim, small_flow());
  f.set_standardization(Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim));
  return f;
}

}  // namespace

TEST(PoolFeatures, ConstantMapGivesConstantVector) {
  FeatureMapSet<float> fm;
  fm.maps.emplace_back(1, 3, 4, 4, 0.75f);
  const auto v = pool_features(fm, {0});
  ASSERT_EQ(v.cols(), 3);
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(v(0, c), 0.75);
}

TEST(PoolFeatures, SelectionWidthAndLoopOracle) {
  Rng rng(2);
  FeatureMapSet<float> fm;
  fm.maps.emplace_back(2, 16, 4, 4);
  fm.maps.emplace_back(2, 32, 2, 2);
  for (auto& m : fm.maps) {
    for (auto& v : m.data) v = static_cast<float>(standard_normal(rng));
  }
  const auto v = pool_features(fm, {0, 1});
  ASSERT_EQ(v.cols(), 48);
  for (int i = 0; i < 2; ++i) {
    for (int c = 0; c < 32; ++c) {
      double acc = 0.0;
      for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) acc += fm.maps[1].at(i, c, y, x);
      }
      EXPECT_NEAR(v(i, 16 + c), acc / 4.0, 1e-6);
    }
  }
}

TEST(Flow, FreshFlowIsIdentity) {
  const auto flow = unit_flow(5);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(7, 5);
  Eigen::VectorXd ld;
  EXPECT_EQ(flow.forward(x, ld), x);
  EXPECT_EQ(ld, Eigen::VectorXd::Zero(7));
}

TEST(Flow, IdentityNllAtOriginAndRadialGrowth) {
  const auto flow = unit_flow(4);
  EXPECT_NEAR(flow.nll(Eigen::MatrixXd::Zero(1, 4))(0), 2.0 * std::log(2.0 * std::numbers::pi), 1e-12);
  Eigen::MatrixXd r(3, 4);
  r.row(0).setConstant(0.1);
  r.row(1).setConstant(0.5);
  r.row(2).setConstant(1.5);
  const auto nll = flow.nll(r);
  EXPECT_LT(nll(0), nll(1));
  EXPECT_LT(nll(1), nll(2));
}

TEST(Flow, RoundTripOnThousandVectors) {
  auto flow = unit_flow(6);
  scramble(flow, 3, 0.5);
  Rng rng(4);
  Eigen::MatrixXd x(1000, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * standard_normal(rng);
  Eigen::VectorXd ld;
  const Eigen::MatrixXd back = flow.inverse(flow.forward(x, ld));
  EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Flow, LogDetMatchesNumericJacobian) {
  for (int d = 2; d <= 6; ++d) {
    auto flow = unit_flow(d);
    scramble(flow, 10 + d, 0.4);
    Rng rng(static_cast<std::uint64_t>(d));
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::VectorXd x(d);
      for (int i = 0; i < d; ++i) x(i) = standard_normal(rng);
      Eigen::VectorXd ld;
      flow.forward(x.transpose(), ld);
      EXPECT_NEAR(ld(0), numeric_log_det(flow, x, 1e-5), 1e-4) << "d=" << d;
    }
  }
}

TEST(Flow, NllMatchesScalarOracleAfterTraining) {
  FlowModel flow("toy", 2, small_flow(5));
  const auto data = two_blob_data(400, 6);
  train_flow(flow, data, small_flow(5));
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x(2);
    x << 3.0 * standard_normal(rng), 3.0 * standard_normal(rng);
    EXPECT_NEAR(nll_score(flow, x), flow_nll_oracle(flow, x), 1e-6);
  }
}

TEST(Flow, TrainingLowersNllOnTwoBlobs) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    FlowModel flow("toy", 2, small_flow(seed));
    const auto hist = train_flow(flow, two_blob_data(400, seed), small_flow(seed));
    EXPECT_LT(hist.back(), hist.front() - 0.5) << "seed " << seed;
  }
}

TEST(Flow, DensityIntegratesToOne) {
  FlowModel flow("toy", 2, small_flow(2));
  train_flow(flow, two_blob_data(400, 8), small_flow(2));
  // Midpoint rule on a box that holds essentially all the mass.
  const double lo = -8.0, hi = 8.0;
  const int cells = 400;
  const double step = (hi - lo) / cells;
  Eigen::MatrixXd grid(cells * cells, 2);
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      grid(i * cells + j, 0) = lo + (i + 0.5) * step;
      grid(i * cells + j, 1) = lo + (j + 0.5) * step;
    }
  }
  const double mass = (-flow.nll(grid).array()).exp().sum() * step * step;
  EXPECT_NEAR(mass, 1.0, 0.02);
}

TEST(Flow, ZeroLearningRateKeepsParameters) {
  auto cfg = small_flow(3);
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  FlowModel flow("toy", 2, cfg);
  std::vector<AlignedVector<double>> before;
  for (const auto* p : flow.parameters()) before.push_back(p->value);
  train_flow(flow, two_blob_data(100, 1), cfg);
  const auto after = flow.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i]->value, before[i]);
}

TEST(Flow, SameSeedSameParameters) {
  auto cfg = small_flow(4);
  cfg.epochs = 5;
  FlowModel a("toy", 2, cfg), b("toy", 2, cfg);
  const auto data = two_blob_data(100, 2);
  train_flow(a, data, cfg);
  train_flow(b, data, cfg);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
}

TEST(Flow, UntrainedScoreIsStateError) {
  FlowModel flow("toy", 2, small_flow());
  EXPECT_THROW(nll_score(flow, Eigen::VectorXd::Zero(2)), StateError);
}

TEST(Flow, ConstantCoordinateIsRejected) {
  FlowModel flow("toy", 2, small_flow());
  Eigen::MatrixXd x = two_blob_data(50, 1);
  x.col(1).setConstant(0.3);
  EXPECT_THROW(flow.fit_standardization(x), ValidationError);
}

TEST(Flow, CheckpointRoundTrip) {
  TempDir dir("flows");
  auto cfg = small_flow(6);
  cfg.epochs = 5;
  FlowModel flow("toy", 2, cfg);
  const auto data = two_blob_data(100, 3);
  train_flow(flow, data, cfg);
  save_flows(dir / "f.bin", {&flow}, {{"note", "x"}});
  const auto loaded = load_flows(dir / "f.bin");
  ASSERT_EQ(loaded.flows.size(), 1u);
  EXPECT_EQ(loaded.meta.at("note"), "x");
  EXPECT_EQ(loaded.flows[0].nll(data), flow.nll(data));
}

TEST(MultiScale, SingleLayerEqualsStandardisedNll) {
  FlowModel flow("toy", 2, small_flow());
  const auto data = two_blob_data(60, 4);
  auto cfg = small_flow();
  cfg.epochs = 2;
  train_flow(flow, data, cfg);
  MultiScaleFlow ms{{0}, {flow}, {{1.5, 2.0}}};
  const auto s = ms.score({data});
  const auto nll = flow.nll(data);
  for (Eigen::Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s(i), (nll(i) - 1.5) / 2.0, 1e-12);
}

TEST(MultiScale, AggregationRule) {
  EXPECT_DOUBLE_EQ(aggregate_standardized({1.0, -0.5}, {{0.0, 1.0}, {0.0, 1.0}}), 0.5);
  EXPECT_DOUBLE_EQ(aggregate_standardized({3.0, 1.0}, {{1.0, 2.0}, {2.0, 2.0}}),
                   aggregate_standardized({1.0, 3.0}, {{2.0, 2.0}, {1.0, 2.0}}));
}
