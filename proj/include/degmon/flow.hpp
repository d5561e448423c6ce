#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "degmon/backbone.hpp"
#include "degmon/metrics.hpp"
#include "degmon/optimizer.hpp"
#include "degmon/tensor.hpp"

namespace degmon {

/// Global average of each selected tap, concatenated in selection order.
/// Returns one row per sample.
Eigen::MatrixXd pool_features(const FeatureMapSet<float>& fm, const std::vector<int>& layers);

/// Affine coupling: the coordinates outside the mask are scaled by
/// exp(s_max * tanh(S(x_in) / s_max)) and shifted by T(x_in); masked-in ones pass
/// through. S and T are one-hidden-layer tanh MLPs with zero-initialised
/// output layers, so a fresh block is the identity.
class CouplingBlock {
 public:
  struct Cache {
    Eigen::MatrixXd x;       // block input
    Eigen::MatrixXd hs, ht;  // hidden activations
    Eigen::MatrixXd u;       // pre-squash scale
    Eigen::MatrixXd s;       // squashed scale
  };

  CouplingBlock(const std::string& name, int dim, bool first_half_in, int hidden, double s_max);

  void init(std::uint64_t seed);

  const std::vector<int>& in_index() const { return in_; }
  const std::vector<int>& out_index() const { return out_; }

  /// Rows are samples; `log_det` receives one value per row.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Eigen::VectorXd& log_det, Cache* cache) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& y) const;

  /// Given dL/dy and dL/d(log_det) per row, accumulates parameter gradients
  /// and returns dL/dx.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& dy, const Eigen::VectorXd& dlog_det);

  std::vector<Parameter<double>*> parameters();
  std::vector<const Parameter<double>*> parameters() const;

 private:
  Eigen::MatrixXd gather(const Eigen::MatrixXd& x, const std::vector<int>& idx) const;
  void net(const Eigen::MatrixXd& xin, Eigen::MatrixXd& hs, Eigen::MatrixXd& u, Eigen::MatrixXd& ht,
           Eigen::MatrixXd& t) const;

  int dim_;
  double s_max_;
  std::vector<int> in_;
  std::vector<int> out_;
  // scale net then shift net: w1 (hidden x in), b1, w2 (out x hidden), b2
  Parameter<double> sw1_, sb1_, sw2_, sb2_;
  Parameter<double> tw1_, tb1_, tw2_, tb2_;
};

struct FlowConfig {
  int hidden = 64;
  double s_max = 3.0;
  int epochs = 200;
  int batch = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Four coupling blocks with alternating halves over standardised features,
/// standard normal base.
class FlowModel {
 public:
  static constexpr int kBlocks = 4;

  FlowModel(const std::string& name, int dim, const FlowConfig& cfg);

  int dim() const { return dim_; }
  bool trained() const { return trained_; }
  const std::string& name() const { return name_; }
  const FlowConfig& config() const { return cfg_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& stddev() const { return std_; }

  void init(std::uint64_t seed);

  /// Per-coordinate mean and std of `x`; a coordinate with std < 1e-8 raises
  /// ValidationError naming it.
  void fit_standardization(const Eigen::MatrixXd& x);
  void set_standardization(Eigen::VectorXd mean, Eigen::VectorXd std);
  Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) const;

  /// Flow on standardised rows; log_det per row.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x_std, Eigen::VectorXd& log_det) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& z) const;

  /// -log p(x) for raw rows, including the standardisation Jacobian.
  Eigen::VectorXd nll(const Eigen::MatrixXd& x) const;

  /// Mean NLL over raw rows; with `grad`, accumulates parameter gradients.
  double mean_nll(const Eigen::MatrixXd& x, bool grad);

  void mark_trained() { trained_ = true; }

  std::vector<Parameter<double>*> parameters();
  std::vector<const Parameter<double>*> parameters() const;

 private:
  std::string name_;
  int dim_;
  FlowConfig cfg_;
  std::vector<CouplingBlock> blocks_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd std_;
  bool standardized_ = false;
  bool trained_ = false;
};

/// Maximum-likelihood training with Adam on minibatches. Returns the mean
/// training NLL before training followed by one value per epoch.
std::vector<double> train_flow(FlowModel& flow, const Eigen::MatrixXd& features, const FlowConfig& cfg);

/// -log p under a trained flow; larger = more degraded.
double nll_score(const FlowModel& flow, const Eigen::VectorXd& x);

/// One flow per layer; scores are per-layer NLLs z-scored with the training
/// statistics, then summed.
struct MultiScaleFlow {
  std::vector<int> layers;
  std::vector<FlowModel> flows;
  std::vector<ScoreStats> stats;

  /// Per-row aggregate score; `pooled[i]` holds the pooled features of
  /// layers[i].
  Eigen::VectorXd score(const std::vector<Eigen::MatrixXd>& pooled) const;
};

/// Aggregation rule shared by MultiScaleFlow::score.
double aggregate_standardized(const std::vector<double>& layer_nll, const std::vector<ScoreStats>& stats);

void save_flows(const std::filesystem::path& path, const std::vector<const FlowModel*>& flows,
                const nlohmann::json& meta);

struct LoadedFlows {
  std::vector<FlowModel> flows;
  nlohmann::json meta;
};

LoadedFlows load_flows(const std::filesystem::path& path);

}  // namespace degmon
