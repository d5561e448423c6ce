#include "degmon/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "degmon/array_store.hpp"
#include "degmon/error.hpp"
#include "degmon/rng.hpp"

namespace degmon {

namespace {

using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMatrixD> as_matrix(Parameter<double>& p) {
  return {p.value.data(), static_cast<Eigen::Index>(p.shape[0]), static_cast<Eigen::Index>(p.shape[1])};
}
Eigen::Map<const RowMatrixD> as_matrix(const Parameter<double>& p) {
  return {p.value.data(), static_cast<Eigen::Index>(p.shape[0]), static_cast<Eigen::Index>(p.shape[1])};
}
Eigen::Map<RowMatrixD> grad_matrix(Parameter<double>& p) {
  return {p.grad.data(), static_cast<Eigen::Index>(p.shape[0]), static_cast<Eigen::Index>(p.shape[1])};
}
Eigen::Map<const Eigen::RowVectorXd> as_row(const Parameter<double>& p) {
  return {p.value.data(), static_cast<Eigen::Index>(p.value.size())};
}
Eigen::Map<Eigen::RowVectorXd> grad_row(Parameter<double>& p) {
  return {p.grad.data(), static_cast<Eigen::Index>(p.grad.size())};
}

void require_finite(const Eigen::MatrixXd& x) {
  if (!x.allFinite()) throw ValidationError("flow input contains non-finite values");
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

Eigen::MatrixXd pool_features(const FeatureMapSet<float>& fm, const std::vector<int>& layers) {
  if (layers.empty()) throw ValidationError("pool_features needs at least one layer");
  int width = 0;
  for (int l : layers) {
    if (l < 0 || l >= static_cast<int>(fm.maps.size())) {
      throw ValidationError("layer " + std::to_string(l) + " outside the " + std::to_string(fm.maps.size()) +
                            " available taps");
    }
    width += fm.maps[l].c;
  }
  const int n = fm.batch();
  Eigen::MatrixXd out(n, width);
  int col = 0;
  for (int l : layers) {
    const auto& t = fm.maps[l];
    const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
    for (int i = 0; i < n; ++i) {
      const float* base = t.sample(i);
      for (int c = 0; c < t.c; ++c) {
        const float* p = base + c * plane;
        double acc = 0.0;
        for (std::size_t k = 0; k < plane; ++k) acc += p[k];
        out(i, col + c) = acc / static_cast<double>(plane);
      }
    }
    col += t.c;
  }
  return out;
}

CouplingBlock::CouplingBlock(const std::string& name, int dim, bool first_half_in, int hidden, double s_max)
    : dim_(dim), s_max_(s_max) {
  if (dim < 2) throw ValidationError("coupling needs dimension >= 2, got " + std::to_string(dim));
  if (hidden < 1) throw ConfigError("coupling hidden width must be >= 1");
  const int half = dim / 2;
  for (int i = 0; i < dim; ++i) ((i < half) == first_half_in ? in_ : out_).push_back(i);
  const auto a = static_cast<std::int64_t>(in_.size());
  const auto b = static_cast<std::int64_t>(out_.size());
  const auto h = static_cast<std::int64_t>(hidden);
  sw1_ = Parameter<double>(name + ".s.w1", {h, a});
  sb1_ = Parameter<double>(name + ".s.b1", {1, h});
  sw2_ = Parameter<double>(name + ".s.w2", {b, h});
  sb2_ = Parameter<double>(name + ".s.b2", {1, b});
  tw1_ = Parameter<double>(name + ".t.w1", {h, a});
  tb1_ = Parameter<double>(name + ".t.b1", {1, h});
  tw2_ = Parameter<double>(name + ".t.w2", {b, h});
  tb2_ = Parameter<double>(name + ".t.b2", {1, b});
}

void CouplingBlock::init(std::uint64_t seed) {
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_.size()));
  for (auto* p : parameters()) std::fill(p->value.begin(), p->value.end(), 0.0);
  for (auto* w : {&sw1_, &tw1_}) {
    for (double& v : w->value) v = scale * standard_normal(rng);
  }
}

Eigen::MatrixXd CouplingBlock::gather(const Eigen::MatrixXd& x, const std::vector<int>& idx) const {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(idx[j]);
  return out;
}

void CouplingBlock::net(const Eigen::MatrixXd& xin, Eigen::MatrixXd& hs, Eigen::MatrixXd& u, Eigen::MatrixXd& ht,
                        Eigen::MatrixXd& t) const {
  hs = ((xin * as_matrix(sw1_).transpose()).rowwise() + as_row(sb1_)).array().tanh();
  u = (hs * as_matrix(sw2_).transpose()).rowwise() + as_row(sb2_);
  ht = ((xin * as_matrix(tw1_).transpose()).rowwise() + as_row(tb1_)).array().tanh();
  t = (ht * as_matrix(tw2_).transpose()).rowwise() + as_row(tb2_);
}

Eigen::MatrixXd CouplingBlock::forward(const Eigen::MatrixXd& x, Eigen::VectorXd& log_det, Cache* cache) const {
  if (x.cols() != dim_) throw ValidationError("coupling input has wrong dimension");
  Eigen::MatrixXd hs, u, ht, t;
  net(gather(x, in_), hs, u, ht, t);
  const Eigen::MatrixXd s = s_max_ * (u / s_max_).array().tanh();
  Eigen::MatrixXd y = x;
  const Eigen::MatrixXd xout = gather(x, out_);
  const Eigen::MatrixXd yout = (xout.array() * s.array().exp() + t.array()).matrix();
  for (std::size_t j = 0; j < out_.size(); ++j) y.col(out_[j]) = yout.col(static_cast<Eigen::Index>(j));
  log_det = s.rowwise().sum();
  if (cache) {
    cache->x = x;
    cache->hs = std::move(hs);
    cache->ht = std::move(ht);
    cache->u = std::move(u);
    cache->s = s;
  }
  return y;
}

Eigen::MatrixXd CouplingBlock::inverse(const Eigen::MatrixXd& y) const {
  if (y.cols() != dim_) throw ValidationError("coupling input has wrong dimension");
  Eigen::MatrixXd hs, u, ht, t;
  net(gather(y, in_), hs, u, ht, t);
  const Eigen::MatrixXd s = s_max_ * (u / s_max_).array().tanh();
  Eigen::MatrixXd x = y;
  const Eigen::MatrixXd yout = gather(y, out_);
  const Eigen::MatrixXd xout = ((yout - t).array() * (-s).array().exp()).matrix();
  for (std::size_t j = 0; j < out_.size(); ++j) x.col(out_[j]) = xout.col(static_cast<Eigen::Index>(j));
  return x;
}

Eigen::MatrixXd CouplingBlock::backward(const Cache& cache, const Eigen::MatrixXd& dy,
                                        const Eigen::VectorXd& dlog_det) {
  const Eigen::MatrixXd xin = gather(cache.x, in_);
  const Eigen::MatrixXd xout = gather(cache.x, out_);
  const Eigen::MatrixXd dyout = gather(dy, out_);
  const Eigen::ArrayXXd es = cache.s.array().exp();

  Eigen::MatrixXd dx = dy;
  const Eigen::MatrixXd dxout = (dyout.array() * es).matrix();
  for (std::size_t j = 0; j < out_.size(); ++j) dx.col(out_[j]) = dxout.col(static_cast<Eigen::Index>(j));

  Eigen::MatrixXd ds = (dyout.array() * xout.array() * es).matrix();
  ds.colwise() += dlog_det;
  const Eigen::MatrixXd du = (ds.array() * (1.0 - cache.s.array().square() / (s_max_ * s_max_))).matrix();
  const Eigen::MatrixXd& dt = dyout;

  grad_matrix(sw2_) += du.transpose() * cache.hs;
  grad_row(sb2_) += du.colwise().sum();
  const Eigen::MatrixXd das = ((du * as_matrix(sw2_)).array() * (1.0 - cache.hs.array().square())).matrix();
  grad_matrix(sw1_) += das.transpose() * xin;
  grad_row(sb1_) += das.colwise().sum();

  grad_matrix(tw2_) += dt.transpose() * cache.ht;
  grad_row(tb2_) += dt.colwise().sum();
  const Eigen::MatrixXd dat = ((dt * as_matrix(tw2_)).array() * (1.0 - cache.ht.array().square())).matrix();
  grad_matrix(tw1_) += dat.transpose() * xin;
  grad_row(tb1_) += dat.colwise().sum();

  const Eigen::MatrixXd dxin = das * as_matrix(sw1_) + dat * as_matrix(tw1_);
  for (std::size_t j = 0; j < in_.size(); ++j) dx.col(in_[j]) += dxin.col(static_cast<Eigen::Index>(j));
  return dx;
}

std::vector<Parameter<double>*> CouplingBlock::parameters() {
  return {&sw1_, &sb1_, &sw2_, &sb2_, &tw1_, &tb1_, &tw2_, &tb2_};
}

std::vector<const Parameter<double>*> CouplingBlock::parameters() const {
  return {&sw1_, &sb1_, &sw2_, &sb2_, &tw1_, &tb1_, &tw2_, &tb2_};
}

void FlowConfig::validate() const {
  if (hidden < 1) throw ConfigError("flow hidden width must be >= 1");
  if (!(s_max > 0.0)) throw ConfigError("flow s_max must be positive");
  if (epochs < 0) throw ConfigError("flow epochs must be >= 0");
  if (batch < 1) throw ConfigError("flow batch must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("flow learning rate must be >= 0");
}

FlowModel::FlowModel(const std::string& name, int dim, const FlowConfig& cfg) : name_(name), dim_(dim), cfg_(cfg) {
  cfg.validate();
  for (int k = 0; k < kBlocks; ++k) {
    blocks_.emplace_back(name + ".block" + std::to_string(k), dim, k % 2 == 0, cfg.hidden, cfg.s_max);
  }
  mean_ = Eigen::VectorXd::Zero(dim);
  std_ = Eigen::VectorXd::Ones(dim);
  init(cfg.seed);
}

void FlowModel::init(std::uint64_t seed) {
  for (int k = 0; k < kBlocks; ++k) blocks_[k].init(combine_seed(seed, static_cast<std::uint64_t>(k)));
}

void FlowModel::fit_standardization(const Eigen::MatrixXd& x) {
  if (x.cols() != dim_) throw ValidationError("feature dimension does not match the flow");
  if (x.rows() < 2) throw ValidationError("standardization needs at least 2 samples");
  require_finite(x);
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  Eigen::VectorXd std(dim_);
  for (int j = 0; j < dim_; ++j) {
    std(j) = std::sqrt((x.col(j).array() - mean(j)).square().mean());
    if (!(std(j) >= 1e-8)) {
      throw ValidationError("feature coordinate " + std::to_string(j) + " of flow '" + name_ +
                            "' is constant (std " + std::to_string(std(j)) + ")");
    }
  }
  set_standardization(mean, std);
}

void FlowModel::set_standardization(Eigen::VectorXd mean, Eigen::VectorXd std) {
  if (mean.size() != dim_ || std.size() != dim_) throw ValidationError("standardization statistics have wrong size");
  if (!(std.array() > 0.0).all()) throw ValidationError("standardization std must be positive");
  mean_ = std::move(mean);
  std_ = std::move(std);
  standardized_ = true;
}

Eigen::MatrixXd FlowModel::standardize(const Eigen::MatrixXd& x) const {
  if (x.cols() != dim_) throw ValidationError("feature dimension does not match the flow");
  return ((x.rowwise() - mean_.transpose()).array().rowwise() / std_.transpose().array()).matrix();
}

Eigen::MatrixXd FlowModel::forward(const Eigen::MatrixXd& x_std, Eigen::VectorXd& log_det) const {
  require_finite(x_std);
  log_det = Eigen::VectorXd::Zero(x_std.rows());
  Eigen::MatrixXd h = x_std;
  Eigen::VectorXd ld;
  for (const auto& b : blocks_) {
    h = b.forward(h, ld, nullptr);
    log_det += ld;
  }
  return h;
}

Eigen::MatrixXd FlowModel::inverse(const Eigen::MatrixXd& z) const {
  Eigen::MatrixXd h = z;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) h = it->inverse(h);
  return h;
}

Eigen::VectorXd FlowModel::nll(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd log_det;
  const Eigen::MatrixXd z = forward(standardize(x), log_det);
  const double log_std = std_.array().log().sum();
  return (0.5 * z.rowwise().squaredNorm()).array() + dim_ * kHalfLog2Pi - log_det.array() + log_std;
}

double FlowModel::mean_nll(const Eigen::MatrixXd& x, bool grad) {
  if (!grad) return nll(x).mean();
  const Eigen::MatrixXd xs = standardize(x);
  require_finite(xs);
  const auto n = static_cast<double>(x.rows());
  std::vector<CouplingBlock::Cache> caches(blocks_.size());
  Eigen::VectorXd log_det = Eigen::VectorXd::Zero(x.rows());
  Eigen::VectorXd ld;
  Eigen::MatrixXd h = xs;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    h = blocks_[k].forward(h, ld, &caches[k]);
    log_det += ld;
  }
  const Eigen::VectorXd per_row =
      (0.5 * h.rowwise().squaredNorm()).array() + dim_ * kHalfLog2Pi - log_det.array() + std_.array().log().sum();
  Eigen::MatrixXd dh = h / n;
  const Eigen::VectorXd dld = Eigen::VectorXd::Constant(x.rows(), -1.0 / n);
  for (std::size_t k = blocks_.size(); k-- > 0;) dh = blocks_[k].backward(caches[k], dh, dld);
  return per_row.mean();
}

std::vector<Parameter<double>*> FlowModel::parameters() {
  std::vector<Parameter<double>*> out;
  for (auto& b : blocks_) {
    for (auto* p : b.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter<double>*> FlowModel::parameters() const {
  std::vector<const Parameter<double>*> out;
  for (const auto& b : blocks_) {
    for (const auto* p : b.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<double> train_flow(FlowModel& flow, const Eigen::MatrixXd& features, const FlowConfig& cfg) {
  cfg.validate();
  if (features.rows() < 2) throw ValidationError("flow training needs at least 2 samples");
  flow.fit_standardization(features);
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  Adam<double> adam(flow.parameters(), adam_cfg);

  std::vector<double> history{flow.mean_nll(features, false)};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(features.rows()));
  Rng rng(combine_seed(cfg.seed, fnv1a64("flow-shuffle")));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t count = std::min(static_cast<std::size_t>(cfg.batch), order.size() - b);
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(count), features.cols());
      for (std::size_t i = 0; i < count; ++i) xb.row(static_cast<Eigen::Index>(i)) = features.row(order[b + i]);
      adam.zero_grad();
      const double loss = flow.mean_nll(xb, true);
      if (!std::isfinite(loss)) throw NumericalError("non-finite flow NLL at epoch " + std::to_string(epoch));
      adam.step();
    }
    history.push_back(flow.mean_nll(features, false));
  }
  flow.mark_trained();
  return history;
}

double nll_score(const FlowModel& flow, const Eigen::VectorXd& x) {
  if (!flow.trained()) throw StateError("flow '" + flow.name() + "' has not been trained");
  return flow.nll(x.transpose())(0);
}

double aggregate_standardized(const std::vector<double>& layer_nll, const std::vector<ScoreStats>& stats) {
  if (layer_nll.size() != stats.size()) throw ValidationError("one score statistic per layer is required");
  double total = 0.0;
  for (std::size_t l = 0; l < layer_nll.size(); ++l) {
    if (!(stats[l].std > 0.0)) throw ValidationError("layer score std must be positive");
    total += (layer_nll[l] - stats[l].mean) / stats[l].std;
  }
  return total;
}

Eigen::VectorXd MultiScaleFlow::score(const std::vector<Eigen::MatrixXd>& pooled) const {
  if (flows.size() != layers.size() || stats.size() != layers.size()) {
    throw ValidationError("multi-scale monitor needs one flow and one statistic per layer");
  }
  if (pooled.size() != flows.size()) {
    throw ValidationError("expected pooled features for " + std::to_string(flows.size()) + " layers, got " +
                          std::to_string(pooled.size()));
  }
  if (flows.empty()) throw ValidationError("multi-scale monitor has no layers");
  std::vector<Eigen::VectorXd> per_layer;
  for (std::size_t l = 0; l < flows.size(); ++l) {
    if (!flows[l].trained()) throw StateError("flow '" + flows[l].name() + "' has not been trained");
    per_layer.push_back(flows[l].nll(pooled[l]));
  }
  const Eigen::Index n = per_layer.front().size();
  Eigen::VectorXd out(n);
  std::vector<double> row(flows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < flows.size(); ++l) row[l] = per_layer[l](i);
    out(i) = aggregate_standardized(row, stats);
  }
  return out;
}

void save_flows(const std::filesystem::path& path, const std::vector<const FlowModel*>& flows,
                const nlohmann::json& meta) {
  ArrayStore store;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto* f : flows) {
    if (!f->trained()) throw StateError("refusing to save untrained flow '" + f->name() + "'");
    for (const auto* p : f->parameters()) store.put(p->name, NamedArray::from_f64(p->shape, p->value));
    const auto d = static_cast<std::int64_t>(f->dim());
    const auto n = static_cast<std::size_t>(d);
    store.put(f->name() + ".mean", NamedArray::from_f64({d}, std::span<const double>(f->mean().data(), n)));
    store.put(f->name() + ".std", NamedArray::from_f64({d}, std::span<const double>(f->stddev().data(), n)));
    entries.push_back({{"name", f->name()},
                       {"dim", f->dim()},
                       {"hidden", f->config().hidden},
                       {"s_max", f->config().s_max}});
  }
  store.set_metadata({{"kind", "degmon.flows"}, {"version", 1}, {"flows", entries}, {"meta", meta}});
  store.save(path);
}

LoadedFlows load_flows(const std::filesystem::path& path) {
  const ArrayStore store = ArrayStore::load(path);
  const auto meta = store.metadata();
  if (meta.value("kind", "") != "degmon.flows") throw FormatError(path.string() + " is not a flow checkpoint");
  LoadedFlows out;
  out.meta = meta.value("meta", nlohmann::json::object());
  for (const auto& e : meta.at("flows")) {
    FlowConfig cfg;
    cfg.hidden = e.at("hidden").get<int>();
    cfg.s_max = e.at("s_max").get<double>();
    const auto name = e.at("name").get<std::string>();
    FlowModel flow(name, e.at("dim").get<int>(), cfg);
    for (auto* p : flow.parameters()) {
      const auto& arr = store.get(p->name);
      if (arr.shape != p->shape) throw FormatError("array '" + p->name + "' has an unexpected shape");
      const auto values = arr.to_f64();
      p->value.assign(values.begin(), values.end());
    }
    const auto mean = store.get(name + ".mean").to_f64();
    const auto std = store.get(name + ".std").to_f64();
    if (static_cast<int>(mean.size()) != flow.dim() || static_cast<int>(std.size()) != flow.dim()) {
      throw FormatError("standardization statistics of '" + name + "' have the wrong size");
    }
    flow.set_standardization(Eigen::Map<const Eigen::VectorXd>(mean.data(), flow.dim()),
                             Eigen::Map<const Eigen::VectorXd>(std.data(), flow.dim()));
    flow.mark_trained();
    out.flows.push_back(std::move(flow));
  }
  return out;
}

}  // namespace degmon
