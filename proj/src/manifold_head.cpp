#include "degmon/manifold_head.hpp"

#include <cmath>
#include <string>

#include "degmon/error.hpp"
#include "degmon/rng.hpp"

namespace degmon {

std::string_view pool_mode_name(PoolMode m) { return m == PoolMode::kAttention ? "attention" : "gap"; }

PoolMode parse_pool_mode(std::string_view name) {
  if (name == "attention") return PoolMode::kAttention;
  if (name == "gap") return PoolMode::kGap;
  throw ConfigError("unknown pooling mode '" + std::string(name) + "' (expected attention|gap)");
}

void ProjectionConfig::validate() const {
  if (per_layer_dim < 1 || embed_dim < 1 || mlp_hidden < 1) {
    throw ConfigError("projection dimensions must be >= 1");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

template <typename T>
ManifoldHead<T>::ManifoldHead(std::vector<int> tap_channels, ProjectionConfig cfg, PoolMode pool)
    : channels_(std::move(tap_channels)), cfg_(cfg), pool_(pool) {
  cfg_.validate();
  if (channels_.empty()) throw ConfigError("head needs at least one input layer");
  const int d = cfg_.per_layer_dim;
  for (std::size_t l = 0; l < channels_.size(); ++l) {
    reduce_.emplace_back("head.reduce" + std::to_string(l) + ".weight", std::vector<std::int64_t>{d, channels_[l]});
    score_.emplace_back("head.score" + std::to_string(l) + ".weight", std::vector<std::int64_t>{d});
    score_.back().trainable = pool_ == PoolMode::kAttention;
  }
  mlp1_w_ = Parameter<T>("head.mlp1.weight", {cfg_.mlp_hidden, descriptor_dim()});
  mlp1_b_ = Parameter<T>("head.mlp1.bias", {cfg_.mlp_hidden});
  mlp2_w_ = Parameter<T>("head.mlp2.weight", {cfg_.embed_dim, cfg_.mlp_hidden});
  mlp2_b_ = Parameter<T>("head.mlp2.bias", {cfg_.embed_dim});
}

template <typename T>
void ManifoldHead<T>::init(std::uint64_t seed) {
  Rng rng(mix64(seed));
  auto fill = [&rng](Parameter<T>& p, double stddev) {
    for (auto& v : p.value) v = static_cast<T>(stddev * standard_normal(rng));
  };
  for (std::size_t l = 0; l < reduce_.size(); ++l) {
    fill(reduce_[l], 1.0 / std::sqrt(static_cast<double>(channels_[l])));
    std::fill(score_[l].value.begin(), score_[l].value.end(), T(0));
  }
  fill(mlp1_w_, std::sqrt(2.0 / descriptor_dim()));
  fill(mlp2_w_, std::sqrt(1.0 / cfg_.mlp_hidden));
  std::fill(mlp1_b_.value.begin(), mlp1_b_.value.end(), T(0));
  std::fill(mlp2_b_.value.begin(), mlp2_b_.value.end(), T(0));
}

template <typename T>
Tensor<T> ManifoldHead<T>::reduce_layer(const Tensor<T>& map, int layer) const {
  if (layer < 0 || layer >= layer_count()) throw ValidationError("layer index out of range");
  const int c = channels_[static_cast<std::size_t>(layer)];
  if (map.c != c) throw ValidationError("layer " + std::to_string(layer) + " expects " + std::to_string(c) + " channels");
  const int d = cfg_.per_layer_dim;
  const auto p = static_cast<Eigen::Index>(map.plane());
  Tensor<T> out(map.n, d, map.h, map.w);
  Eigen::Map<const RowMatrix<T>> wmat(reduce_[static_cast<std::size_t>(layer)].value.data(), d, c);
  for (int i = 0; i < map.n; ++i) {
    Eigen::Map<const RowMatrix<T>> f(map.sample(i), c, p);
    Eigen::Map<RowMatrix<T>> r(out.sample(i), d, p);
    r.noalias() = wmat * f;
  }
  return out;
}

template <typename T>
RowMatrix<T> ManifoldHead<T>::attention_pool(const Tensor<T>& reduced, int layer, RowMatrix<T>* weights) const {
  const int d = cfg_.per_layer_dim;
  if (reduced.c != d) throw ValidationError("attention_pool expects d channels");
  const auto p = static_cast<Eigen::Index>(reduced.plane());
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> ws(score_[static_cast<std::size_t>(layer)].value.data(), d);
  RowMatrix<T> pooled(reduced.n, d);
  if (weights) weights->resize(reduced.n, p);
  Eigen::Matrix<T, 1, Eigen::Dynamic> scores(p);
  for (int i = 0; i < reduced.n; ++i) {
    Eigen::Map<const RowMatrix<T>> r(reduced.sample(i), d, p);
    scores.noalias() = ws * r;
    const T peak = scores.maxCoeff();
    scores = (scores.array() - peak).exp();
    scores /= scores.sum();
    pooled.row(i).noalias() = (r * scores.transpose()).transpose();
    if (weights) weights->row(i) = scores;
  }
  return pooled;
}

template <typename T>
RowMatrix<T> ManifoldHead<T>::fuse(const std::vector<RowMatrix<T>>& pooled) const {
  if (static_cast<int>(pooled.size()) != layer_count()) {
    throw ValidationError("fuse expects " + std::to_string(layer_count()) + " vectors, got " +
                          std::to_string(pooled.size()));
  }
  const int d = cfg_.per_layer_dim;
  const auto n = pooled.front().rows();
  RowMatrix<T> h(n, descriptor_dim());
  for (std::size_t l = 0; l < pooled.size(); ++l) {
    if (pooled[l].cols() != d || pooled[l].rows() != n) throw ValidationError("fuse: dimension mismatch");
    h.block(0, static_cast<Eigen::Index>(l) * d, n, d) = pooled[l];
  }
  return h;
}

template <typename T>
RowMatrix<T> ManifoldHead<T>::project(const RowMatrix<T>& h, ProjectCache* cache) const {
  if (h.cols() != descriptor_dim()) throw ValidationError("project: descriptor has the wrong dimension");
  Eigen::Map<const RowMatrix<T>> w1(mlp1_w_.value.data(), cfg_.mlp_hidden, descriptor_dim());
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b1(mlp1_b_.value.data(), cfg_.mlp_hidden);
  Eigen::Map<const RowMatrix<T>> w2(mlp2_w_.value.data(), cfg_.embed_dim, cfg_.mlp_hidden);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b2(mlp2_b_.value.data(), cfg_.embed_dim);

  RowMatrix<T> pre = h * w1.transpose();
  pre.rowwise() += b1;
  RowMatrix<T> act = pre.unaryExpr([a = cfg_.mlp_activation](T v) { return activate(a, v); });
  RowMatrix<T> y = act * w2.transpose();
  y.rowwise() += b2;
  RowMatrix<T> z(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const T norm = y.row(i).norm();
    if (!(norm >= T(1e-12))) throw NumericalError("projection output has (near-)zero norm; cannot normalise");
    z.row(i) = y.row(i) / norm;
  }
  if (cache) {
    cache->h = h;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->y = std::move(y);
    cache->z = z;
  }
  return z;
}

template <typename T>
RowMatrix<T> ManifoldHead<T>::forward(const std::vector<const Tensor<T>*>& maps, Cache* cache) const {
  if (static_cast<int>(maps.size()) != layer_count()) throw ValidationError("head: wrong number of feature maps");
  std::vector<RowMatrix<T>> pooled;
  if (cache) cache->layers.assign(maps.size(), {});
  for (int l = 0; l < layer_count(); ++l) {
    Tensor<T> reduced = reduce_layer(*maps[static_cast<std::size_t>(l)], l);
    if (cache) {
      auto& lc = cache->layers[static_cast<std::size_t>(l)];
      lc.input = *maps[static_cast<std::size_t>(l)];
      lc.pooled = attention_pool(reduced, l, &lc.weights);
      lc.reduced = std::move(reduced);
      pooled.push_back(lc.pooled);
    } else {
      pooled.push_back(attention_pool(reduced, l));
    }
  }
  return project(fuse(pooled), cache ? &cache->project : nullptr);
}

template <typename T>
RowMatrix<T> ManifoldHead<T>::project_backward(const ProjectCache& c, const RowMatrix<T>& dz) {
  const auto n = dz.rows();
  // z = y / |y|  =>  dy = (dz - z (z . dz)) / |y|
  RowMatrix<T> dy(n, cfg_.embed_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T norm = c.y.row(i).norm();
    const T dot = c.z.row(i).dot(dz.row(i));
    dy.row(i) = (dz.row(i) - c.z.row(i) * dot) / norm;
  }
  Eigen::Map<const RowMatrix<T>> w1(mlp1_w_.value.data(), cfg_.mlp_hidden, descriptor_dim());
  Eigen::Map<const RowMatrix<T>> w2(mlp2_w_.value.data(), cfg_.embed_dim, cfg_.mlp_hidden);
  Eigen::Map<RowMatrix<T>> gw1(mlp1_w_.grad.data(), cfg_.mlp_hidden, descriptor_dim());
  Eigen::Map<RowMatrix<T>> gw2(mlp2_w_.grad.data(), cfg_.embed_dim, cfg_.mlp_hidden);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb1(mlp1_b_.grad.data(), cfg_.mlp_hidden);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb2(mlp2_b_.grad.data(), cfg_.embed_dim);

  gw2.noalias() += dy.transpose() * c.act;
  gb2 += dy.colwise().sum();
  RowMatrix<T> dpre = dy * w2;
  const auto act = cfg_.mlp_activation;
  dpre.array() *= c.pre.unaryExpr([act](T v) { return activate_grad(act, v); }).array();
  gw1.noalias() += dpre.transpose() * c.h;
  gb1 += dpre.colwise().sum();
  return dpre * w1;
}

template <typename T>
std::vector<Tensor<T>> ManifoldHead<T>::backward(const Cache& cache, const RowMatrix<T>& dz) {
  const RowMatrix<T> dh = project_backward(cache.project, dz);
  const int d = cfg_.per_layer_dim;
  std::vector<Tensor<T>> grads;
  for (int l = 0; l < layer_count(); ++l) {
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];
    const auto p = static_cast<Eigen::Index>(lc.reduced.plane());
    const int c = channels_[static_cast<std::size_t>(l)];
    auto& red = reduce_[static_cast<std::size_t>(l)];
    auto& sc = score_[static_cast<std::size_t>(l)];
    Eigen::Map<const RowMatrix<T>> wred(red.value.data(), d, c);
    Eigen::Map<RowMatrix<T>> gred(red.grad.data(), d, c);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> ws(sc.value.data(), d);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gws(sc.grad.data(), d);
    Tensor<T> dmap(lc.input.n, c, lc.input.h, lc.input.w);
    RowMatrix<T> dr(d, p);
    for (int i = 0; i < lc.input.n; ++i) {
      Eigen::Map<const RowMatrix<T>> r(lc.reduced.sample(i), d, p);
      Eigen::Map<const RowMatrix<T>> f(lc.input.sample(i), c, p);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> da = dh.block(i, static_cast<Eigen::Index>(l) * d, 1, d).transpose();
      const Eigen::Matrix<T, 1, Eigen::Dynamic> w = lc.weights.row(i);
      // a = R w, w = softmax(ws^T R)
      const Eigen::Matrix<T, 1, Eigen::Dynamic> rda = da.transpose() * r;  // v_p . da
      const T ada = lc.pooled.row(i).dot(da.transpose());
      const Eigen::Matrix<T, 1, Eigen::Dynamic> ds = (w.array() * (rda.array() - ada)).matrix();
      dr.noalias() = da * w + ws * ds;
      if (sc.trainable) gws.noalias() += r * ds.transpose();
      if (red.trainable) gred.noalias() += dr * f.transpose();
      Eigen::Map<RowMatrix<T>> df(dmap.sample(i), c, p);
      df.noalias() = wred.transpose() * dr;
    }
    grads.push_back(std::move(dmap));
  }
  return grads;
}

template <typename T>
std::vector<Parameter<T>*> ManifoldHead<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& p : reduce_) out.push_back(&p);
  for (auto& p : score_) out.push_back(&p);
  out.insert(out.end(), {&mlp1_w_, &mlp1_b_, &mlp2_w_, &mlp2_b_});
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ManifoldHead<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : reduce_) out.push_back(&p);
  for (const auto& p : score_) out.push_back(&p);
  out.insert(out.end(), {&mlp1_w_, &mlp1_b_, &mlp2_w_, &mlp2_b_});
  return out;
}

template class ManifoldHead<float>;
template class ManifoldHead<double>;

}  // namespace degmon
