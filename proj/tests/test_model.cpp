#include <gtest/gtest.h>

#include <cmath>

#include "degmon/array_store.hpp"
#include "degmon/backbone.hpp"
#include "degmon/error.hpp"
#include "degmon/manifold_head.hpp"
#include "degmon/model.hpp"
#include "degmon/trainer.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"

using namespace degmon;
using namespace degmon::testing;

namespace {

Tensor<double> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(n, c, h, w);
  for (auto& v : t.data) v = standard_normal(rng);
  return t;
}

void randomize(Parameter<double>& p, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  for (auto& v : p.value) v = scale * standard_normal(rng);
}

ProjectionConfig small_projection() {
  ProjectionConfig pc;
  pc.per_layer_dim = 3;
  pc.embed_dim = 5;
  pc.mlp_hidden = 7;
  return pc;
}

}  // namespace

TEST(Backbone, TapShapesFollowStrides) {
  BackboneConfig cfg;
  cfg.widths = {4, 5, 6, 7, 8};
  cfg.tap_stages = {1, 2, 3, 4};
  Backbone<float> bb(cfg);
  bb.init(1);
  const auto fm = bb.extract_features(scene_image(64, 1));
  ASSERT_EQ(fm.maps.size(), 4u);
  const int sizes[] = {32, 16, 8, 4};
  const int channels[] = {4, 5, 6, 7};
  for (int l = 0; l < 4; ++l) {
    EXPECT_EQ(fm.maps[l].h, sizes[l]);
    EXPECT_EQ(fm.maps[l].w, sizes[l]);
    EXPECT_EQ(fm.maps[l].c, channels[l]);
  }
}

TEST(Backbone, PooledStagesKeepTapGeometry) {
  BackboneConfig cfg;
  cfg.widths = {4, 5, 6, 7, 8};
  cfg.pooled_stages = 2;
  Backbone<float> bb(cfg);
  bb.init(1);
  const auto fm = bb.extract_features(scene_image(64, 1));
  EXPECT_EQ(fm.maps[0].h, 32);
  EXPECT_EQ(fm.maps[1].h, 16);
  EXPECT_EQ(fm.maps[3].h, 2);
}

TEST(Backbone, ZeroImageGivesZeroMaps) {
  BackboneConfig cfg;
  cfg.widths = {4, 5, 6, 7, 8};
  Backbone<float> bb(cfg);
  bb.init(3);
  for (const auto& m : bb.extract_features(gray_image(64, 64, 0.0f)).maps) {
    for (float v : m.data) ASSERT_EQ(v, 0.0f);
  }
}

TEST(Backbone, OnePixelChangeReachesFinestTap) {
  BackboneConfig cfg;
  cfg.widths = {4, 5, 6, 7, 8};
  Backbone<float> bb(cfg);
  bb.init(3);
  auto a = scene_image(64, 2);
  auto b = a;
  b.at(10, 10, 0) = 1.0f - b.at(10, 10, 0);
  EXPECT_NE(bb.extract_features(a).maps[0].data, bb.extract_features(b).maps[0].data);
}

TEST(Backbone, RejectsWrongInputSize) {
  BackboneConfig cfg;
  Backbone<float> bb(cfg);
  EXPECT_THROW(bb.extract_features(gray_image(32, 32, 0.1f)), ValidationError);
}

TEST(ExternalFeatures, RoundTripIsBitExact) {
  TempDir dir("features");
  BackboneConfig cfg;
  cfg.widths = {4, 5, 6, 7, 8};
  Backbone<float> bb(cfg);
  bb.init(5);
  const auto fm = bb.extract_features(scene_image(64, 3));
  save_feature_maps(dir / "f.bin", fm);
  const auto back = load_external_features(dir / "f.bin", cfg.tap_config(), 64);
  ASSERT_EQ(back.maps.size(), fm.maps.size());
  for (std::size_t l = 0; l < fm.maps.size(); ++l) EXPECT_EQ(back.maps[l].data, fm.maps[l].data);
}

TEST(ExternalFeatures, MissingTapNamesTheEntry) {
  TempDir dir("features");
  BackboneConfig cfg;
  cfg.widths = {4, 5, 6, 7, 8};
  Backbone<float> bb(cfg);
  bb.init(5);
  auto fm = bb.extract_features(scene_image(64, 3));
  fm.maps.pop_back();
  save_feature_maps(dir / "f.bin", fm);
  try {
    load_external_features(dir / "f.bin", cfg.tap_config(), 64);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("tap3"), std::string::npos);
  }
}

TEST(ExternalFeatures, ExtraArraysAreIgnored) {
  TempDir dir("features");
  BackboneConfig cfg;
  cfg.widths = {4, 5, 6, 7, 8};
  Backbone<float> bb(cfg);
  bb.init(5);
  const auto fm = bb.extract_features(scene_image(64, 3));
  save_feature_maps(dir / "f.bin", fm);
  auto store = ArrayStore::load(dir / "f.bin");
  const float extra[] = {1.0f, 2.0f};
  store.put("tap9", NamedArray::from_f32({2}, extra));
  store.save(dir / "g.bin");
  EXPECT_EQ(load_external_features(dir / "g.bin", cfg.tap_config(), 64).maps.size(), 4u);
}

TEST(Head, IdentityReductionPassesInputThrough) {
  ManifoldHead<double> head({3}, small_projection(), PoolMode::kAttention);
  auto& w = head.reduce_weight(0);
  std::fill(w.value.begin(), w.value.end(), 0.0);
  for (int i = 0; i < 3; ++i) w.value[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  const auto x = random_tensor(2, 3, 4, 4, 1);
  EXPECT_EQ(head.reduce_layer(x, 0).data, x.data);
}

TEST(Head, ReductionMatchesDenseLoop) {
  ProjectionConfig pc = small_projection();
  pc.per_layer_dim = 4;
  ManifoldHead<double> head({8}, pc, PoolMode::kAttention);
  head.init(2);
  const auto x = random_tensor(1, 8, 4, 4, 3);
  const auto r = head.reduce_layer(x, 0);
  const auto& w = head.reduce_weight(0).value;
  for (int o = 0; o < 4; ++o) {
    for (int y = 0; y < 4; ++y) {
      for (int xx = 0; xx < 4; ++xx) {
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) acc += w[static_cast<std::size_t>(o * 8 + c)] * x.at(0, c, y, xx);
        EXPECT_NEAR(r.at(0, o, y, xx), acc, 1e-12);
      }
    }
  }
  Tensor<double> zero(1, 8, 4, 4);
  for (double v : head.reduce_layer(zero, 0).data) EXPECT_EQ(v, 0.0);
}

TEST(Head, UniformScoresGiveAveragePooling) {
  ManifoldHead<double> head({3}, small_projection(), PoolMode::kAttention);
  head.init(1);  // scorer starts at zero
  const auto x = random_tensor(2, 3, 5, 5, 4);
  const auto pooled = head.attention_pool(x, 0);
  for (int i = 0; i < 2; ++i) {
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (int y = 0; y < 5; ++y) {
        for (int xx = 0; xx < 5; ++xx) mean += x.at(i, c, y, xx);
      }
      EXPECT_NEAR(pooled(i, c), mean / 25.0, 1e-12);
    }
  }
}

TEST(Head, DominantScoreSelectsOnePosition) {
  ManifoldHead<double> head({3}, small_projection(), PoolMode::kAttention);
  auto& s = head.score_weight(0);
  s.value = {1.0, 0.0, 0.0};
  Tensor<double> x(1, 3, 2, 2);
  x.at(0, 0, 1, 0) = 1e4;  // channel 0 drives the score
  x.at(0, 1, 1, 0) = 7.0;
  x.at(0, 2, 1, 0) = -3.0;
  const auto pooled = head.attention_pool(x, 0);
  EXPECT_NEAR(pooled(0, 1), 7.0, 1e-9);
  EXPECT_NEAR(pooled(0, 2), -3.0, 1e-9);
}

TEST(Head, AttentionMatchesWeightedSumLoop) {
  ManifoldHead<double> head({3}, small_projection(), PoolMode::kAttention);
  randomize(head.score_weight(0), 8);
  const auto x = random_tensor(2, 3, 3, 4, 9);
  const auto pooled = head.attention_pool(x, 0);
  const auto& ws = head.score_weight(0).value;
  for (int i = 0; i < 2; ++i) {
    std::vector<double> e;
    double total = 0.0;
    for (int y = 0; y < 3; ++y) {
      for (int xx = 0; xx < 4; ++xx) {
        double sc = 0.0;
        for (int c = 0; c < 3; ++c) sc += ws[static_cast<std::size_t>(c)] * x.at(i, c, y, xx);
        e.push_back(std::exp(sc));
        total += e.back();
      }
    }
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int y = 0; y < 3; ++y) {
        for (int xx = 0; xx < 4; ++xx) acc += e[static_cast<std::size_t>(y * 4 + xx)] / total * x.at(i, c, y, xx);
      }
      EXPECT_NEAR(pooled(i, c), acc, 1e-6);
    }
  }
}

TEST(Head, FuseConcatenatesInTapOrder) {
  ProjectionConfig pc = small_projection();
  pc.per_layer_dim = 2;
  ManifoldHead<double> head({2, 2}, pc, PoolMode::kAttention);
  RowMatrix<double> a1(1, 2), a2(1, 2);
  a1 << 1, 0;
  a2 << 0, 1;
  const auto h = head.fuse({a1, a2});
  RowMatrix<double> expected(1, 4);
  expected << 1, 0, 0, 1;
  EXPECT_EQ(h, expected);
  EXPECT_NE(head.fuse({a2, a1}), h);
  EXPECT_DOUBLE_EQ(h.squaredNorm(), a1.squaredNorm() + a2.squaredNorm());
}

TEST(Head, ProjectionIsUnitNorm) {
  ManifoldHead<double> head({3, 3}, small_projection(), PoolMode::kAttention);
  head.init(4);
  Rng rng(5);
  RowMatrix<double> h(10, head.descriptor_dim());
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = standard_normal(rng);
  const auto z = head.project(h);
  for (Eigen::Index i = 0; i < z.rows(); ++i) EXPECT_NEAR(z.row(i).norm(), 1.0, 1e-6);
}

TEST(Head, HomogeneousHeadIsScaleInvariant) {
  ProjectionConfig pc = small_projection();
  pc.mlp_activation = Activation::kRelu;
  ManifoldHead<double> head({3, 3}, pc, PoolMode::kAttention);
  head.init(4);  // biases start at zero
  Rng rng(6);
  RowMatrix<double> h(3, head.descriptor_dim());
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = standard_normal(rng);
  const RowMatrix<double> h2 = 2.0 * h;
  EXPECT_LT((head.project(h) - head.project(h2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Head, ProjectionGradientMatchesFiniteDifferences) {
  ManifoldHead<double> head({3, 3}, small_projection(), PoolMode::kAttention);
  head.init(7);
  randomize(head.mlp1_bias(), 8, 0.1);
  randomize(head.mlp2_bias(), 9, 0.1);
  Rng rng(10);
  RowMatrix<double> h(4, head.descriptor_dim()), c(4, head.config().embed_dim);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = standard_normal(rng);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = standard_normal(rng);
  // Scalar objective sum(c .* z); only the MLP is exercised.
  const auto objective = [&] { return head.project(h).cwiseProduct(c).sum(); };

  const auto x0 = random_tensor(4, 3, 1, 1, 11);
  std::vector<const Tensor<double>*> maps{&x0, &x0};
  ManifoldHead<double>::Cache cache;
  head.forward(maps, &cache);
  // Rebuild h from the maps so the finite differences see the same descriptor.
  h = cache.project.h;
  for (auto* p : head.parameters()) p->zero_grad();
  head.backward(cache, c);
  const std::vector<Parameter<double>*> mlp{&head.mlp1_weight(), &head.mlp1_bias(), &head.mlp2_weight(),
                                            &head.mlp2_bias()};
  for (const auto& probe : probe_gradients(mlp, objective, 5, 1e-5, 12)) {
    EXPECT_LT(probe.rel_error(), 1e-3) << probe.name << "[" << probe.index << "]";
  }
}

TEST(Model, FullPipelineGradientMatchesFiniteDifferences) {
  auto mc = tiny_model(32);
  EmbeddingModel<double> model(mc);
  model.init(3);
  for (int l = 0; l < model.head().layer_count(); ++l) randomize(model.head().score_weight(l), 20 + l, 0.5);
  auto deg = DegradationConfig::defaults();
  deg.input_size = 32;
  std::vector<TrainingQuad> quads;
  for (int i = 0; i < 2; ++i) {
    quads.push_back(make_training_quad(scene_image(32, 2 * i), scene_image(32, 2 * i + 1), deg, 40 + i));
  }
  for (auto* p : model.parameters()) p->zero_grad();
  contrastive_step(model, quads, true, true);
  const auto loss = [&] { return contrastive_step(model, quads, true, false); };
  const auto probes = probe_gradients(model.parameters(), loss, 2, 1e-4, 5);
  ASSERT_GE(probes.size(), 20u);
  for (const auto& probe : probes) {
    EXPECT_LT(probe.rel_error(), 1e-3) << probe.name << "[" << probe.index << "] analytic " << probe.analytic
                                       << " numeric " << probe.numeric;
  }
}

TEST(Model, LastLayerOnlyUsesDeepestTap) {
  auto mc = tiny_model(32);
  mc.last_layer_only = true;
  EXPECT_EQ(mc.head_taps(), std::vector<int>{3});
  EmbeddingModel<float> model(mc);
  EXPECT_EQ(model.head().layer_count(), 1);
}

TEST(Model, CheckpointRoundTrip) {
  TempDir dir("ckpt");
  EmbeddingModel<float> model(tiny_model(32));
  model.init(9);
  PristinePrototype proto(8, 0.9, 0);
  Eigen::MatrixXd batch = Eigen::MatrixXd::Random(3, 8);
  proto.maybe_init(0, batch);
  save_manifold_checkpoint(dir / "m.bin", model, proto, "abc");
  const auto ck = load_manifold_checkpoint(dir / "m.bin");
  EXPECT_EQ(ck.config_hash, "abc");
  EXPECT_TRUE(ck.prototype.initialized());
  EXPECT_EQ(ck.prototype.mu(), proto.mu());
  const auto a = model.parameters();
  const auto b = ck.model->parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(Model, TruncatedCheckpointIsFormatError) {
  TempDir dir("ckpt");
  EmbeddingModel<float> model(tiny_model(32));
  model.init(9);
  save_manifold_checkpoint(dir / "m.bin", model, PristinePrototype(8, 0.9, 0), "abc");
  std::filesystem::resize_file(dir / "m.bin", std::filesystem::file_size(dir / "m.bin") / 2);
  EXPECT_THROW(load_manifold_checkpoint(dir / "m.bin"), FormatError);
}
