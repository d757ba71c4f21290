#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracle.hpp"
#include "ripeseg/transformer/transformer.hpp"

using namespace ripeseg;
using testing_support::Gen;
using testing_support::max_grad_error;

namespace {

template <class T>
Tensor<T> C(NDArray<T> a) {
  return Tensor<T>::constant(std::move(a));
}

template <class T>
void fill(const Tensor<T>& t, T v) {
  for (auto& x : t.mutable_data()) x = v;
}

NDArray<double> rows_of(const NDArray<double>& a, const std::vector<std::size_t>& order) {
  const auto w = a.shape()[1];
  NDArray<double> out(a.shape());
  for (std::size_t r = 0; r < order.size(); ++r)
    for (std::size_t k = 0; k < w; ++k) out[r * w + k] = a[order[r] * w + k];
  return out;
}

}  // namespace

TEST(PatchConfig, ValidatesDivisibilityAndDepth) {
  EXPECT_NO_THROW(PatchConfig{}.validate());
  EXPECT_THROW((PatchConfig{8, 10, 4, 3, 4}.validate()), ConfigError);
  EXPECT_THROW((PatchConfig{8, 64, 4, 0, 4}.validate()), ConfigError);
}

TEST(PatchSide, FollowsPatchCount) {
  EXPECT_EQ(patch_side(8, 8, 16), 2u);
  EXPECT_EQ(patch_side(64, 64, 64), 8u);
  EXPECT_THROW(patch_side(8, 8, 3), ShapeError);
  EXPECT_THROW(patch_side(8, 8, 2), ShapeError);
}

TEST(PartitionPatches, UnitPatchesAreRowMajorPixels) {
  Graph<float> g;
  auto x = C(NDArray<float>(Shape{2, 2, 1}, std::vector<float>{1, 2, 3, 4}));
  auto p = partition_patches(g, x, 1);
  EXPECT_EQ(p.shape(), (Shape{4, 1}));
  EXPECT_EQ(p.value().vec(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(PartitionPatches, IndivisibleDimsThrow) {
  Graph<float> g;
  EXPECT_THROW(partition_patches(g, C(NDArray<float>(Shape{6, 8, 1})), 4), ShapeError);
}

TEST(PartitionPatches, ReassemblyIsExactInverse) {
  Gen gen(21);
  for (int trial = 0; trial < 25; ++trial) {
    const auto p = gen.index(1, 4), rows = gen.index(1, 3), cols = gen.index(1, 3), c = gen.index(1, 3);
    auto img = gen.array<float>(Shape{rows * p, cols * p, c});
    Graph<float> g;
    auto patches = partition_patches(g, C(img), p);
    EXPECT_EQ(patches.shape(), (Shape{rows * cols, p * p * c}));
    EXPECT_EQ(assemble_patches(patches.value(), rows * p, cols * p, c, p), img);
  }
}

class EmbedTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(5);
    emb = PatchEmbedder<double>::make(store, "e", 12, 4, 8, rng);
  }
  ParameterStore<double> store;
  PatchEmbedder<double> emb;
};

TEST_F(EmbedTest, ZeroPatchesAndPositionsGiveZero) {
  fill(emb.positions, 0.0);
  Graph<double> g;
  auto q = embed(g, C(NDArray<double>(Shape{4, 12})), emb);
  for (double v : q.data()) EXPECT_EQ(v, 0.0);
}

TEST_F(EmbedTest, ZeroPatchesGiveProjectedPositions) {
  Graph<double> g;
  auto q = embed(g, C(NDArray<double>(Shape{4, 12})), emb);
  auto pos = ops::matmul(g, emb.positions, emb.pos_proj);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q.data()[i], pos.data()[i], 1e-12);
}

TEST_F(EmbedTest, EmbeddingIsAdditiveInPatchesAndPositions) {
  Gen gen(22);
  const auto patches = gen.array<double>(Shape{4, 12});
  Graph<double> g;
  auto full = embed(g, C(patches), emb);
  auto pos_only = embed(g, C(NDArray<double>(Shape{4, 12})), emb);
  const auto saved = emb.positions.value();
  fill(emb.positions, 0.0);
  auto patch_only = embed(g, C(patches), emb);
  std::copy(saved.data().begin(), saved.data().end(), emb.positions.mutable_data().begin());
  for (std::size_t i = 0; i < full.size(); ++i)
    EXPECT_NEAR(full.data()[i], pos_only.data()[i] + patch_only.data()[i], 1e-12);
}

TEST_F(EmbedTest, WidthMismatchThrows) {
  Graph<double> g;
  EXPECT_THROW(embed(g, C(NDArray<double>(Shape{4, 11})), emb), ShapeError);
  EXPECT_THROW(embed(g, C(NDArray<double>(Shape{5, 12})), emb), ShapeError);
}

TEST(AttentionHead, ZeroQueryKeyAveragesValues) {
  Gen gen(23);
  const auto v = gen.array<double>(Shape{5, 3});
  Graph<double> g;
  auto a = attention_head(g, C(NDArray<double>(Shape{5, 3})), C(NDArray<double>(Shape{5, 3})), C(v), 12);
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0;
    for (std::size_t r = 0; r < 5; ++r) mean += v[r * 3 + k] / 5;
    for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(a.output.data()[r * 3 + k], mean, 1e-12);
  }
}

TEST(AttentionHead, SingleTokenReturnsValue) {
  Gen gen(24);
  const auto q = gen.array<double>(Shape{1, 4}), k = gen.array<double>(Shape{1, 4}), v = gen.array<double>(Shape{1, 4});
  Graph<double> g;
  auto a = attention_head(g, C(q), C(k), C(v), 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.output.data()[i], v[i], 1e-12);
}

TEST(AttentionHead, IdenticalTokensGiveIdenticalRows) {
  Gen gen(25);
  auto q = gen.array<double>(Shape{3, 4});
  for (std::size_t k = 0; k < 4; ++k) q[4 + k] = q[k];
  auto kk = q;
  const auto v = gen.array<double>(Shape{3, 4});
  Graph<double> g;
  auto a = attention_head(g, C(q), C(kk), C(v), 4);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.output.data()[k], a.output.data()[4 + k], 1e-12);
}

TEST(AttentionHead, LogitsScaleByCSquaredOverRootL) {
  Gen gen(26);
  const std::size_t n = 4, d = 3, l = 12;
  const double c = 1.7;
  auto q = gen.array<double>(Shape{n, d}), k = gen.array<double>(Shape{n, d});
  const auto v = gen.array<double>(Shape{n, d});
  auto qs = q, ks = k;
  for (auto& x : qs.data()) x *= c;
  for (auto& x : ks.data()) x *= c;
  Graph<double> g;
  auto a = attention_head(g, C(qs), C(ks), C(v), l);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logit(n);
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
      logit[j] = c * c * dot / std::sqrt(double(l));
      mx = std::max(mx, logit[j]);
    }
    for (auto& x : logit) z += x = std::exp(x - mx);
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(a.weights.data()[i * n + j], logit[j] / z, 1e-12);
  }
}

TEST(AttentionHead, WeightsAreRowStochastic) {
  Gen gen(27);
  for (int trial = 0; trial < 40; ++trial) {
    const auto n = gen.index(1, 12), d = gen.index(1, 6);
    Graph<float> g;
    auto a = attention_head(g, C(gen.array<float>(Shape{n, d}, -4, 4)), C(gen.array<float>(Shape{n, d}, -4, 4)),
                            C(gen.array<float>(Shape{n, d})), d * gen.index(1, 4));
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(a.weights.data()[r * n + j], 0.0f);
        s += a.weights.data()[r * n + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

class LayerTest : public ::testing::Test {
 protected:
  TransformerLayer<double> make(std::size_t heads, std::uint64_t seed = 9) {
    Rng rng(seed);
    return TransformerLayer<double>::make(store, "layer" + std::to_string(count++), PatchConfig{2, 8, heads, 1, 2},
                                          rng);
  }
  ParameterStore<double> store;
  int count = 0;
};

TEST_F(LayerTest, SingleHeadCmsaIsFullWidthAttention) {
  auto layer = make(1);
  Gen gen(28);
  auto x = C(gen.array<double>(Shape{5, 8}));
  Graph<double> g;
  auto y = cmsa(g, x, layer);
  auto direct = attention_head(g, ops::matmul(g, x, layer.wq), ops::matmul(g, x, layer.wk),
                               ops::matmul(g, x, layer.wv), 8);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], direct.output.data()[i], 1e-12);
}

TEST_F(LayerTest, CmsaRejectsIndivisibleHeads) {
  auto layer = make(4);
  layer.heads = 3;
  Graph<double> g;
  EXPECT_THROW(cmsa(g, C(NDArray<double>(Shape{2, 8})), layer), ConfigError);
}

TEST_F(LayerTest, CmsaIsPermutationEquivariant) {
  auto layer = make(4);
  Gen gen(29);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = gen.index(2, 9);
    const auto x = gen.array<double>(Shape{n, 8});
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), gen.engine());
    Graph<double> g;
    const auto y = cmsa(g, C(x), layer).value();
    const auto yp = cmsa(g, C(rows_of(x, order)), layer).value();
    ASSERT_EQ(yp.shape(), (Shape{n, 8}));
    const auto expected = rows_of(y, order);
    for (std::size_t i = 0; i < yp.size(); ++i) EXPECT_NEAR(yp[i], expected[i], 1e-12);
  }
}

TEST_F(LayerTest, ZeroWeightsLeaveNormalizedResidual) {
  auto layer = make(2);
  for (const auto& t : {layer.wq, layer.wk, layer.wv, layer.ff1.weight, layer.ff1.bias, layer.ff2.weight,
                        layer.ff2.bias})
    fill(t, 0.0);
  Gen gen(30);
  auto x = C(gen.array<double>(Shape{3, 8}));
  Graph<double> g;
  auto y = encoder_layer(g, x, layer);
  auto expected = ops::layernorm(g, x, layer.norm2.gamma, layer.norm2.beta);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], expected.data()[i], 1e-12);
}

TEST_F(LayerTest, EncoderPreservesDims) {
  auto layer = make(4);
  Gen gen(31);
  Graph<double> g;
  EXPECT_EQ(encoder_layer(g, C(gen.array<double>(Shape{7, 8})), layer).shape(), (Shape{7, 8}));
}

TEST_F(LayerTest, EncoderWeightGradientsMatchFiniteDifferences) {
  auto layer = make(2, 12);
  Gen gen(32);
  auto x = C(gen.array<double>(Shape{4, 8}));
  auto proj = C(gen.array<double>(Shape{4, 8}));
  auto f = [&](Graph<double>& g) { return ops::sum(g, ops::mul(g, encoder_layer(g, x, layer), proj)); };
  for (const auto& e : store.parameters()) EXPECT_LE(max_grad_error(e.tensor, f, 1e-5), 1e-3) << e.name;
}

TEST(TransformerStack, DepthOneEqualsSingleEncoderLayer) {
  ParameterStore<double> store;
  Rng rng(3);
  auto stack = TransformerStack<double>::make(store, PatchConfig{2, 8, 2, 1, 2}, 4, 4, 3, rng);
  Gen gen(33);
  auto x = C(gen.array<double>(Shape{4, 4, 3}));
  Graph<double> g;
  auto y = transformer_stack(g, x, stack);
  auto direct = encoder_layer(g, embed(g, partition_patches(g, x, 2), stack.embedder), stack.layers[0]);
  EXPECT_EQ(y.value(), direct.value());
}

TEST(TransformerStack, DefaultDepthOutputShapeAndAttentionMaps) {
  ParameterStore<float> store;
  Rng rng(4);
  PatchConfig cfg{8, 64, 4, 3, 4};
  auto stack = TransformerStack<float>::make(store, cfg, 32, 32, 3, rng);
  Gen gen(34);
  std::vector<Tensor<float>> maps;
  Graph<float> g;
  auto y = transformer_stack(g, C(gen.array<float>(Shape{32, 32, 3}, 0, 1)), stack, &maps);
  EXPECT_EQ(y.shape(), (Shape{16, 64}));
  EXPECT_EQ(maps.size(), 12u);
  EXPECT_EQ(stack.layers.size(), 3u);
}

TEST(TransformerStack, DeterministicGivenSeed) {
  auto run = [] {
    ParameterStore<float> store;
    Rng rng(77);
    auto stack = TransformerStack<float>::make(store, PatchConfig{4, 16, 4, 2, 4}, 8, 8, 3, rng);
    Gen gen(35);
    Graph<float> g;
    return transformer_stack(g, C(gen.array<float>(Shape{2, 8, 8, 3}, 0, 1)), stack).value();
  };
  EXPECT_EQ(run(), run());
}
