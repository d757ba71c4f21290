#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracle.hpp"
#include "ripeseg/tensor/nn.hpp"
#include "ripeseg/tensor/random.hpp"

using namespace ripeseg;
using ops::RunningStats;
using testing_support::Gen;
using testing_support::max_grad_error;

namespace {

template <class T>
Tensor<T> C(Shape s, std::vector<T> v) {
  return Tensor<T>::constant(NDArray<T>(std::move(s), std::move(v)));
}
template <class T>
Tensor<T> P(NDArray<T> a) {
  return Tensor<T>::parameter(std::move(a));
}

std::vector<float> values(const Tensor<float>& t) { return t.value().vec(); }

}  // namespace

TEST(Elementwise, AddIsComponentwise) {
  Graph<float> g;
  auto y = ops::add(g, C<float>(Shape{2}, {1, 2}), C<float>(Shape{2}, {3, 4}));
  EXPECT_EQ(values(y), (std::vector<float>{4, 6}));
}

TEST(Elementwise, ReluClampsNegatives) {
  Graph<float> g;
  auto y = ops::relu(g, C<float>(Shape{3}, {-1, 0, 2}));
  EXPECT_EQ(values(y), (std::vector<float>{0, 0, 2}));
}

TEST(Elementwise, ScaleByZeroAnnihilates) {
  Graph<float> g;
  auto y = ops::scale(g, C<float>(Shape{2}, {2, 3}), 0.0f);
  EXPECT_EQ(values(y), (std::vector<float>{0, 0}));
}

TEST(Elementwise, ShapeMismatchThrows) {
  Graph<float> g;
  EXPECT_THROW(ops::add(g, C<float>(Shape{2}, {1, 2}), C<float>(Shape{3}, {1, 2, 3})), ShapeError);
  EXPECT_THROW(ops::mul(g, C<float>(Shape{2, 1}, {1, 2}), C<float>(Shape{1, 2}, {1, 2})), ShapeError);
}

TEST(Matmul, IdentityAndDotProduct) {
  Graph<float> g;
  auto id = C<float>(Shape{2, 2}, {1, 0, 0, 1});
  auto b = C<float>(Shape{2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(values(ops::matmul(g, id, b)), (std::vector<float>{5, 6, 7, 8}));
  EXPECT_EQ(values(ops::matmul(g, C<float>(Shape{1, 2}, {1, 2}), C<float>(Shape{2, 1}, {3, 4}))),
            (std::vector<float>{11}));
}

TEST(Matmul, InnerDimMismatchThrows) {
  Graph<float> g;
  EXPECT_THROW(ops::matmul(g, C<float>(Shape{1, 2}, {1, 2}), C<float>(Shape{3, 1}, {1, 2, 3})), ShapeError);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Gen gen(1);
  auto a = P(gen.array<double>(Shape{3, 4}));
  auto b = Tensor<double>::constant(gen.array<double>(Shape{4, 2}));
  EXPECT_LE(max_grad_error(a, [&](Graph<double>& g) { return ops::sum(g, ops::matmul(g, a, b)); }), 1e-3);
}

TEST(Conv2d, IdentityKernelIsNoOp) {
  Gen gen(2);
  auto x = Tensor<float>::constant(gen.array<float>(Shape{4, 5, 1}));
  Graph<float> g;
  auto y = ops::conv2d(g, x, C<float>(Shape{1, 1, 1, 1}, {1}));
  EXPECT_EQ(y.value(), x.value());
}

TEST(Conv2d, OnesKernelSumsNeighbourhood) {
  Graph<float> g;
  auto x = Tensor<float>::constant(NDArray<float>(Shape{5, 5, 1}, 0.5f));
  auto y = ops::conv2d(g, x, Tensor<float>::constant(NDArray<float>(Shape{3, 3, 1, 1}, 1.0f)));
  ASSERT_EQ(y.shape(), (Shape{3, 3, 1}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 4.5f);
}

TEST(Conv2d, OutputExtentFollowsStrideAndPadding) {
  Graph<float> g;
  auto x = Tensor<float>::constant(NDArray<float>(Shape{7, 6, 2}));
  auto y = ops::conv2d(g, x, Tensor<float>::constant(NDArray<float>(Shape{3, 3, 2, 4})), {},
                       ops::Conv2dSpec{2, 1});
  EXPECT_EQ(y.shape(), (Shape{4, 3, 4}));
}

TEST(Conv2d, KernelLargerThanInputThrows) {
  Graph<float> g;
  auto x = Tensor<float>::constant(NDArray<float>(Shape{2, 2, 1}));
  EXPECT_THROW(ops::conv2d(g, x, Tensor<float>::constant(NDArray<float>(Shape{3, 3, 1, 1}))), ShapeError);
}

TEST(Conv2d, WeightGradientMatchesFiniteDifferences) {
  Gen gen(3);
  auto x = Tensor<double>::constant(gen.array<double>(Shape{5, 5, 2}));
  auto w = P(gen.array<double>(Shape{3, 3, 2, 3}));
  auto bias = P(gen.array<double>(Shape{3}));
  auto proj = Tensor<double>::constant(gen.array<double>(Shape{5, 5, 3}));
  auto f = [&](Graph<double>& g) {
    return ops::sum(g, ops::mul(g, ops::conv2d(g, x, w, bias, ops::Conv2dSpec{1, 1}), proj));
  };
  EXPECT_LE(max_grad_error(w, f), 1e-3);
  EXPECT_LE(max_grad_error(bias, f), 1e-3);
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
  // Two channels, each already mean 0 and variance 1.
  auto x = C<float>(Shape{2, 2, 2}, {1, -1, -1, 1, 1, -1, -1, 1});
  RunningStats<float> stats(2);
  Graph<float> g;
  auto y = ops::batchnorm(g, x, C<float>(Shape{2}, {1, 1}), C<float>(Shape{2}, {0, 0}), stats, ops::NormMode::train);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-5);
}

TEST(BatchNorm, ZeroGammaYieldsBeta) {
  Gen gen(4);
  auto x = Tensor<float>::constant(gen.array<float>(Shape{3, 3, 2}));
  RunningStats<float> stats(2);
  Graph<float> g;
  auto y = ops::batchnorm(g, x, C<float>(Shape{2}, {0, 0}), C<float>(Shape{2}, {0.25f, -2}), stats,
                          ops::NormMode::train);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y.data()[i], i % 2 ? -2.0f : 0.25f);
}

TEST(BatchNorm, ConstantChannelStaysFinite) {
  auto x = Tensor<float>::constant(NDArray<float>(Shape{2, 2, 1}, 3.0f));
  RunningStats<float> stats(1);
  Graph<float> g;
  auto y = ops::batchnorm(g, x, C<float>(Shape{1}, {1}), C<float>(Shape{1}, {0}), stats, ops::NormMode::train);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(BatchNorm, EvalModeUsesRunningStatsOnly) {
  RunningStats<float> stats(1);
  stats.mean = {2};
  stats.var = {4};
  Graph<float> g;
  auto y = ops::batchnorm(g, C<float>(Shape{1, 2, 1}, {2, 6}), C<float>(Shape{1}, {1}), C<float>(Shape{1}, {0}),
                          stats, ops::NormMode::eval);
  EXPECT_NEAR(y.data()[0], 0.0f, 1e-6);
  EXPECT_NEAR(y.data()[1], 4.0f / std::sqrt(4.0f + 1e-5f), 1e-5);
  EXPECT_EQ(stats.mean[0], 2.0f);
}

TEST(BatchNorm, TrainModeUpdatesRunningStatsWithMomentum) {
  RunningStats<float> stats(1);
  Graph<float> g;
  ops::batchnorm(g, C<float>(Shape{1, 2, 1}, {1, 3}), C<float>(Shape{1}, {1}), C<float>(Shape{1}, {0}), stats,
                 ops::NormMode::train);
  EXPECT_NEAR(stats.mean[0], 0.1f * 2.0f, 1e-6);
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  Gen gen(5);
  auto x = P(gen.array<double>(Shape{4, 4, 2}));
  auto gamma = P(gen.array<double>(Shape{2}, 0.5, 1.5));
  auto beta = P(gen.array<double>(Shape{2}));
  auto proj = Tensor<double>::constant(gen.array<double>(Shape{4, 4, 2}));
  auto f = [&](Graph<double>& g) {
    RunningStats<double> stats(2);
    return ops::sum(g, ops::mul(g, ops::batchnorm(g, x, gamma, beta, stats, ops::NormMode::train), proj));
  };
  EXPECT_LE(max_grad_error(x, f), 1e-3);
  EXPECT_LE(max_grad_error(gamma, f), 1e-3);
  EXPECT_LE(max_grad_error(beta, f), 1e-3);
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  Graph<float> g;
  auto y = ops::layernorm(g, C<float>(Shape{1, 3}, {3, 3, 3}), C<float>(Shape{3}, {1, 1, 1}),
                          C<float>(Shape{3}, {0, 0, 0}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, NormalizedRowPassesThrough) {
  Graph<float> g;
  auto y = ops::layernorm(g, C<float>(Shape{1, 2}, {1, -1}), C<float>(Shape{2}, {1, 1}), C<float>(Shape{2}, {0, 0}));
  EXPECT_NEAR(y.data()[0], 1.0f, 1e-5);
  EXPECT_NEAR(y.data()[1], -1.0f, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Gen gen(6);
  auto x = P(gen.array<double>(Shape{3, 5}));
  auto gamma = P(gen.array<double>(Shape{5}));
  auto beta = P(gen.array<double>(Shape{5}));
  auto proj = Tensor<double>::constant(gen.array<double>(Shape{3, 5}));
  auto f = [&](Graph<double>& g) { return ops::sum(g, ops::mul(g, ops::layernorm(g, x, gamma, beta), proj)); };
  EXPECT_LE(max_grad_error(x, f), 1e-3);
  EXPECT_LE(max_grad_error(gamma, f), 1e-3);
}

TEST(SoftmaxTemp, ClosedForms) {
  Graph<double> g;
  auto even = ops::softmax_temp(g, C<double>(Shape{2}, {0, 0}), 3.7);
  EXPECT_DOUBLE_EQ(even.data()[0], 0.5);
  auto t1 = ops::softmax_temp(g, C<double>(Shape{2}, {std::log(2.0), 0}), 1.0);
  EXPECT_NEAR(t1.data()[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(t1.data()[1], 1.0 / 3.0, 1e-12);
  auto t2 = ops::softmax_temp(g, C<double>(Shape{2}, {std::log(2.0), 0}), 2.0);
  EXPECT_NEAR(t2.data()[0], std::sqrt(2.0) / (1 + std::sqrt(2.0)), 1e-12);
  EXPECT_NEAR(t2.data()[1], 0.41421, 1e-5);
}

TEST(SoftmaxTemp, NonPositiveTemperatureIsConfigError) {
  Graph<float> g;
  EXPECT_THROW(ops::softmax_temp(g, C<float>(Shape{2}, {0, 0}), 0.0), ConfigError);
  EXPECT_THROW(ops::softmax_temp(g, C<float>(Shape{2}, {0, 0}), -1.0), ConfigError);
}

TEST(SoftmaxTemp, RowsSumToOneOnRandomLogits) {
  Gen gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = gen.index(1, 20), c = gen.index(2, 6);
    Graph<float> g;
    auto p = ops::softmax_temp(g, Tensor<float>::constant(gen.array<float>(Shape{rows, c}, -30, 30)),
                               gen.real(0.2, 3));
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const float v = p.data()[r * c + k];
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(MaxPool, PicksMaximumAndItsIndex) {
  Graph<float> g;
  auto p = ops::maxpool2x2(g, C<float>(Shape{2, 2, 1}, {1, 2, 3, 4}));
  EXPECT_EQ(values(p.values), (std::vector<float>{4}));
  EXPECT_EQ(p.indices.argmax, (std::vector<std::size_t>{3}));
}

TEST(MaxPool, TiesResolveToFirstInWindow) {
  Graph<float> g;
  auto p = ops::maxpool2x2(g, Tensor<float>::constant(NDArray<float>(Shape{4, 4, 1}, 2.0f)));
  EXPECT_EQ(p.indices.argmax, (std::vector<std::size_t>{0, 2, 8, 10}));
  for (float v : p.values.data()) EXPECT_EQ(v, 2.0f);
}

TEST(MaxPool, OddDimsThrow) {
  Graph<float> g;
  EXPECT_THROW(ops::maxpool2x2(g, Tensor<float>::constant(NDArray<float>(Shape{3, 4, 1}))), ShapeError);
}

TEST(MaxPool, RecordedIndexAttainsWindowMaximum) {
  Gen gen(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto h = 2 * gen.index(1, 4), w = 2 * gen.index(1, 4), c = gen.index(1, 3);
    auto x = gen.array<float>(Shape{h, w, c});
    Graph<float> g;
    auto p = ops::maxpool2x2(g, Tensor<float>::constant(x));
    for (std::size_t i = 0; i < p.indices.argmax.size(); ++i) {
      ASSERT_LT(p.indices.argmax[i], x.size());
      EXPECT_EQ(x[p.indices.argmax[i]], p.values.data()[i]);
    }
  }
}

TEST(MaxUnpool, PlacesValuesAtRecordedIndices) {
  Graph<float> g;
  auto p = ops::maxpool2x2(g, C<float>(Shape{2, 2, 1}, {1, 2, 3, 4}));
  auto u = ops::max_unpool2x2(g, C<float>(Shape{1, 1, 1}, {4}), p.indices, Shape{2, 2, 1});
  EXPECT_EQ(values(u), (std::vector<float>{0, 0, 0, 4}));
  auto z = ops::max_unpool2x2(g, C<float>(Shape{1, 1, 1}, {0}), p.indices, Shape{2, 2, 1});
  EXPECT_EQ(values(z), (std::vector<float>{0, 0, 0, 0}));
}

TEST(MaxUnpool, CorruptIndexThrows) {
  Graph<float> g;
  ops::PoolIndices idx{Shape{1, 1, 1}, Shape{2, 2, 1}, {9}};
  EXPECT_THROW(ops::max_unpool2x2(g, C<float>(Shape{1, 1, 1}, {1}), idx, Shape{2, 2, 1}), CorruptIndexError);
}

TEST(MaxUnpool, PreservesMassAndRoundTrips) {
  Gen gen(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto h = 2 * gen.index(1, 5), w = 2 * gen.index(1, 5), c = gen.index(1, 3);
    Graph<float> g;
    auto x = Tensor<float>::constant(gen.array<float>(Shape{h, w, c}));
    auto p = ops::maxpool2x2(g, x);
    auto y = Tensor<float>::constant(gen.array<float>(p.values.shape(), 0, 1));
    auto u = ops::max_unpool2x2(g, y, p.indices, x.shape());
    double su = 0, sy = 0;
    for (float v : u.data()) su += v;
    for (float v : y.data()) sy += v;
    EXPECT_NEAR(su, sy, 1e-4);
    EXPECT_EQ(ops::maxpool2x2(g, u).values.value(), y.value());
  }
}

TEST(ResizeBilinear, SameSizeIsIdentity) {
  Gen gen(10);
  auto x = Tensor<float>::constant(gen.array<float>(Shape{3, 5, 2}));
  Graph<float> g;
  auto y = ops::resize_bilinear(g, x, 3, 5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-6);
}

TEST(ResizeBilinear, ConstantStaysConstant) {
  auto x = Tensor<float>::constant(NDArray<float>(Shape{3, 4, 1}, 0.7f));
  Graph<float> g;
  auto y = ops::resize_bilinear(g, x, 7, 2);
  for (float v : y.data()) EXPECT_NEAR(v, 0.7f, 1e-6);
}

TEST(ResizeBilinear, UpsampledRampIsMonotoneAndBounded) {
  Graph<float> g;
  auto y = ops::resize_bilinear(g, C<float>(Shape{1, 2, 1}, {0, 1}), 1, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GE(y.data()[i], 0.0f);
    EXPECT_LE(y.data()[i], 1.0f);
    if (i) {
      EXPECT_GE(y.data()[i], y.data()[i - 1]);
    }
  }
}

TEST(ResizeBilinear, GradientMatchesFiniteDifferences) {
  Gen gen(11);
  auto x = P(gen.array<double>(Shape{3, 4, 2}));
  auto proj = Tensor<double>::constant(gen.array<double>(Shape{5, 7, 2}));
  EXPECT_LE(max_grad_error(x, [&](Graph<double>& g) {
              return ops::sum(g, ops::mul(g, ops::resize_bilinear(g, x, 5, 7), proj));
            }),
            1e-3);
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor<float>::parameter(NDArray<float>(Shape{3}, std::vector<float>{1, 2, 3}));
  Graph<float> g;
  g.backward(ops::sum(g, ops::mul(g, x, x)));
  EXPECT_EQ(x.grad().vec(), (std::vector<float>{2, 4, 6}));
}

TEST(Backward, ConstantOutputLeavesZeroGradients) {
  auto x = Tensor<float>::parameter(NDArray<float>(Shape{3}, 1.0f));
  Graph<float> g;
  g.backward(ops::sum(g, ops::scale(g, x, 0.0f)));
  EXPECT_EQ(x.grad().vec(), (std::vector<float>{0, 0, 0}));
}

TEST(Backward, NonScalarRootIsContractError) {
  auto x = Tensor<float>::parameter(NDArray<float>(Shape{2}, 1.0f));
  Graph<float> g;
  EXPECT_THROW(g.backward(ops::relu(g, x)), ContractError);
}

TEST(Backward, UnreachableGradientsUntouched) {
  auto x = Tensor<float>::parameter(NDArray<float>(Shape{2}, 1.0f));
  auto unused = Tensor<float>::parameter(NDArray<float>(Shape{2}, 1.0f));
  Graph<float> g;
  g.backward(ops::sum(g, x));
  EXPECT_FALSE(unused.has_grad());
}

TEST(Backward, VisitsEachRecordOnce) {
  // y = x + x must give dy/dx = 2, not more.
  auto x = Tensor<double>::parameter(NDArray<double>(Shape{1}, 3.0));
  Graph<double> g;
  auto y = ops::add(g, x, x);
  g.backward(ops::sum(g, y));
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Graph, NonFiniteValueNamesTheOp) {
  Graph<float> g;
  auto x = C<float>(Shape{1}, {std::numeric_limits<float>::max()});
  try {
    ops::scale(g, x, 10.0f);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Graph, InferenceGraphRecordsNothing) {
  Graph<float>::Options o;
  o.record = false;
  Graph<float> g(o);
  auto x = Tensor<float>::parameter(NDArray<float>(Shape{2}, 1.0f));
  auto y = ops::sum(g, x);
  EXPECT_EQ(g.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Graph, SameInputsGiveBitIdenticalOutputs) {
  auto run = [] {
    Rng rng(42);
    auto x = Tensor<float>::constant(fan_in_uniform<float>(Shape{6, 6, 3}, 27, rng));
    auto w = Tensor<float>::constant(fan_in_uniform<float>(Shape{3, 3, 3, 4}, 27, rng));
    Graph<float> g;
    return ops::softmax_temp(g, ops::conv2d(g, x, w, {}, ops::Conv2dSpec{1, 1}), 1.5).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Random, DerivedStreamsAreReproducibleAndDistinct) {
  EXPECT_EQ(Rng::derive(1, 2), Rng::derive(1, 2));
  EXPECT_NE(Rng::derive(1, 2), Rng::derive(1, 3));
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Random, FanInUniformRespectsBound) {
  Rng rng(3);
  const auto a = fan_in_uniform<float>(Shape{100}, 6, rng);
  for (float v : a.data()) EXPECT_LE(std::abs(v), 1.0f);
}
