#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracle.hpp"
#include "ripeseg/loss/loss.hpp"

using namespace ripeseg;
using testing_support::Gen;
using testing_support::max_grad_error;

namespace {

LossConfig two_class(double b1 = 0.9, double b2 = 0.1) {
  LossConfig c;
  c.classes = 2;
  c.beta1 = b1;
  c.beta2 = b2;
  return c;
}

Tensor<double> logits(std::vector<double> v, Shape s) {
  return Tensor<double>::constant(NDArray<double>(std::move(s), std::move(v)));
}

NDArray<double> target(std::vector<double> v, Shape s) { return NDArray<double>(std::move(s), std::move(v)); }

double eval(Tensor<double> (*f)(Graph<double>&, const Tensor<double>&, const NDArray<double>&, const LossConfig&),
            const Tensor<double>& x, const NDArray<double>& t, const LossConfig& c) {
  Graph<double> g;
  return f(g, x, t, c).item();
}

// Logits whose temperature softmax is exactly the given probabilities.
std::vector<double> logits_for(const std::vector<double>& p, double tau) {
  std::vector<double> out;
  for (double v : p) out.push_back(tau * std::log(v));
  return out;
}

struct Random {
  Tensor<double> x;
  NDArray<double> t;
};

Random random_case(Gen& gen, std::size_t n, std::size_t pixels, std::size_t classes) {
  Random r{Tensor<double>::parameter(gen.array<double>(Shape{n, pixels, classes}, -3, 3)),
           NDArray<double>(Shape{n, pixels, classes})};
  for (std::size_t i = 0; i < n * pixels; ++i) r.t[i * classes + gen.index(0, classes - 1)] = 1;
  return r;
}

}  // namespace

TEST(LossS1, PerfectPredictionIsZero) {
  auto c = two_class();
  EXPECT_NEAR(eval(loss_s1, logits({60, 0}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c), 0.0, 1e-6);
}

TEST(LossS1, EvenSplitIsOneThird) {
  auto c = two_class();
  EXPECT_NEAR(eval(loss_s1, logits({0, 0}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c), 1.0 / 3.0, 1e-12);
}

TEST(LossS1, BoundedOnRandomInputs) {
  Gen gen(60);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cls = gen.index(2, 5);
    auto r = random_case(gen, gen.index(1, 3), gen.index(1, 10), cls);
    auto c = two_class();
    c.classes = cls;
    c.tau = gen.real(0.5, 3);
    const double v = eval(loss_s1, r.x, r.t, c);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(LossS1, ShapeMismatchThrows) {
  auto c = two_class();
  EXPECT_THROW(eval(loss_s1, logits({0, 0}, Shape{1, 1, 2}), target({1, 0, 0, 1}, Shape{1, 2, 2}), c), ShapeError);
}

TEST(LossS2, PerfectPredictionIsNearZero) {
  auto c = two_class();
  EXPECT_LE(eval(loss_s2, logits({60, 0}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c), 1e-6);
}

TEST(LossS2, EvenSplitIsLnTwo) {
  auto c = two_class();
  EXPECT_NEAR(eval(loss_s2, logits({0, 0}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c), std::log(2.0), 1e-12);
}

TEST(LossS2, ClampPreventsInfinity) {
  auto c = two_class();
  c.tau = 1;
  const double v = eval(loss_s2, logits({0, 800}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c);
  EXPECT_NEAR(v, -std::log(1e-7), 1e-9);
}

TEST(LossS2, DecreasesAsTrueClassProbabilityRises) {
  auto c = two_class();
  double prev = 1e300;
  for (double p = 0.05; p < 1.0; p += 0.05) {
    const double v = eval(loss_s2, logits(logits_for({p, 1 - p}, c.tau), Shape{1, 1, 2}),
                          target({1, 0}, Shape{1, 1, 2}), c);
    EXPECT_LT(v, prev);
    EXPECT_GE(v, 0.0);
    prev = v;
  }
}

TEST(LossS2, SumsOverPixelsAndAveragesOverBatch) {
  auto c = two_class();
  // Two samples, two pixels each, all at p = 1/2: each sample sums 2 ln 2.
  const double v = eval(loss_s2, logits(std::vector<double>(8, 0.0), Shape{2, 2, 2}),
                        target({1, 0, 0, 1, 1, 0, 1, 0}, Shape{2, 2, 2}), c);
  EXPECT_NEAR(v, 2 * std::log(2.0), 1e-12);
}

TEST(LossLt, ClosedFormCombination) {
  auto c = two_class(0.9, 0.1);
  const double v = eval(loss_lt, logits({0, 0}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c);
  EXPECT_NEAR(v, 0.9 / 3.0 + 0.1 * std::log(2.0), 1e-12);
  EXPECT_NEAR(v, 0.36931, 1e-5);
}

TEST(LossLt, UnitBetaOneIsExactlyLossS1) {
  Gen gen(61);
  for (int trial = 0; trial < 50; ++trial) {
    auto r = random_case(gen, 2, 5, 3);
    auto c = two_class(1, 0);
    c.classes = 3;
    Graph<float> g;
    auto xf = Tensor<float>::constant(r.x.value().cast<float>());
    const auto tf = r.t.cast<float>();
    EXPECT_EQ(loss_lt(g, xf, tf, c).item(), loss_s1(g, xf, tf, c).item());
  }
}

TEST(LossLt, LinearInBetas) {
  Gen gen(62);
  for (int trial = 0; trial < 50; ++trial) {
    auto r = random_case(gen, 2, 4, 3);
    auto at = [&](double b1, double b2) {
      auto c = two_class(b1, b2);
      c.classes = 3;
      return eval(loss_lt, r.x, r.t, c);
    };
    const double a1 = gen.real(0, 1), a2 = gen.real(0, 1), b1 = gen.real(0, 1), b2 = gen.real(0, 1);
    EXPECT_NEAR(at(a1 + b1, a2 + b2), at(a1, a2) + at(b1, b2), 1e-6);
  }
}

TEST(LossLt, GradientMatchesFiniteDifferences) {
  Gen gen(63);
  auto r = random_case(gen, 2, 3, 3);
  auto c = two_class();
  c.classes = 3;
  EXPECT_LE(max_grad_error(r.x, [&](Graph<double>& g) { return loss_lt(g, r.x, r.t, c); }), 1e-3);
}

TEST(LossConfig, ValidationRejectsBadScalars) {
  auto c = two_class(0, 0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = two_class(-1, 2);
  EXPECT_THROW(c.validate(), ConfigError);
  c = two_class();
  c.tau = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = two_class();
  c.class_weights = {1};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(LossKind, ParsesKnownNamesOnly) {
  for (auto k : {LossKind::lt, LossKind::ce, LossKind::dice, LossKind::focal_tversky, LossKind::soft_nn})
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
}

TEST(Alternatives, CeIsLossS2AtUnitTemperature) {
  Gen gen(64);
  auto r = random_case(gen, 2, 4, 3);
  auto c = two_class();
  c.classes = 3;
  c.kind = LossKind::ce;
  auto unit = c;
  unit.tau = 1.0;
  EXPECT_EQ(eval(compute_loss, r.x, r.t, c), eval(loss_s2, r.x, r.t, unit));
}

TEST(Alternatives, DiceIsLossS1) {
  Gen gen(65);
  auto r = random_case(gen, 2, 4, 3);
  auto c = two_class();
  c.classes = 3;
  c.kind = LossKind::dice;
  EXPECT_EQ(eval(compute_loss, r.x, r.t, c), eval(loss_s1, r.x, r.t, c));
}

TEST(Alternatives, SoftNearestNeighbourIsAnUnimplementedHook) {
  auto c = two_class();
  c.kind = LossKind::soft_nn;
  EXPECT_THROW(eval(compute_loss, logits({0, 0}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c), ConfigError);
}

TEST(Alternatives, ClassCountMismatchThrows) {
  auto c = two_class();
  c.classes = 3;
  EXPECT_THROW(eval(compute_loss, logits({0, 0}, Shape{1, 1, 2}), target({1, 0}, Shape{1, 1, 2}), c), ShapeError);
}

TEST(FocalTversky, DegeneratesToDiceForHalfWeightsAndUnitGamma) {
  Gen gen(66);
  for (int trial = 0; trial < 50; ++trial) {
    const auto px = gen.index(1, 12);
    NDArray<double> p(Shape{1, px, 1}), t(Shape{1, px, 1});
    double tp = 0, st = 0, sp = 0;
    for (std::size_t i = 0; i < px; ++i) {
      p[i] = gen.real(0, 1);
      t[i] = gen.coin() ? 1 : 0;
      tp += t[i] * p[i];
      st += t[i];
      sp += p[i];
    }
    if (st == 0) continue;
    Graph<double> g;
    const double v = focal_tversky_term(g, Tensor<double>::constant(p), t, FocalTverskySpec{0.5, 0.5, 1.0}).item();
    EXPECT_NEAR(v, 1 - 2 * tp / (st + sp), 1e-5);
  }
}

TEST(FocalTversky, GradientMatchesFiniteDifferences) {
  Gen gen(67);
  auto r = random_case(gen, 2, 4, 3);
  auto c = two_class();
  c.classes = 3;
  c.kind = LossKind::focal_tversky;
  EXPECT_LE(max_grad_error(r.x, [&](Graph<double>& g) { return compute_loss(g, r.x, r.t, c); }), 1e-3);
}

TEST(Temperature, RaisingTauFlattensTowardUniform) {
  Gen gen(68);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cls = gen.index(2, 6);
    auto x = Tensor<double>::constant(gen.array<double>(Shape{cls}, -4, 4));
    double prev_entropy = -1;
    for (double tau : {1.0, 1.5, 2.0, 2.5}) {
      Graph<double> g;
      auto p = ops::softmax_temp(g, x, tau);
      double h = 0;
      for (double v : p.data()) h -= v * std::log(v);
      EXPECT_GT(h, prev_entropy);
      prev_entropy = h;
    }
  }
}

TEST(OneHot, RejectsOutOfRangeLabels) {
  std::vector<std::uint8_t> labels{0, 1, 3};
  EXPECT_THROW((one_hot<float, std::uint8_t>(labels, Shape{3}, 3)), LabelError);
  labels[2] = 2;
  auto t = one_hot<float, std::uint8_t>(labels, Shape{3}, 3);
  EXPECT_EQ(t.vec(), (std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
}
