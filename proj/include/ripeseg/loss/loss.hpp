#pragma once

// Composite segmentation objective L_t = beta1 * L_s1 + beta2 * L_s2 and the
// alternative losses used for ablations.
//
// Logits and targets are [N x ... x c]: the first axis is the batch, the last
// the classes, everything between is flattened into pixels.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ripeseg/tensor/nn.hpp"

namespace ripeseg {

enum class LossKind { lt, ce, dice, focal_tversky, soft_nn };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::lt: return "lt";
    case LossKind::ce: return "ce";
    case LossKind::dice: return "dice";
    case LossKind::focal_tversky: return "focal_tversky";
    case LossKind::soft_nn: return "soft_nn";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "lt") return LossKind::lt;
  if (s == "ce") return LossKind::ce;
  if (s == "dice") return LossKind::dice;
  if (s == "focal_tversky") return LossKind::focal_tversky;
  if (s == "soft_nn") return LossKind::soft_nn;
  throw ConfigError("unknown loss kind '" + s + "' (lt, ce, dice, focal_tversky, soft_nn)");
}

struct FocalTverskySpec {
  double alpha = 0.7;  // false-negative weight
  double beta = 0.3;   // false-positive weight
  double gamma = 4.0 / 3.0;
};

struct LossConfig {
  double beta1 = 0.9;
  double beta2 = 0.1;
  double tau = 1.5;
  std::size_t classes = 4;
  LossKind kind = LossKind::lt;
  std::vector<double> class_weights;  // empty: unweighted cross-entropy
  FocalTverskySpec focal_tversky{};
  double prob_floor = 1e-7;           // clamp before log

  void validate() const {
    if (beta1 < 0 || beta2 < 0) throw ConfigError("loss.beta1 and loss.beta2 must be non-negative");
    if (!(beta1 + beta2 > 0)) throw ConfigError("loss.beta1 + loss.beta2 must be positive");
    if (!(tau > 0)) throw ConfigError("loss.tau must be positive");
    if (classes < 2) throw ConfigError("loss needs at least two classes");
    if (!class_weights.empty() && class_weights.size() != classes)
      throw ConfigError("loss.class_weights needs one weight per class");
  }
};

namespace detail {

struct LossLayout {
  std::size_t batch, per_sample, classes;
};

template <class T>
LossLayout loss_layout(const Shape& probs, const NDArray<T>& targets) {
  if (probs.rank() < 2) throw ShapeError("loss inputs need a batch axis and a class axis");
  if (probs != targets.shape())
    throw ShapeError("loss: predictions " + probs.str() + " vs targets " + targets.shape().str());
  return {probs[0], probs.numel() / probs[0], probs.back()};
}

}  // namespace detail

/// One-hot [.. x classes] targets from integer labels.
template <class T, class Label>
NDArray<T> one_hot(std::span<const Label> labels, const Shape& label_shape, std::size_t classes) {
  std::vector<std::size_t> dims = label_shape.dims();
  dims.push_back(classes);
  NDArray<T> out{Shape(std::move(dims))};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= classes) throw LabelError("label " + std::to_string(c) + " outside " + std::to_string(classes) + " classes");
    out[i * classes + c] = T(1);
  }
  return out;
}

/// Batch mean of 1 - 2 sum(T p) / sum(T^2 + p^2), sums over pixels x classes.
template <class T>
Tensor<T> dice_term(Graph<T>& g, Tensor<T> probs, const NDArray<T>& targets) {
  const auto lay = detail::loss_layout(probs.shape(), targets);
  std::vector<double> num(lay.batch, 0.0), den(lay.batch, 0.0);
  const T* p = probs.data().data();
  for (std::size_t i = 0; i < lay.batch; ++i)
    for (std::size_t k = i * lay.per_sample; k < (i + 1) * lay.per_sample; ++k) {
      num[i] += double(targets[k]) * p[k];
      den[i] += double(targets[k]) * targets[k] + double(p[k]) * p[k];
    }
  double total = 0;
  for (std::size_t i = 0; i < lay.batch; ++i) total += 1.0 - 2.0 * num[i] / den[i];
  NDArray<T> out(Shape{1}, T(total / double(lay.batch)));
  return g.emit("dice_term", std::move(out), {probs}, [probs, targets, lay, num, den](std::span<const T> go) mutable {
    auto& gp = probs.grad_buffer();
    const T* p = probs.data().data();
    const double s = double(go[0]) / double(lay.batch);
    for (std::size_t i = 0; i < lay.batch; ++i)
      for (std::size_t k = i * lay.per_sample; k < (i + 1) * lay.per_sample; ++k) {
        // d/dp of -2 num/den
        const double d = -2.0 * (targets[k] * den[i] - num[i] * 2.0 * p[k]) / (den[i] * den[i]);
        gp[k] += T(s * d);
      }
  });
}

/// Batch mean of -sum w_c T log(max(p, floor)) over pixels x classes.
template <class T>
Tensor<T> cross_entropy_term(Graph<T>& g, Tensor<T> probs, const NDArray<T>& targets, double floor,
                             std::vector<double> weights = {}) {
  const auto lay = detail::loss_layout(probs.shape(), targets);
  if (!weights.empty() && weights.size() != lay.classes) throw ShapeError("cross_entropy: one weight per class");
  const T* p = probs.data().data();
  double total = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (targets[k] == T(0)) continue;
    const double w = weights.empty() ? 1.0 : weights[k % lay.classes];
    total -= w * double(targets[k]) * std::log(std::max(double(p[k]), floor));
    if (g.tracing_branches()) g.note_branch(double(p[k]) < floor);
  }
  NDArray<T> out(Shape{1}, T(total / double(lay.batch)));
  return g.emit("cross_entropy_term", std::move(out), {probs},
                [probs, targets, lay, floor, weights = std::move(weights)](std::span<const T> go) mutable {
                  auto& gp = probs.grad_buffer();
                  const T* p = probs.data().data();
                  const double s = double(go[0]) / double(lay.batch);
                  for (std::size_t k = 0; k < probs.size(); ++k) {
                    if (targets[k] == T(0) || double(p[k]) < floor) continue;
                    const double w = weights.empty() ? 1.0 : weights[k % lay.classes];
                    gp[k] += T(-s * w * targets[k] / double(p[k]));
                  }
                });
}

/// Batch and class mean of (1 - TI_c)^(1/gamma), with the Tversky index
/// TI_c = TP / (TP + alpha FN + beta FP) over each sample's pixels.
template <class T>
Tensor<T> focal_tversky_term(Graph<T>& g, Tensor<T> probs, const NDArray<T>& targets, FocalTverskySpec spec) {
  const auto lay = detail::loss_layout(probs.shape(), targets);
  const auto pixels = lay.per_sample / lay.classes;
  const std::size_t cells = lay.batch * lay.classes;
  std::vector<double> tp(cells, 0), fn(cells, 0), fp(cells, 0);
  const T* p = probs.data().data();
  for (std::size_t i = 0; i < lay.batch; ++i)
    for (std::size_t px = 0; px < pixels; ++px)
      for (std::size_t c = 0; c < lay.classes; ++c) {
        const auto k = (i * pixels + px) * lay.classes + c;
        const double t = targets[k], q = p[k];
        tp[i * lay.classes + c] += t * q;
        fn[i * lay.classes + c] += t * (1 - q);
        fp[i * lay.classes + c] += (1 - t) * q;
      }
  constexpr double kSmooth = 1e-6;
  const double expo = 1.0 / spec.gamma;
  double total = 0;
  std::vector<double> dloss_dti(cells);
  for (std::size_t j = 0; j < cells; ++j) {
    const double den = tp[j] + spec.alpha * fn[j] + spec.beta * fp[j] + kSmooth;
    const double ti = (tp[j] + kSmooth) / den;
    const double base = std::max(1.0 - ti, 1e-12);
    total += std::pow(base, expo);
    dloss_dti[j] = -expo * std::pow(base, expo - 1.0);
  }
  NDArray<T> out(Shape{1}, T(total / double(cells)));
  return g.emit("focal_tversky_term", std::move(out), {probs},
                [probs, targets, lay, pixels, tp, fn, fp, dloss_dti, spec](std::span<const T> go) mutable {
                  auto& gp = probs.grad_buffer();
                  const double s = double(go[0]) / double(lay.batch * lay.classes);
                  for (std::size_t i = 0; i < lay.batch; ++i)
                    for (std::size_t px = 0; px < pixels; ++px)
                      for (std::size_t c = 0; c < lay.classes; ++c) {
                        const auto j = i * lay.classes + c;
                        const auto k = (i * pixels + px) * lay.classes + c;
                        const double t = targets[k];
                        const double den = tp[j] + spec.alpha * fn[j] + spec.beta * fp[j] + kSmooth;
                        const double num = tp[j] + kSmooth;
                        // dTP/dp = t, dFN/dp = -t, dFP/dp = 1 - t
                        const double dden = t - spec.alpha * t + spec.beta * (1 - t);
                        const double dti = (t * den - num * dden) / (den * den);
                        gp[k] += T(s * dloss_dti[j] * dti);
                      }
                });
}

/// Dice-style term on temperature-softened probabilities.
template <class T>
Tensor<T> loss_s1(Graph<T>& g, const Tensor<T>& logits, const NDArray<T>& targets, const LossConfig& cfg) {
  return dice_term(g, ops::softmax_temp(g, logits, cfg.tau), targets);
}

/// Cross-entropy term on temperature-softened probabilities.
template <class T>
Tensor<T> loss_s2(Graph<T>& g, const Tensor<T>& logits, const NDArray<T>& targets, const LossConfig& cfg) {
  return cross_entropy_term(g, ops::softmax_temp(g, logits, cfg.tau), targets, cfg.prob_floor, cfg.class_weights);
}

template <class T>
Tensor<T> loss_lt(Graph<T>& g, const Tensor<T>& logits, const NDArray<T>& targets, const LossConfig& cfg) {
  auto probs = ops::softmax_temp(g, logits, cfg.tau);
  auto s1 = dice_term(g, probs, targets);
  auto s2 = cross_entropy_term(g, probs, targets, cfg.prob_floor, cfg.class_weights);
  return ops::weighted_sum(g, {s1, s2}, {T(cfg.beta1), T(cfg.beta2)});
}

/// Ablation losses: ce is L_s2 at unit temperature, dice is L_s1 alone.
template <class T>
Tensor<T> loss_alternative(Graph<T>& g, const Tensor<T>& logits, const NDArray<T>& targets, const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::ce: {
      auto unit = cfg;
      unit.tau = 1.0;
      return loss_s2(g, logits, targets, unit);
    }
    case LossKind::dice:
      return loss_s1(g, logits, targets, cfg);
    case LossKind::focal_tversky:
      return focal_tversky_term(g, ops::softmax_temp(g, logits, cfg.tau), targets, cfg.focal_tversky);
    case LossKind::soft_nn:
      throw ConfigError("soft_nn loss is a registered hook without an implementation for this architecture");
    case LossKind::lt:
      break;
  }
  throw ConfigError("loss kind '" + to_string(cfg.kind) + "' is not an alternative loss");
}

/// Dispatches on cfg.kind.
template <class T>
Tensor<T> compute_loss(Graph<T>& g, const Tensor<T>& logits, const NDArray<T>& targets, const LossConfig& cfg) {
  cfg.validate();
  if (logits.shape().back() != cfg.classes)
    throw ShapeError("loss configured for " + std::to_string(cfg.classes) + " classes, logits have " +
                     std::to_string(logits.shape().back()));
  return cfg.kind == LossKind::lt ? loss_lt(g, logits, targets, cfg) : loss_alternative(g, logits, targets, cfg);
}

}  // namespace ripeseg
