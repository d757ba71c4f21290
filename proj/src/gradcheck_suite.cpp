#include "ripeseg/verify/gradcheck.hpp"

#include <chrono>
#include <algorithm>
#include <map>

#include "ripeseg/loss/loss.hpp"
#include "ripeseg/model/segmodel.hpp"

namespace ripeseg {

namespace {

using D = double;
using T = Tensor<D>;
using Build = std::function<Tensor<D>(Graph<D>&)>;

struct Case {
  std::vector<T> leaves;
  Build f;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

/// Values in +-[lo, hi]; keeps inputs away from the ReLU kink at 0.
NDArray<D> away_from_zero(Shape s, Rng& rng, double lo = 0.1, double hi = 1.0) {
  NDArray<D> a(std::move(s));
  for (auto& v : a.data()) v = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(lo, hi);
  return a;
}

NDArray<D> uniform(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  NDArray<D> a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(lo, hi);
  return a;
}

/// Distinct values spaced far beyond the finite-difference step, shuffled,
/// so max selections are stable under perturbation.
NDArray<D> well_separated(Shape s, Rng& rng) {
  NDArray<D> a(std::move(s));
  const auto perm = rng.permutation(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -1.0 + 0.05 * double(perm[i]) / double(a.size()) * 40.0;
  return a;
}

T param(NDArray<D> v) { return T::parameter(std::move(v)); }

/// Projects an op output onto a fixed random direction: sum(w * y).
Tensor<D> project(Graph<D>& g, const Tensor<D>& y, const NDArray<D>& w) {
  return ops::sum(g, ops::mul(g, y, T::constant(w)));
}

NDArray<D> probabilities(std::size_t rows, std::size_t c, Rng& rng) {
  NDArray<D> p(Shape{rows, c});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += p[r * c + k] = rng.uniform(0.2, 1.0);
    for (std::size_t k = 0; k < c; ++k) p[r * c + k] /= s;
  }
  return p;
}

NDArray<D> random_one_hot(std::size_t n, std::size_t pixels, std::size_t c, Rng& rng) {
  std::vector<std::uint8_t> labels(n * pixels);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(c));
  return one_hot<D, std::uint8_t>(labels, Shape{n, pixels}, c);
}

/// Elementwise-op case: f = sum(w * op(leaves...)).
template <class Op>
Case elementwise(std::vector<T> leaves, Shape out, Rng& rng, Op op) {
  auto w = uniform(out, rng);
  return {leaves, [leaves, w, op](Graph<D>& g) { return project(g, op(g, leaves), w); }};
}

std::map<std::string, std::function<Case(Rng&)>> registry() {
  std::map<std::string, std::function<Case(Rng&)>> r;
  r["add"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{3, 4}, rng)), param(uniform(Shape{3, 4}, rng))}, Shape{3, 4}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::add(g, l[0], l[1]); });
  };
  r["sub"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{3, 4}, rng)), param(uniform(Shape{3, 4}, rng))}, Shape{3, 4}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::sub(g, l[0], l[1]); });
  };
  r["mul"] = [](Rng& rng) {
    // The projection itself is a mul; a plain sum keeps this row self-contained.
    std::vector<T> l{param(uniform(Shape{3, 4}, rng)), param(uniform(Shape{3, 4}, rng))};
    return Case{l, [l](Graph<D>& g) { return ops::sum(g, ops::mul(g, ops::mul(g, l[0], l[1]), l[0])); }};
  };
  r["add_broadcast"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{2, 3, 4}, rng)), param(uniform(Shape{3, 4}, rng))}, Shape{2, 3, 4}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::add_broadcast(g, l[0], l[1]); });
  };
  r["scale"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{5}, rng))}, Shape{5}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::scale(g, l[0], D(-1.7)); });
  };
  r["relu"] = [](Rng& rng) {
    return elementwise({param(away_from_zero(Shape{4, 5}, rng))}, Shape{4, 5}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::relu(g, l[0]); });
  };
  r["sum"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{3, 3}, rng))};
    return Case{l, [l](Graph<D>& g) { return ops::sum(g, l[0]); }};
  };
  r["weighted_sum"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{1}, rng)), param(uniform(Shape{1}, rng))};
    return Case{l, [l](Graph<D>& g) { return ops::weighted_sum(g, {l[0], l[1]}, {D(0.9), D(0.1)}); }};
  };
  r["reshape"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{2, 6}, rng))}, Shape{3, 4}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::reshape(g, l[0], Shape{3, 4}); });
  };
  r["matmul"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{3, 4}, rng)), param(uniform(Shape{4, 2}, rng))}, Shape{3, 2}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::matmul(g, l[0], l[1]); });
  };
  r["bmm"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{2, 3, 4}, rng)), param(uniform(Shape{2, 4, 3}, rng)),
                     param(uniform(Shape{2, 5, 4}, rng))};
    auto w1 = uniform(Shape{2, 3, 3}, rng), w2 = uniform(Shape{2, 3, 5}, rng);
    return Case{l, [l, w1, w2](Graph<D>& g) {
                  return ops::add(g, project(g, ops::bmm(g, l[0], l[1]), w1),
                                  project(g, ops::bmm(g, l[0], l[2], true), w2));
                }};
  };
  r["linear"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{2, 3, 4}, rng)), param(uniform(Shape{4, 5}, rng)),
                        param(uniform(Shape{5}, rng))},
                       Shape{2, 3, 5}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::linear(g, l[0], l[1], l[2]); });
  };
  r["slice_last"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{3, 6}, rng))}, Shape{3, 2}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::slice_last(g, l[0], 2, 4); });
  };
  r["concat_last"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{3, 2}, rng)), param(uniform(Shape{3, 4}, rng))}, Shape{3, 6}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::concat_last(g, l); });
  };
  r["conv2d"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{2, 5, 4, 3}, rng)), param(uniform(Shape{3, 3, 3, 2}, rng)),
                     param(uniform(Shape{2}, rng)), param(uniform(Shape{1, 1, 3, 4}, rng))};
    auto w1 = uniform(Shape{2, 5, 4, 2}, rng), w2 = uniform(Shape{2, 5, 4, 4}, rng);
    return Case{l, [l, w1, w2](Graph<D>& g) {
                  return ops::add(g, project(g, ops::conv2d(g, l[0], l[1], l[2], {1, 1}), w1),
                                  project(g, ops::conv2d(g, l[0], l[3]), w2));
                }};
  };
  r["batchnorm"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{2, 3, 3, 4}, rng)), param(uniform(Shape{4}, rng, 0.5, 1.5)),
                     param(uniform(Shape{4}, rng))};
    auto w = uniform(Shape{2, 3, 3, 4}, rng);
    return Case{l, [l, w](Graph<D>& g) {
                  ops::RunningStats<D> stats(4);
                  return project(g, ops::batchnorm(g, l[0], l[1], l[2], stats, ops::NormMode::train), w);
                }};
  };
  r["layernorm"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{3, 6}, rng)), param(uniform(Shape{6}, rng, 0.5, 1.5)),
                     param(uniform(Shape{6}, rng))};
    auto w = uniform(Shape{3, 6}, rng);
    return Case{l, [l, w](Graph<D>& g) { return project(g, ops::layernorm(g, l[0], l[1], l[2]), w); }};
  };
  r["softmax_temp"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{4, 5}, rng, -2, 2))}, Shape{4, 5}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::softmax_temp(g, l[0], 1.5); });
  };
  r["maxpool2x2"] = [](Rng& rng) {
    return elementwise({param(well_separated(Shape{1, 4, 6, 2}, rng))}, Shape{1, 2, 3, 2}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::maxpool2x2(g, l[0]).values; });
  };
  r["max_unpool2x2"] = [](Rng& rng) {
    Graph<D> setup;
    const auto idx = ops::maxpool2x2(setup, T::constant(well_separated(Shape{1, 4, 4, 2}, rng))).indices;
    return elementwise({param(uniform(Shape{1, 2, 2, 2}, rng))}, Shape{1, 4, 4, 2}, rng,
                       [idx](Graph<D>& g, const std::vector<T>& l) {
                         return ops::max_unpool2x2(g, l[0], idx, Shape{1, 4, 4, 2});
                       });
  };
  r["resize_bilinear"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{1, 3, 4, 2}, rng))};
    auto w1 = uniform(Shape{1, 7, 5, 2}, rng), w2 = uniform(Shape{1, 2, 2, 2}, rng);
    return Case{l, [l, w1, w2](Graph<D>& g) {
                  return ops::add(g, project(g, ops::resize_bilinear(g, l[0], 7, 5), w1),
                                  project(g, ops::resize_bilinear(g, l[0], 2, 2), w2));
                }};
  };
  r["pad_reflect"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{1, 3, 4, 2}, rng))}, Shape{1, 6, 7, 2}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::pad_reflect(g, l[0], 1, 2, 2, 1); });
  };
  r["crop"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{1, 5, 5, 2}, rng))}, Shape{1, 2, 3, 2}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return ops::crop(g, l[0], 1, 2, 2, 3); });
  };
  r["partition_patches"] = [](Rng& rng) {
    return elementwise({param(uniform(Shape{4, 4, 2}, rng))}, Shape{4, 8}, rng,
                       [](Graph<D>& g, const std::vector<T>& l) { return partition_patches(g, l[0], 2); });
  };
  r["attention_head"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{4, 3}, rng)), param(uniform(Shape{4, 3}, rng)),
                     param(uniform(Shape{4, 3}, rng))};
    auto w = uniform(Shape{4, 3}, rng);
    return Case{l, [l, w](Graph<D>& g) { return project(g, attention_head(g, l[0], l[1], l[2], 6).output, w); }};
  };
  r["transformer_stack"] = [](Rng& rng) {
    auto store = std::make_shared<ParameterStore<D>>();
    PatchConfig cfg{4, 4, 2, 2, 2};
    auto stack = std::make_shared<TransformerStack<D>>(TransformerStack<D>::make(*store, cfg, 8, 8, 2, rng));
    std::vector<T> l{param(uniform(Shape{8, 8, 2}, rng))};
    for (const auto& e : store->parameters()) l.push_back(e.tensor);
    auto w = uniform(Shape{4, 4}, rng);
    return Case{l, [l, w, store, stack](Graph<D>& g) { return project(g, transformer_stack(g, l[0], *stack), w); }};
  };
  r["dice_term"] = [](Rng& rng) {
    std::vector<T> l{param(probabilities(6, 3, rng).reshaped(Shape{2, 3, 3}))};
    auto t = random_one_hot(2, 3, 3, rng);
    return Case{l, [l, t](Graph<D>& g) { return dice_term(g, l[0], t); }};
  };
  r["cross_entropy_term"] = [](Rng& rng) {
    std::vector<T> l{param(probabilities(6, 3, rng).reshaped(Shape{2, 3, 3}))};
    auto t = random_one_hot(2, 3, 3, rng);
    return Case{l, [l, t](Graph<D>& g) { return cross_entropy_term(g, l[0], t, 1e-7, {1.0, 2.0, 0.5}); }};
  };
  r["focal_tversky_term"] = [](Rng& rng) {
    std::vector<T> l{param(probabilities(6, 3, rng).reshaped(Shape{2, 3, 3}))};
    auto t = random_one_hot(2, 3, 3, rng);
    return Case{l, [l, t](Graph<D>& g) { return focal_tversky_term(g, l[0], t, FocalTverskySpec{}); }};
  };
  r["loss_lt"] = [](Rng& rng) {
    std::vector<T> l{param(uniform(Shape{2, 4, 3}, rng, -2, 2))};
    auto t = random_one_hot(2, 4, 3, rng).reshaped(Shape{2, 4, 3});
    LossConfig cfg;
    cfg.classes = 3;
    return Case{l, [l, t, cfg](Graph<D>& g) { return loss_lt(g, l[0], t, cfg); }};
  };
  r["end_to_end_lt"] = [](Rng& rng) {
    ArchConfig arch;
    arch.height = arch.width = 8;
    arch.channels = 3;
    arch.classes = 2;
    arch.widths = {2, 2, 2, 2, 2};
    arch.patch = PatchConfig{8, 4, 2, 3, 4};
    auto model = std::make_shared<SegModel<D>>(arch, rng.next());
    std::vector<T> l{param(uniform(Shape{1, 8, 8, 3}, rng, 0, 1))};
    for (const auto& e : model->store().parameters()) l.push_back(e.tensor);
    auto t = random_one_hot(1, 64, 2, rng).reshaped(Shape{1, 8, 8, 2});
    LossConfig cfg;
    cfg.classes = 2;
    return Case{l, [l, t, cfg, model](Graph<D>& g) {
                  return compute_loss(g, model->logits(g, l[0], ops::NormMode::train), t, cfg);
                }};
  };
  return r;
}

const std::vector<std::string>& order() {
  static const std::vector<std::string> names{
      "add",        "sub",          "mul",           "add_broadcast",     "scale",          "relu",
      "sum",        "weighted_sum", "reshape",       "matmul",            "bmm",            "linear",
      "slice_last", "concat_last",  "conv2d",        "batchnorm",         "layernorm",      "softmax_temp",
      "maxpool2x2", "max_unpool2x2", "resize_bilinear", "pad_reflect",    "crop",           "partition_patches",
      "attention_head", "transformer_stack", "dice_term", "cross_entropy_term", "focal_tversky_term", "loss_lt",
      "end_to_end_lt"};
  return names;
}

}  // namespace

std::vector<std::string> gradcheck_ops() { return order(); }

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckSuiteOptions& options,
                                                 const std::function<void(const GradcheckResult&)>& on_row) {
  const auto reg = registry();
  std::vector<std::string> selected = options.ops.empty() ? order() : options.ops;
  for (const auto& name : selected)
    if (!reg.count(name)) {
      std::string known;
      for (const auto& n : order()) known += (known.empty() ? "" : ", ") + n;
      throw ConfigError("unknown gradcheck op '" + name + "' (known: " + known + ")");
    }
  std::vector<GradcheckResult> out;
  for (const auto& name : order()) {
    if (std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(Rng::derive(options.check.seed, fnv1a(name)));
    GradcheckResult res;
    try {
      auto c = reg.at(name)(rng);
      res = check_gradients(name, c.leaves, c.f, options.check);
    } catch (const std::exception& e) {
      res.op = name;
      res.error = e.what();
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_row) on_row(res);
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace ripeseg
