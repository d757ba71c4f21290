#pragma once

// Named parameter storage and the small parameterized layers built on the
// engine's primitives.

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ripeseg/tensor/nn.hpp"
#include "ripeseg/tensor/random.hpp"

namespace ripeseg {

/// A learnable tensor or persistent buffer, addressed by its manifest name.
template <class T>
struct NamedSlot {
  std::string name;
  Shape shape;
  std::span<T> data;
};

/// Ordered registry of every learnable tensor and normalization buffer of a
/// model. Registration order is the checkpoint order.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };
  struct StatsEntry {
    std::string name;
    std::shared_ptr<ops::RunningStats<T>> stats;
  };

  Tensor<T> add(std::string name, NDArray<T> init) {
    for (const auto& e : params_)
      if (e.name == name) throw ContractError("duplicate parameter name " + name);
    params_.push_back({std::move(name), Tensor<T>::parameter(std::move(init))});
    return params_.back().tensor;
  }

  std::shared_ptr<ops::RunningStats<T>> add_stats(std::string name, std::size_t channels) {
    stats_.push_back({std::move(name), std::make_shared<ops::RunningStats<T>>(channels)});
    return stats_.back().stats;
  }

  const std::vector<Entry>& parameters() const noexcept { return params_; }
  std::vector<Entry>& parameters() noexcept { return params_; }
  const std::vector<StatsEntry>& stats() const noexcept { return stats_; }

  /// Number of learnable scalars (buffers excluded).
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : params_) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : params_) e.tensor.zero_grad();
  }

  /// Learnable tensors followed by running statistics, in manifest order.
  std::vector<NamedSlot<T>> slots() {
    std::vector<NamedSlot<T>> out;
    for (auto& e : params_) out.push_back({e.name, e.tensor.shape(), e.tensor.mutable_data()});
    for (auto& s : stats_) {
      const auto c = s.stats->mean.size();
      out.push_back({s.name + ".running_mean", Shape{c}, std::span<T>(s.stats->mean)});
      out.push_back({s.name + ".running_var", Shape{c}, std::span<T>(s.stats->var)});
    }
    return out;
  }

 private:
  std::vector<Entry> params_;
  std::vector<StatsEntry> stats_;
};

template <class T>
struct Conv {
  Tensor<T> weight;  // kh x kw x Cin x Cout
  Tensor<T> bias;    // undefined for convs feeding a batchnorm
  ops::Conv2dSpec spec;

  static Conv make(ParameterStore<T>& store, const std::string& name, std::size_t k, std::size_t cin,
                   std::size_t cout, Rng& rng, bool with_bias) {
    Conv c;
    c.weight = store.add(name + ".weight", fan_in_uniform<T>(Shape{k, k, cin, cout}, k * k * cin, rng));
    if (with_bias) c.bias = store.add(name + ".bias", NDArray<T>(Shape{cout}));
    c.spec = {1, k / 2};
    return c;
  }

  Tensor<T> operator()(Graph<T>& g, const Tensor<T>& x) const {
    return ops::conv2d(g, x, weight, bias, spec);
  }
};

template <class T>
struct BatchNorm {
  Tensor<T> gamma, beta;
  std::shared_ptr<ops::RunningStats<T>> stats;

  static BatchNorm make(ParameterStore<T>& store, const std::string& name, std::size_t c) {
    return {store.add(name + ".gamma", NDArray<T>(Shape{c}, T(1))),
            store.add(name + ".beta", NDArray<T>(Shape{c})), store.add_stats(name, c)};
  }

  Tensor<T> operator()(Graph<T>& g, const Tensor<T>& x, ops::NormMode mode) const {
    return ops::batchnorm(g, x, gamma, beta, *stats, mode);
  }
};

template <class T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;

  static Linear make(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                     Rng& rng, bool with_bias) {
    Linear l;
    l.weight = store.add(name + ".weight", fan_in_uniform<T>(Shape{in, out}, in, rng));
    if (with_bias) l.bias = store.add(name + ".bias", NDArray<T>(Shape{out}));
    return l;
  }

  Tensor<T> operator()(Graph<T>& g, const Tensor<T>& x) const { return ops::linear(g, x, weight, bias); }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  static LayerNorm make(ParameterStore<T>& store, const std::string& name, std::size_t l) {
    return {store.add(name + ".gamma", NDArray<T>(Shape{l}, T(1))),
            store.add(name + ".beta", NDArray<T>(Shape{l}))};
  }

  Tensor<T> operator()(Graph<T>& g, const Tensor<T>& x) const { return ops::layernorm(g, x, gamma, beta); }
};

}  // namespace ripeseg
