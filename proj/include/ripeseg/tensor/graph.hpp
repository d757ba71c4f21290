#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ripeseg/tensor/errors.hpp"
#include "ripeseg/tensor/ndarray.hpp"

namespace ripeseg {

template <class T>
struct TensorNode {
  NDArray<T> value;
  std::vector<T> grad;  // empty until a gradient reaches the node
  bool requires_grad = false;
};

/// Handle to an immutable value with an optional gradient slot.
///
/// Copies share the node, so a parameter tensor held by a model and the same
/// tensor referenced from a graph accumulate into one gradient buffer.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(NDArray<T> value) { return Tensor(std::move(value), false); }
  static Tensor parameter(NDArray<T> value) { return Tensor(std::move(value), true); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  const NDArray<T>& value() const { return node_->value; }
  std::span<const T> data() const { return node_->value.data(); }
  T item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape().str());
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  /// Gradient view; zeros when no gradient has been accumulated.
  NDArray<T> grad() const {
    if (!has_grad()) return NDArray<T>(shape());
    return NDArray<T>(shape(), node_->grad);
  }
  std::span<const T> grad_data() const { return node_->grad; }

  /// Gradient buffer, allocated zero-filled on first use.
  std::vector<T>& grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(size(), T(0));
    return node_->grad;
  }

  void zero_grad() const {
    if (node_) node_->grad.clear();
  }

  /// In-place update hook for optimizers and checkpoint loading. Only valid
  /// between graphs; a graph never observes a tensor changing underneath it.
  std::span<T> mutable_data() const { return node_->value.data(); }

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  template <class>
  friend class Graph;

  Tensor(NDArray<T> value, bool requires_grad)
      : node_(std::make_shared<TensorNode<T>>(TensorNode<T>{std::move(value), {}, requires_grad})) {}

  std::shared_ptr<TensorNode<T>> node_;
};

/// Append-only tape of differentiable operations.
///
/// Operations are recorded in execution order, so every record's inputs are
/// either leaves or outputs of earlier records. `backward` walks the tape once
/// in reverse.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  struct Options {
    bool record = true;         // false: inference, nothing is taped
    bool check_finite = true;   // throw NumericError on NaN/Inf outputs
    std::string faulty_op;      // gradcheck fault injection; empty in production
    bool trace_branches = false; // fold piecewise branch choices into branch_signature()
  };

  Graph() = default;
  explicit Graph(Options options) : options_(std::move(options)) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Options& options() const noexcept { return options_; }
  bool recording() const noexcept { return options_.record; }
  std::size_t size() const noexcept { return tape_.size(); }
  const std::string& op_at(std::size_t i) const { return tape_.at(i).op; }

  /// True when `op`'s backward should be deliberately corrupted (its incoming
  /// gradient is skewed by 25%).
  bool fault(std::string_view op) const noexcept { return options_.faulty_op == op; }

  bool tracing_branches() const noexcept { return options_.trace_branches; }

  /// Records which piece of a piecewise op was taken. Two evaluations with
  /// equal signatures lie on the same smooth piece of the computation.
  void note_branch(std::uint64_t choice) noexcept {
    branch_sig_ = (branch_sig_ ^ (choice + 0x9e3779b97f4a7c15ULL + (branch_sig_ << 6) + (branch_sig_ >> 2)));
  }
  std::uint64_t branch_signature() const noexcept { return branch_sig_; }

  /// Wraps `out` as the result of `op` over `inputs`. The backward closure is
  /// taped only when recording and at least one input requires a gradient.
  Tensor<T> emit(std::string_view op, NDArray<T> out, std::initializer_list<Tensor<T>> inputs,
                 BackwardFn backward) {
    return emit(op, std::move(out), std::vector<Tensor<T>>(inputs), std::move(backward));
  }

  Tensor<T> emit(std::string_view op, NDArray<T> out, const std::vector<Tensor<T>>& inputs,
                 BackwardFn backward) {
    if (options_.check_finite && !out.all_finite())
      throw NumericError(std::string(op), "non-finite value produced by " + std::string(op));
    bool needs = false;
    if (options_.record)
      for (const auto& in : inputs) needs = needs || in.requires_grad();
    Tensor<T> result(std::move(out), needs);
    if (needs) {
      Record rec{std::string(op), result.node_, std::move(backward), {}};
      rec.inputs.reserve(inputs.size());
      for (const auto& in : inputs) rec.inputs.push_back(in.node_);
      tape_.push_back(std::move(rec));
    }
    return result;
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
  void backward(const Tensor<T>& root) {
    if (!root.defined() || root.size() != 1)
      throw ContractError("backward requires a scalar root");
    if (!root.requires_grad()) return;
    root.node_->grad.assign(1, T(1));
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      if (fault(it->op)) {
        std::vector<T> skewed(it->output->grad);
        for (auto& v : skewed) v *= T(1.25);
        it->backward(skewed);
      } else {
        it->backward(it->output->grad);
      }
      if (options_.check_finite)
        for (const auto& in : it->inputs)
          for (T v : in->grad)
            if (!std::isfinite(v))
              throw NumericError(it->op, "non-finite gradient produced by " + it->op + " backward");
    }
  }

 private:
  struct Record {
    std::string op;
    std::shared_ptr<TensorNode<T>> output;
    BackwardFn backward;
    std::vector<std::shared_ptr<TensorNode<T>>> inputs;
  };

  Options options_;
  std::vector<Record> tape_;
  std::uint64_t branch_sig_ = 0;
};

/// Adds `g` into `t`'s gradient when `t` takes part in differentiation.
template <class T>
void accumulate_grad(const Tensor<T>& t, std::span<const T> g) {
  if (!t.requires_grad()) return;
  auto& buf = t.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace ripeseg
