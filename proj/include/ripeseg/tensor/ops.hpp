#pragma once

// Elementwise, reduction and matrix operations of the tensor engine.

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ripeseg/tensor/graph.hpp"

namespace ripeseg::ops {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <class T>
std::span<const T> view(const std::vector<T>& v) {
  return std::span<const T>(v.data(), v.size());
}

/// acc[j] += sum_i m[i][j], rows in order. Eigen's vectorized column
/// reduction splits work by buffer alignment, so its rounding varies with the
/// allocator between otherwise identical runs.
template <class T>
void add_column_sums(const T* m, std::size_t rows, std::size_t cols, T* acc) {
  std::vector<T> sum(cols, T(0));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) sum[j] += m[i * cols + j];
  for (std::size_t j = 0; j < cols; ++j) acc[j] += sum[j];
}

}  // namespace detail

template <class T>
Tensor<T> add(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  detail::require_same(a.shape(), b.shape(), "add");
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return g.emit("add", std::move(out), {a, b}, [a, b](std::span<const T> go) mutable {
    accumulate_grad(a, go);
    accumulate_grad(b, go);
  });
}

template <class T>
Tensor<T> sub(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return g.emit("sub", std::move(out), {a, b}, [a, b](std::span<const T> go) mutable {
    accumulate_grad(a, go);
    if (!b.requires_grad()) return;
    auto& gb = b.grad_buffer();
    for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
  });
}

template <class T>
Tensor<T> mul(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return g.emit("mul", std::move(out), {a, b}, [a, b](std::span<const T> go) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.data()[i];
    }
  });
}

/// a + b where b's shape equals the trailing axes of a; b repeats over the
/// leading axes.
template <class T>
Tensor<T> add_broadcast(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  const auto& ad = a.shape().dims();
  const auto& bd = b.shape().dims();
  if (bd.size() > ad.size() || !std::equal(bd.rbegin(), bd.rend(), ad.rbegin()))
    throw ShapeError("add_broadcast: " + b.shape().str() + " is not a suffix of " + a.shape().str());
  const auto inner = b.size(), outer = a.size() / inner;
  NDArray<T> out(a.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = a.data()[o * inner + i] + b.data()[i];
  return g.emit("add_broadcast", std::move(out), {a, b}, [a, b, outer, inner](std::span<const T> go) mutable {
    accumulate_grad(a, go);
    if (!b.requires_grad()) return;
    auto& gb = b.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) gb[i] += go[o * inner + i];
  });
}

/// Multiplication by a scalar constant.
template <class T>
Tensor<T> scale(Graph<T>& g, Tensor<T> a, T s) {
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return g.emit("scale", std::move(out), {a}, [a, s](std::span<const T> go) mutable {
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
  });
}

template <class T>
Tensor<T> relu(Graph<T>& g, Tensor<T> a) {
  NDArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  if (g.tracing_branches())
    for (std::size_t i = 0; i < out.size(); ++i) g.note_branch(a.data()[i] > T(0));
  return g.emit("relu", std::move(out), {a}, [a](std::span<const T> go) mutable {
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < go.size(); ++i)
      if (a.data()[i] > T(0)) ga[i] += go[i];
  });
}

/// Sum of all elements, accumulated in double.
template <class T>
Tensor<T> sum(Graph<T>& g, Tensor<T> a) {
  double acc = 0;
  for (T v : a.data()) acc += v;
  NDArray<T> out(Shape{1}, T(acc));
  return g.emit("sum", std::move(out), {a}, [a](std::span<const T> go) mutable {
    auto& ga = a.grad_buffer();
    for (auto& v : ga) v += go[0];
  });
}

template <class T>
Tensor<T> mean(Graph<T>& g, Tensor<T> a) {
  return scale(g, sum(g, a), T(1) / T(a.size()));
}

/// Weighted sum of scalars: sum_i w_i * x_i, accumulated in double.
template <class T>
Tensor<T> weighted_sum(Graph<T>& g, const std::vector<Tensor<T>>& xs, const std::vector<T>& ws) {
  if (xs.size() != ws.size() || xs.empty()) throw ContractError("weighted_sum: arity mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1) throw ShapeError("weighted_sum: operands must be scalars");
    acc += static_cast<double>(ws[i]) * static_cast<double>(xs[i].item());
  }
  return g.emit("weighted_sum", NDArray<T>(Shape{1}, T(acc)), xs,
                [xs, ws](std::span<const T> go) mutable {
                  for (std::size_t i = 0; i < xs.size(); ++i) {
                    std::vector<T> gi{go[0] * ws[i]};
                    accumulate_grad(xs[i], detail::view(gi));
                  }
                });
}

template <class T>
Tensor<T> reshape(Graph<T>& g, Tensor<T> a, Shape s) {
  if (s.numel() != a.size())
    throw ShapeError("reshape: " + a.shape().str() + " cannot become " + s.str());
  return g.emit("reshape", a.value().reshaped(std::move(s)), {a},
                [a](std::span<const T> go) mutable { accumulate_grad(a, go); });
}

/// Matrix product of a [m x k] and b [k x n].
template <class T>
Tensor<T> matmul(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2)
    throw ShapeError("matmul: operands must be rank 2");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dims differ " + a.shape().str() + " * " + b.shape().str());
  NDArray<T> out(Shape{m, n});
  MatMap<T>(out.data().data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  return g.emit("matmul", std::move(out), {a, b}, [a, b, m, k, n](std::span<const T> go) mutable {
    ConstMatMap<T> dc(go.data(), m, n);
    if (a.requires_grad())
      MatMap<T>(a.grad_buffer().data(), m, k).noalias() +=
          dc * ConstMatMap<T>(b.data().data(), k, n).transpose();
    if (b.requires_grad())
      MatMap<T>(b.grad_buffer().data(), k, n).noalias() +=
          ConstMatMap<T>(a.data().data(), m, k).transpose() * dc;
  });
}

/// Batched product of a [B x m x k] with b [B x k x n], or with b^T when
/// `transpose_b` (b is then [B x n x k]).
template <class T>
Tensor<T> bmm(Graph<T>& g, Tensor<T> a, Tensor<T> b, bool transpose_b = false) {
  if (a.shape().rank() != 3 || b.shape().rank() != 3) throw ShapeError("bmm: operands must be rank 3");
  const auto batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const auto n = transpose_b ? b.shape()[1] : b.shape()[2];
  const auto bk = transpose_b ? b.shape()[2] : b.shape()[1];
  if (b.shape()[0] != batch || bk != k)
    throw ShapeError("bmm: incompatible " + a.shape().str() + " * " + b.shape().str());
  NDArray<T> out(Shape{batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatMap<T> ai(a.data().data() + i * m * k, m, k);
    MatMap<T> oi(out.data().data() + i * m * n, m, n);
    if (transpose_b)
      oi.noalias() = ai * ConstMatMap<T>(b.data().data() + i * n * k, n, k).transpose();
    else
      oi.noalias() = ai * ConstMatMap<T>(b.data().data() + i * k * n, k, n);
  }
  return g.emit("bmm", std::move(out), {a, b},
                [a, b, batch, m, k, n, transpose_b](std::span<const T> go) mutable {
                  for (std::size_t i = 0; i < batch; ++i) {
                    ConstMatMap<T> dc(go.data() + i * m * n, m, n);
                    ConstMatMap<T> ai(a.data().data() + i * m * k, m, k);
                    if (transpose_b) {
                      ConstMatMap<T> bi(b.data().data() + i * n * k, n, k);
                      if (a.requires_grad())
                        MatMap<T>(a.grad_buffer().data() + i * m * k, m, k).noalias() += dc * bi;
                      if (b.requires_grad())
                        MatMap<T>(b.grad_buffer().data() + i * n * k, n, k).noalias() +=
                            dc.transpose() * ai;
                    } else {
                      ConstMatMap<T> bi(b.data().data() + i * k * n, k, n);
                      if (a.requires_grad())
                        MatMap<T>(a.grad_buffer().data() + i * m * k, m, k).noalias() +=
                            dc * bi.transpose();
                      if (b.requires_grad())
                        MatMap<T>(b.grad_buffer().data() + i * k * n, k, n).noalias() +=
                            ai.transpose() * dc;
                    }
                  }
                });
}

/// y = x W + b over the last axis of x; leading axes are treated as rows.
/// `bias` may be undefined.
template <class T>
Tensor<T> linear(Graph<T>& g, Tensor<T> x, Tensor<T> w, Tensor<T> bias = {}) {
  if (w.shape().rank() != 2) throw ShapeError("linear: weight must be rank 2");
  const auto in = x.shape().back(), out_w = w.shape()[1], rows = x.shape().rows();
  if (w.shape()[0] != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + w.shape().str());
  if (bias.defined() && bias.size() != out_w) throw ShapeError("linear: bias width mismatch");
  NDArray<T> out(x.shape().with_last(out_w));
  MatMap<T> om(out.data().data(), rows, out_w);
  om.noalias() = ConstMatMap<T>(x.data().data(), rows, in) * ConstMatMap<T>(w.data().data(), in, out_w);
  if (bias.defined())
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), out_w);
  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return g.emit("linear", std::move(out), inputs,
                [x, w, bias, rows, in, out_w](std::span<const T> go) mutable {
                  ConstMatMap<T> dy(go.data(), rows, out_w);
                  if (x.requires_grad())
                    MatMap<T>(x.grad_buffer().data(), rows, in).noalias() +=
                        dy * ConstMatMap<T>(w.data().data(), in, out_w).transpose();
                  if (w.requires_grad())
                    MatMap<T>(w.grad_buffer().data(), in, out_w).noalias() +=
                        ConstMatMap<T>(x.data().data(), rows, in).transpose() * dy;
                  if (bias.defined() && bias.requires_grad())
                    detail::add_column_sums(go.data(), rows, out_w, bias.grad_buffer().data());
                });
}

/// Columns [begin, end) of the last axis.
template <class T>
Tensor<T> slice_last(Graph<T>& g, Tensor<T> x, std::size_t begin, std::size_t end) {
  const auto width = x.shape().back(), rows = x.shape().rows();
  if (begin >= end || end > width) throw ShapeError("slice_last: bad range");
  const auto sw = end - begin;
  NDArray<T> out(x.shape().with_last(sw));
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * width + begin, sw, out.data().data() + r * sw);
  return g.emit("slice_last", std::move(out), {x},
                [x, rows, width, begin, sw](std::span<const T> go) mutable {
                  auto& gx = x.grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < sw; ++j) gx[r * width + begin + j] += go[r * sw + j];
                });
}

/// Concatenation along the last axis; all leading axes must agree.
template <class T>
Tensor<T> concat_last(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_last: no operands");
  const auto rows = parts[0].shape().rows();
  std::size_t width = 0;
  for (const auto& p : parts) {
    if (p.shape().rank() != parts[0].shape().rank() || p.shape().rows() != rows ||
        p.shape().with_last(1) != parts[0].shape().with_last(1))
      throw ShapeError("concat_last: leading dims differ");
    width += p.shape().back();
  }
  NDArray<T> out(parts[0].shape().with_last(width));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto pw = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().data() + r * pw, pw, out.data().data() + r * width + offset);
    offset += pw;
  }
  return g.emit("concat_last", std::move(out), parts,
                [parts, rows, width](std::span<const T> go) mutable {
                  std::size_t off = 0;
                  for (auto& p : parts) {
                    const auto pw = p.shape().back();
                    if (p.requires_grad()) {
                      auto& gp = p.grad_buffer();
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < pw; ++j) gp[r * pw + j] += go[r * width + off + j];
                    }
                    off += pw;
                  }
                });
}

}  // namespace ripeseg::ops
