#pragma once

// Image and normalization primitives. Image tensors are channel-last, either
// HxWxC or NxHxWxC; outputs keep the rank of their input.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "ripeseg/tensor/ops.hpp"

namespace ripeseg::ops {

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

namespace detail {

struct ConvGeometry {
  ImageDims in;
  std::size_t kh, kw, cout, stride, pad, oh, ow;

  std::size_t patch() const { return kh * kw * in.c; }
  std::size_t out_rows() const { return in.n * oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, Conv2dSpec spec) {
  auto in = ImageDims::of(x);
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be kh x kw x Cin x Cout");
  if (w[2] != in.c)
    throw ShapeError("conv2d: weight expects " + std::to_string(w[2]) + " input channels, got " +
                     std::to_string(in.c));
  if (spec.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const auto ph = in.h + 2 * spec.pad, pw = in.w + 2 * spec.pad;
  if (w[0] > ph || w[1] > pw)
    throw ShapeError("conv2d: kernel " + w.str() + " larger than padded input " + x.str());
  return {in, w[0], w[1], w[3], spec.stride, spec.pad, (ph - w[0]) / spec.stride + 1,
          (pw - w[1]) / spec.stride + 1};
}

// Rows are output pixels, columns are (ky, kx, cin) in weight order.
template <class T>
void im2col(const T* x, const ConvGeometry& geo, T* cols) {
  const auto c = geo.in.c, patch = geo.patch();
  for (std::size_t n = 0; n < geo.in.n; ++n)
    for (std::size_t oy = 0; oy < geo.oh; ++oy)
      for (std::size_t ox = 0; ox < geo.ow; ++ox) {
        T* row = cols + ((n * geo.oh + oy) * geo.ow + ox) * patch;
        for (std::size_t ky = 0; ky < geo.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                          static_cast<std::ptrdiff_t>(geo.pad);
          for (std::size_t kx = 0; kx < geo.kw; ++kx, row += c) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                            static_cast<std::ptrdiff_t>(geo.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(geo.in.h) ||
                ix >= static_cast<std::ptrdiff_t>(geo.in.w)) {
              std::fill_n(row, c, T(0));
            } else {
              std::memcpy(row, x + ((n * geo.in.h + iy) * geo.in.w + ix) * c, c * sizeof(T));
            }
          }
        }
      }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& geo, T* dx) {
  const auto c = geo.in.c, patch = geo.patch();
  for (std::size_t n = 0; n < geo.in.n; ++n)
    for (std::size_t oy = 0; oy < geo.oh; ++oy)
      for (std::size_t ox = 0; ox < geo.ow; ++ox) {
        const T* row = cols + ((n * geo.oh + oy) * geo.ow + ox) * patch;
        for (std::size_t ky = 0; ky < geo.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                          static_cast<std::ptrdiff_t>(geo.pad);
          for (std::size_t kx = 0; kx < geo.kw; ++kx, row += c) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                            static_cast<std::ptrdiff_t>(geo.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(geo.in.h) ||
                ix >= static_cast<std::ptrdiff_t>(geo.in.w))
              continue;
            T* dst = dx + ((n * geo.in.h + iy) * geo.in.w + ix) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += row[ch];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation. w is kh x kw x Cin x Cout; bias (optional) has Cout
/// entries. Output extent per axis is floor((in + 2 pad - k) / stride) + 1.
template <class T>
Tensor<T> conv2d(Graph<T>& g, Tensor<T> x, Tensor<T> w, Tensor<T> bias = {}, Conv2dSpec spec = {}) {
  const auto geo = detail::conv_geometry(x.shape(), w.shape(), spec);
  if (bias.defined() && bias.size() != geo.cout) throw ShapeError("conv2d: bias width mismatch");
  const auto rows = geo.out_rows(), patch = geo.patch();
  NDArray<T> out(ImageDims::shape_like(x.shape(), geo.in.n, geo.oh, geo.ow, geo.cout));
  MatMap<T> om(out.data().data(), rows, geo.cout);
  ConstMatMap<T> wm(w.data().data(), patch, geo.cout);
  if (geo.pointwise()) {
    om.noalias() = ConstMatMap<T>(x.data().data(), rows, patch) * wm;
  } else {
    std::vector<T> cols(rows * patch);
    detail::im2col(x.data().data(), geo, cols.data());
    om.noalias() = ConstMatMap<T>(cols.data(), rows, patch) * wm;
  }
  if (bias.defined())
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), geo.cout);

  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return g.emit("conv2d", std::move(out), inputs, [x, w, bias, geo](std::span<const T> go) mutable {
    const auto rows = geo.out_rows(), patch = geo.patch();
    ConstMatMap<T> dy(go.data(), rows, geo.cout);
    if (bias.defined() && bias.requires_grad())
      detail::add_column_sums(go.data(), rows, geo.cout, bias.grad_buffer().data());
    if (geo.pointwise()) {
      ConstMatMap<T> xm(x.data().data(), rows, patch);
      if (w.requires_grad())
        MatMap<T>(w.grad_buffer().data(), patch, geo.cout).noalias() += xm.transpose() * dy;
      if (x.requires_grad())
        MatMap<T>(x.grad_buffer().data(), rows, patch).noalias() +=
            dy * ConstMatMap<T>(w.data().data(), patch, geo.cout).transpose();
      return;
    }
    std::vector<T> cols(rows * patch);
    if (w.requires_grad()) {
      detail::im2col(x.data().data(), geo, cols.data());
      MatMap<T>(w.grad_buffer().data(), patch, geo.cout).noalias() +=
          ConstMatMap<T>(cols.data(), rows, patch).transpose() * dy;
    }
    if (x.requires_grad()) {
      MatMap<T>(cols.data(), rows, patch).noalias() =
          dy * ConstMatMap<T>(w.data().data(), patch, geo.cout).transpose();
      detail::col2im(cols.data(), geo, x.grad_buffer().data());
    }
  });
}

/// Running per-channel statistics owned by a batchnorm layer.
template <class T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit RunningStats(std::size_t channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

enum class NormMode { train, eval };

struct BatchNormSpec {
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

/// Per-channel normalization over all non-channel axes. Train mode normalizes
/// with batch statistics and folds them into `stats`; eval mode reads `stats`.
template <class T>
Tensor<T> batchnorm(Graph<T>& g, Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, RunningStats<T>& stats,
                    NormMode mode, BatchNormSpec spec = {}) {
  const auto c = x.shape().back(), m = x.shape().rows();
  if (gamma.size() != c || beta.size() != c || stats.mean.size() != c)
    throw ShapeError("batchnorm: parameter width does not match channels of " + x.shape().str());
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  const T* xd = x.data().data();
  if (mode == NormMode::train) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) mu[ch] += xd[r * c + ch];
    for (auto& v : mu) v /= double(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = xd[r * c + ch] - mu[ch];
        var[ch] += d * d;
      }
    for (auto& v : var) v /= double(m);
    for (std::size_t ch = 0; ch < c; ++ch) {
      stats.mean[ch] = T(spec.momentum * stats.mean[ch] + (1 - spec.momentum) * mu[ch]);
      stats.var[ch] = T(spec.momentum * stats.var[ch] + (1 - spec.momentum) * var[ch]);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.mean[ch];
      var[ch] = stats.var[ch];
    }
  }
  std::vector<double> inv(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv[ch] = 1.0 / std::sqrt(var[ch] + spec.eps);

  NDArray<T> out(x.shape());
  NDArray<T> xhat(x.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double h = (xd[r * c + ch] - mu[ch]) * inv[ch];
      xhat[r * c + ch] = T(h);
      out[r * c + ch] = T(h * gamma.data()[ch] + beta.data()[ch]);
    }

  const bool train = mode == NormMode::train;
  return g.emit("batchnorm", std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv, m, c, train](std::span<const T> go) mutable {
                  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
                  for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      sum_dy[ch] += go[r * c + ch];
                      sum_dy_xhat[ch] += double(go[r * c + ch]) * xhat[r * c + ch];
                    }
                  if (gamma.requires_grad()) {
                    auto& gg = gamma.grad_buffer();
                    for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += T(sum_dy_xhat[ch]);
                  }
                  if (beta.requires_grad()) {
                    auto& gb = beta.grad_buffer();
                    for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += T(sum_dy[ch]);
                  }
                  if (!x.requires_grad()) return;
                  auto& gx = x.grad_buffer();
                  for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      const double k = gamma.data()[ch] * inv[ch];
                      const double dy = go[r * c + ch];
                      gx[r * c + ch] +=
                          train ? T(k * (dy - sum_dy[ch] / double(m) -
                                         double(xhat[r * c + ch]) * sum_dy_xhat[ch] / double(m)))
                                : T(k * dy);
                    }
                });
}

/// Normalization over the last axis followed by a per-feature affine map.
template <class T>
Tensor<T> layernorm(Graph<T>& g, Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, double eps = 1e-5) {
  const auto l = x.shape().back(), rows = x.shape().rows();
  if (gamma.size() != l || beta.size() != l) throw ShapeError("layernorm: parameter width mismatch");
  NDArray<T> out(x.shape()), xhat(x.shape());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * l;
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < l; ++j) mu += xr[j];
    mu /= double(l);
    for (std::size_t j = 0; j < l; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= double(l);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < l; ++j) {
      const double h = (xr[j] - mu) * inv[r];
      xhat[r * l + j] = T(h);
      out[r * l + j] = T(h * gamma.data()[j] + beta.data()[j]);
    }
  }
  return g.emit("layernorm", std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv, rows, l](std::span<const T> go) mutable {
                  if (gamma.requires_grad() || beta.requires_grad()) {
                    std::vector<double> sg(l, 0.0), sb(l, 0.0);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < l; ++j) {
                        sg[j] += double(go[r * l + j]) * xhat[r * l + j];
                        sb[j] += go[r * l + j];
                      }
                    if (gamma.requires_grad()) {
                      auto& gg = gamma.grad_buffer();
                      for (std::size_t j = 0; j < l; ++j) gg[j] += T(sg[j]);
                    }
                    if (beta.requires_grad()) {
                      auto& gb = beta.grad_buffer();
                      for (std::size_t j = 0; j < l; ++j) gb[j] += T(sb[j]);
                    }
                  }
                  if (!x.requires_grad()) return;
                  auto& gx = x.grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double s1 = 0, s2 = 0;
                    for (std::size_t j = 0; j < l; ++j) {
                      const double d = double(go[r * l + j]) * gamma.data()[j];
                      s1 += d;
                      s2 += d * xhat[r * l + j];
                    }
                    for (std::size_t j = 0; j < l; ++j) {
                      const double d = double(go[r * l + j]) * gamma.data()[j];
                      gx[r * l + j] +=
                          T(inv[r] * (d - s1 / double(l) - double(xhat[r * l + j]) * s2 / double(l)));
                    }
                  }
                });
}

/// softmax(logits / tau) over the last axis, stabilized by max subtraction.
template <class T>
Tensor<T> softmax_temp(Graph<T>& g, Tensor<T> logits, double tau = 1.0) {
  if (!(tau > 0)) throw ConfigError("softmax_temp: temperature must be positive");
  const auto c = logits.shape().back(), rows = logits.shape().rows();
  NDArray<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* lr = logits.data().data() + r * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, double(lr[j]) / tau);
    double z = 0;
    std::vector<double> e(c);
    for (std::size_t j = 0; j < c; ++j) z += (e[j] = std::exp(double(lr[j]) / tau - mx));
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = T(e[j] / z);
  }
  auto probs = out;
  return g.emit("softmax_temp", std::move(out), {logits},
                [logits, probs = std::move(probs), rows, c, tau](std::span<const T> go) mutable {
                  auto& gl = logits.grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0;
                    for (std::size_t j = 0; j < c; ++j) dot += double(go[r * c + j]) * probs[r * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                      gl[r * c + j] += T(probs[r * c + j] * (go[r * c + j] - dot) / tau);
                  }
                });
}

/// Source positions of a 2x2 max pooling, one flat index (into the pre-pool
/// tensor) per pooled element.
struct PoolIndices {
  Shape pooled;
  Shape source;
  std::vector<std::size_t> argmax;
};

template <class T>
struct Pooled {
  Tensor<T> values;
  PoolIndices indices;
};

/// 2x2 stride-2 max pooling. Ties resolve to the first element in row-major
/// window order.
template <class T>
Pooled<T> maxpool2x2(Graph<T>& g, Tensor<T> x) {
  const auto d = ImageDims::of(x.shape());
  if (d.h % 2 || d.w % 2) throw ShapeError("maxpool2x2: odd spatial dims " + x.shape().str());
  const auto oh = d.h / 2, ow = d.w / 2;
  PoolIndices idx{ImageDims::shape_like(x.shape(), d.n, oh, ow, d.c), x.shape(), {}};
  NDArray<T> out(idx.pooled);
  idx.argmax.resize(out.size());
  const T* xd = x.data().data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t ch = 0; ch < d.c; ++ch) {
          std::size_t best = ((n * d.h + 2 * y) * d.w + 2 * xx) * d.c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const auto at = ((n * d.h + 2 * y + dy) * d.w + 2 * xx + dx) * d.c + ch;
              if (xd[at] > xd[best]) best = at;
            }
          const auto o = ((n * oh + y) * ow + xx) * d.c + ch;
          out[o] = xd[best];
          idx.argmax[o] = best;
        }
  if (g.tracing_branches())
    for (auto a : idx.argmax) g.note_branch(a);
  auto argmax = idx.argmax;
  auto values = g.emit("maxpool2x2", std::move(out), {x},
                       [x, argmax = std::move(argmax)](std::span<const T> go) mutable {
                         auto& gx = x.grad_buffer();
                         for (std::size_t i = 0; i < go.size(); ++i) gx[argmax[i]] += go[i];
                       });
  return {std::move(values), std::move(idx)};
}

/// Places each element of y at its recorded source position in a zero tensor
/// of shape `out`.
template <class T>
Tensor<T> max_unpool2x2(Graph<T>& g, Tensor<T> y, const PoolIndices& idx, const Shape& out) {
  if (y.shape() != idx.pooled)
    throw CorruptIndexError("max_unpool2x2: indices recorded for " + idx.pooled.str() + ", got " +
                            y.shape().str());
  if (idx.argmax.size() != y.size()) throw CorruptIndexError("max_unpool2x2: index count mismatch");
  const auto total = out.numel();
  NDArray<T> res(out);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (idx.argmax[i] >= total)
      throw CorruptIndexError("max_unpool2x2: index " + std::to_string(idx.argmax[i]) +
                              " outside " + out.str());
    res[idx.argmax[i]] = y.data()[i];
  }
  auto argmax = idx.argmax;
  return g.emit("max_unpool2x2", std::move(res), {y},
                [y, argmax = std::move(argmax)](std::span<const T> go) mutable {
                  auto& gy = y.grad_buffer();
                  for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += go[argmax[i]];
                });
}

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

// align_corners=false: source = (dst + 0.5) * in / out - 0.5, clamped.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double ratio = double(in) / double(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (double(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const auto hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - double(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resampling of the spatial axes.
template <class T>
Tensor<T> resize_bilinear(Graph<T>& g, Tensor<T> x, std::size_t new_h, std::size_t new_w) {
  if (new_h == 0 || new_w == 0) throw ShapeError("resize_bilinear: target dims must be >= 1");
  const auto d = ImageDims::of(x.shape());
  const auto ty = detail::lerp_taps(d.h, new_h), tx = detail::lerp_taps(d.w, new_w);
  NDArray<T> out(ImageDims::shape_like(x.shape(), d.n, new_h, new_w, d.c));
  const T* xd = x.data().data();
  auto at = [&](std::size_t n, std::size_t y, std::size_t xx) { return ((n * d.h + y) * d.w + xx) * d.c; };
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t y = 0; y < new_h; ++y)
      for (std::size_t xx = 0; xx < new_w; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        T* o = out.data().data() + ((n * new_h + y) * new_w + xx) * d.c;
        for (std::size_t ch = 0; ch < d.c; ++ch) {
          const double top = xd[at(n, a.lo, b.lo) + ch] * (1 - b.frac) + xd[at(n, a.lo, b.hi) + ch] * b.frac;
          const double bot = xd[at(n, a.hi, b.lo) + ch] * (1 - b.frac) + xd[at(n, a.hi, b.hi) + ch] * b.frac;
          o[ch] = T(top * (1 - a.frac) + bot * a.frac);
        }
      }
  return g.emit("resize_bilinear", std::move(out), {x},
                [x, d, ty, tx, new_h, new_w](std::span<const T> go) mutable {
                  auto& gx = x.grad_buffer();
                  auto at = [&](std::size_t n, std::size_t y, std::size_t xx) {
                    return ((n * d.h + y) * d.w + xx) * d.c;
                  };
                  for (std::size_t n = 0; n < d.n; ++n)
                    for (std::size_t y = 0; y < new_h; ++y)
                      for (std::size_t xx = 0; xx < new_w; ++xx) {
                        const auto& a = ty[y];
                        const auto& b = tx[xx];
                        const T* o = go.data() + ((n * new_h + y) * new_w + xx) * d.c;
                        for (std::size_t ch = 0; ch < d.c; ++ch) {
                          const double v = o[ch];
                          gx[at(n, a.lo, b.lo) + ch] += T(v * (1 - a.frac) * (1 - b.frac));
                          gx[at(n, a.lo, b.hi) + ch] += T(v * (1 - a.frac) * b.frac);
                          gx[at(n, a.hi, b.lo) + ch] += T(v * a.frac * (1 - b.frac));
                          gx[at(n, a.hi, b.hi) + ch] += T(v * a.frac * b.frac);
                        }
                      }
                });
}

namespace detail {

// Mirror index without edge repetition, periodic for offsets beyond one
// reflection (period 2(n-1)).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

// Gathers out[i] = x[src[i]] with a scatter-add backward.
template <class T>
Tensor<T> gather(Graph<T>& g, const char* op, Tensor<T> x, Shape out_shape, std::vector<std::size_t> src) {
  NDArray<T> out(std::move(out_shape));
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x.data()[src[i]];
  return g.emit(op, std::move(out), {x}, [x, src = std::move(src)](std::span<const T> go) mutable {
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < go.size(); ++i) gx[src[i]] += go[i];
  });
}

}  // namespace detail

/// Reflect-pads the spatial axes to (h + top + bottom) x (w + left + right).
template <class T>
Tensor<T> pad_reflect(Graph<T>& g, Tensor<T> x, std::size_t top, std::size_t bottom, std::size_t left,
                      std::size_t right) {
  const auto d = ImageDims::of(x.shape());
  const auto oh = d.h + top + bottom, ow = d.w + left + right;
  std::vector<std::size_t> src(d.n * oh * ow * d.c);
  std::size_t k = 0;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t y = 0; y < oh; ++y) {
      const auto sy = detail::reflect_index(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(top), d.h);
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const auto sx =
            detail::reflect_index(static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(left), d.w);
        for (std::size_t ch = 0; ch < d.c; ++ch) src[k++] = ((n * d.h + sy) * d.w + sx) * d.c + ch;
      }
    }
  return detail::gather(g, "pad_reflect", x, ImageDims::shape_like(x.shape(), d.n, oh, ow, d.c), std::move(src));
}

/// Spatial window [top, top+h) x [left, left+w).
template <class T>
Tensor<T> crop(Graph<T>& g, Tensor<T> x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  const auto d = ImageDims::of(x.shape());
  if (top + h > d.h || left + w > d.w) throw ShapeError("crop: window exceeds " + x.shape().str());
  std::vector<std::size_t> src(d.n * h * w * d.c);
  std::size_t k = 0;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t ch = 0; ch < d.c; ++ch) src[k++] = ((n * d.h + top + y) * d.w + left + xx) * d.c + ch;
  return detail::gather(g, "crop", x, ImageDims::shape_like(x.shape(), d.n, h, w, d.c), std::move(src));
}

}  // namespace ripeseg::ops
