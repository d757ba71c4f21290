#pragma once

// Patch partition, patch/position embedding and the stacked contextual
// multi-head self-attention encoders that produce the projections p_t.

#include <cmath>
#include <string>
#include <vector>

#include "ripeseg/model/layers.hpp"

namespace ripeseg {

struct PatchConfig {
  std::size_t patch = 8;    // P, square patch side in pixels
  std::size_t embed = 64;   // l
  std::size_t heads = 4;    // h
  std::size_t depth = 3;    // t stacked encoders
  std::size_t ff_mult = 4;  // feedforward hidden width = ff_mult * l

  void validate() const {
    if (patch == 0) throw ConfigError("patch size must be positive");
    if (embed == 0 || heads == 0) throw ConfigError("embed width and head count must be positive");
    if (embed % heads != 0)
      throw ConfigError("embed width " + std::to_string(embed) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    if (depth == 0) throw ConfigError("transformer depth must be >= 1");
    if (ff_mult == 0) throw ConfigError("feedforward multiplier must be positive");
  }
};

/// Patch side P = sqrt(R * C / n_p); throws unless it is an exact integer
/// that tiles the image.
inline std::size_t patch_side(std::size_t rows, std::size_t cols, std::size_t n_patches) {
  if (n_patches == 0 || (rows * cols) % n_patches != 0)
    throw ShapeError("R*C is not divisible by the patch count");
  const auto area = rows * cols / n_patches;
  const auto p = static_cast<std::size_t>(std::llround(std::sqrt(double(area))));
  if (p * p != area || rows % p != 0 || cols % p != 0)
    throw ShapeError("patch count " + std::to_string(n_patches) + " does not tile a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " image with square patches");
  return p;
}

struct PatchGrid {
  std::size_t rows, cols;
  std::size_t count() const { return rows * cols; }
};

inline PatchGrid patch_grid(std::size_t h, std::size_t w, std::size_t p) {
  if (p == 0 || h % p != 0 || w % p != 0)
    throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible into " + std::to_string(p) + "px patches");
  return {h / p, w / p};
}

/// Splits x (HxWxC or NxHxWxC) into non-overlapping PxP patches.
/// Result: [n_p, P*P*C] (or [N, n_p, P*P*C]); patches row-major over the
/// grid, pixels row-major within a patch.
template <class T>
Tensor<T> partition_patches(Graph<T>& g, Tensor<T> x, std::size_t p) {
  const auto d = ImageDims::of(x.shape());
  const auto grid = patch_grid(d.h, d.w, p);
  const auto width = p * p * d.c;
  std::vector<std::size_t> src;
  src.reserve(x.size());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t gy = 0; gy < grid.rows; ++gy)
      for (std::size_t gx = 0; gx < grid.cols; ++gx)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t xx = 0; xx < p; ++xx)
            for (std::size_t ch = 0; ch < d.c; ++ch)
              src.push_back(((n * d.h + gy * p + y) * d.w + gx * p + xx) * d.c + ch);
  Shape out = x.shape().rank() == 3 ? Shape{grid.count(), width} : Shape{d.n, grid.count(), width};
  return ops::detail::gather(g, "partition_patches", x, std::move(out), std::move(src));
}

/// Inverse of partition_patches for one image.
template <class T>
NDArray<T> assemble_patches(const NDArray<T>& patches, std::size_t h, std::size_t w, std::size_t c,
                            std::size_t p) {
  const auto grid = patch_grid(h, w, p);
  if (patches.size() != h * w * c) throw ShapeError("assemble_patches: size mismatch");
  NDArray<T> img(Shape{h, w, c});
  std::size_t k = 0;
  for (std::size_t gy = 0; gy < grid.rows; ++gy)
    for (std::size_t gx = 0; gx < grid.cols; ++gx)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t xx = 0; xx < p; ++xx)
          for (std::size_t ch = 0; ch < c; ++ch) img[((gy * p + y) * w + gx * p + xx) * c + ch] = patches[k++];
  return img;
}

/// l_t (patch pixels -> l) plus the learnable positional table projected by
/// f_p. Both maps are bias-free so q^o is additive in (patches, positions).
template <class T>
struct PatchEmbedder {
  Tensor<T> patch_proj;  // P*P*C x l
  Tensor<T> positions;   // n_p x l
  Tensor<T> pos_proj;    // l x l

  static PatchEmbedder make(ParameterStore<T>& store, const std::string& name, std::size_t patch_width,
                            std::size_t n_patches, std::size_t l, Rng& rng) {
    PatchEmbedder e;
    e.patch_proj = store.add(name + ".patch_proj", fan_in_uniform<T>(Shape{patch_width, l}, patch_width, rng));
    e.positions = store.add(name + ".positions", fan_in_uniform<T>(Shape{n_patches, l}, l, rng));
    e.pos_proj = store.add(name + ".pos_proj", fan_in_uniform<T>(Shape{l, l}, l, rng));
    return e;
  }
};

/// q^o = l_t(x^p) + f_p(x^e), row i per patch i.
template <class T>
Tensor<T> embed(Graph<T>& g, const Tensor<T>& patches, const PatchEmbedder<T>& emb) {
  const auto rank = patches.shape().rank();
  if (rank != 2 && rank != 3) throw ShapeError("embed: patches must be [n_p x w] or [N x n_p x w]");
  const auto n_p = patches.shape()[rank - 2];
  if (n_p != emb.positions.shape()[0])
    throw ShapeError("embed: " + std::to_string(n_p) + " patches but positional table has " +
                     std::to_string(emb.positions.shape()[0]) + " rows");
  if (patches.shape().back() != emb.patch_proj.shape()[0])
    throw ShapeError("embed: patch width " + std::to_string(patches.shape().back()) + " vs projection " +
                     emb.patch_proj.shape().str());
  auto projected = ops::linear(g, patches, emb.patch_proj);
  auto pos = ops::linear(g, emb.positions, emb.pos_proj);
  return ops::add_broadcast(g, projected, pos);
}

template <class T>
struct Attention {
  Tensor<T> output;   // [.. x n_p x d]
  Tensor<T> weights;  // [.. x n_p x n_p], row-stochastic
};

/// A = softmax(Q K^T / sqrt(l)) V for one head. Q, K, V are [n_p x d] or
/// [N x n_p x d]; `scale_width` is l, the full embedding width.
template <class T>
Attention<T> attention_head(Graph<T>& g, Tensor<T> q, Tensor<T> k, Tensor<T> v, std::size_t scale_width) {
  const bool single = q.shape().rank() == 2;
  if (single) {
    q = ops::reshape(g, q, Shape{1, q.shape()[0], q.shape()[1]});
    k = ops::reshape(g, k, Shape{1, k.shape()[0], k.shape()[1]});
    v = ops::reshape(g, v, Shape{1, v.shape()[0], v.shape()[1]});
  }
  if (q.shape() != k.shape() || q.shape()[0] != v.shape()[0] || q.shape()[1] != v.shape()[1])
    throw ShapeError("attention_head: Q/K/V shapes disagree");
  auto logits = ops::scale(g, ops::bmm(g, q, k, true), T(1) / std::sqrt(T(scale_width)));
  auto weights = ops::softmax_temp(g, logits, 1.0);
  auto out = ops::bmm(g, weights, v);
  if (single) {
    out = ops::reshape(g, out, Shape{out.shape()[1], out.shape()[2]});
    weights = ops::reshape(g, weights, Shape{weights.shape()[1], weights.shape()[2]});
  }
  return {out, weights};
}

template <class T>
struct TransformerLayer {
  LayerNorm<T> norm1, norm2;
  Tensor<T> wq, wk, wv;  // l x l, sliced into h column blocks
  Linear<T> ff1, ff2;    // l -> ff_mult*l -> l
  std::size_t heads = 1;

  static TransformerLayer make(ParameterStore<T>& store, const std::string& name, const PatchConfig& cfg,
                               Rng& rng) {
    const auto l = cfg.embed;
    TransformerLayer t;
    t.norm1 = LayerNorm<T>::make(store, name + ".norm1", l);
    t.wq = store.add(name + ".wq", fan_in_uniform<T>(Shape{l, l}, l, rng));
    t.wk = store.add(name + ".wk", fan_in_uniform<T>(Shape{l, l}, l, rng));
    t.wv = store.add(name + ".wv", fan_in_uniform<T>(Shape{l, l}, l, rng));
    t.norm2 = LayerNorm<T>::make(store, name + ".norm2", l);
    t.ff1 = Linear<T>::make(store, name + ".ff1", l, cfg.ff_mult * l, rng, true);
    t.ff2 = Linear<T>::make(store, name + ".ff2", cfg.ff_mult * l, l, rng, true);
    t.heads = cfg.heads;
    return t;
  }
};

/// Contextual multi-head self-attention: per-head attention over column
/// slices of the Q/K/V projections, concatenated back to width l.
template <class T>
Tensor<T> cmsa(Graph<T>& g, const Tensor<T>& q_norm, const TransformerLayer<T>& layer,
               std::vector<Tensor<T>>* attention_maps = nullptr) {
  const auto l = q_norm.shape().back();
  if (layer.heads == 0 || l % layer.heads != 0)
    throw ConfigError("cmsa: width " + std::to_string(l) + " not divisible by " +
                      std::to_string(layer.heads) + " heads");
  const auto d = l / layer.heads;
  auto q = ops::linear(g, q_norm, layer.wq);
  auto k = ops::linear(g, q_norm, layer.wk);
  auto v = ops::linear(g, q_norm, layer.wv);
  if (layer.heads == 1) {
    auto a = attention_head(g, q, k, v, l);
    if (attention_maps) attention_maps->push_back(a.weights);
    return a.output;
  }
  std::vector<Tensor<T>> heads;
  for (std::size_t j = 0; j < layer.heads; ++j) {
    auto a = attention_head(g, ops::slice_last(g, q, j * d, (j + 1) * d), ops::slice_last(g, k, j * d, (j + 1) * d),
                            ops::slice_last(g, v, j * d, (j + 1) * d), l);
    if (attention_maps) attention_maps->push_back(a.weights);
    heads.push_back(a.output);
  }
  return ops::concat_last(g, heads);
}

/// p = ff(a') + a' with a = cmsa(norm1(q)) + q and a' = norm2(a).
template <class T>
Tensor<T> encoder_layer(Graph<T>& g, const Tensor<T>& q, const TransformerLayer<T>& layer,
                        std::vector<Tensor<T>>* attention_maps = nullptr) {
  auto attended = ops::add(g, cmsa(g, layer.norm1(g, q), layer, attention_maps), q);
  auto normed = layer.norm2(g, attended);
  auto ff = layer.ff2(g, ops::relu(g, layer.ff1(g, normed)));
  return ops::add(g, ff, normed);
}

template <class T>
struct TransformerStack {
  PatchConfig config;
  PatchGrid grid{};
  PatchEmbedder<T> embedder;
  std::vector<TransformerLayer<T>> layers;

  static TransformerStack make(ParameterStore<T>& store, const PatchConfig& cfg, std::size_t h, std::size_t w,
                               std::size_t channels, Rng& rng) {
    cfg.validate();
    TransformerStack s;
    s.config = cfg;
    s.grid = patch_grid(h, w, cfg.patch);
    s.embedder = PatchEmbedder<T>::make(store, "transformer.embed", cfg.patch * cfg.patch * channels,
                                        s.grid.count(), cfg.embed, rng);
    for (std::size_t i = 0; i < cfg.depth; ++i)
      s.layers.push_back(TransformerLayer<T>::make(store, "transformer.layer" + std::to_string(i), cfg, rng));
    return s;
  }
};

/// Runs x through patch embedding and the t encoders; returns p_t with one
/// row per patch ([n_p x l] or [N x n_p x l]).
template <class T>
Tensor<T> transformer_stack(Graph<T>& g, const Tensor<T>& x, const TransformerStack<T>& stack,
                            std::vector<Tensor<T>>* attention_maps = nullptr) {
  auto q = embed(g, partition_patches(g, x, stack.config.patch), stack.embedder);
  for (const auto& layer : stack.layers) q = encoder_layer(g, q, layer, attention_maps);
  return q;
}

}  // namespace ripeseg
