#pragma once

// The segmentation network: SPB/RB convolutional encoder, transformer
// projections fused into the latent features, and the max-unpooling decoder
// with skip connections.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ripeseg/model/arch.hpp"
#include "ripeseg/model/layers.hpp"
#include "ripeseg/transformer/transformer.hpp"

namespace ripeseg {

using ops::NormMode;

/// Shape-preservation block: 3x3 conv-BN-ReLU, 3x3 conv-BN, 3x3 conv-BN-ReLU,
/// 1x1 conv-BN, plus the block input when channel counts match.
template <class T>
struct Spb {
  Conv<T> conv[4];
  BatchNorm<T> bn[4];
  bool residual = false;

  static Spb make(ParameterStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
    Spb b;
    for (int i = 0; i < 4; ++i) {
      const auto k = i == 3 ? 1 : 3;
      const auto in = i == 0 ? cin : cout;
      const auto tag = name + ".conv" + std::to_string(i);
      b.conv[i] = Conv<T>::make(store, tag, k, in, cout, rng, false);
      b.bn[i] = BatchNorm<T>::make(store, name + ".bn" + std::to_string(i), cout);
    }
    b.residual = cin == cout;
    return b;
  }
};

template <class T>
Tensor<T> spb_forward(Graph<T>& g, const Tensor<T>& x, const Spb<T>& b, NormMode mode) {
  auto h = ops::relu(g, b.bn[0](g, b.conv[0](g, x), mode));
  h = b.bn[1](g, b.conv[1](g, h), mode);
  h = ops::relu(g, b.bn[2](g, b.conv[2](g, h), mode));
  h = b.bn[3](g, b.conv[3](g, h), mode);
  return b.residual ? ops::add(g, h, x) : h;
}

/// Residual block with downsampling: relu(main(x) + shortcut(x)) then 2x2 max
/// pooling. main = 3x3 conv-BN-ReLU, 3x3 conv-BN; shortcut = 1x1 conv-BN.
template <class T>
struct Rb {
  Conv<T> conv[3];
  BatchNorm<T> bn[3];

  static Rb make(ParameterStore<T>& store, const std::string& name, std::size_t c, Rng& rng) {
    Rb b;
    for (int i = 0; i < 3; ++i) {
      b.conv[i] = Conv<T>::make(store, name + ".conv" + std::to_string(i), i == 2 ? 1 : 3, c, c, rng, false);
      b.bn[i] = BatchNorm<T>::make(store, name + ".bn" + std::to_string(i), c);
    }
    return b;
  }
};

template <class T>
struct RbOutput {
  Tensor<T> pooled;
  Tensor<T> pre_pool;  // skip connection source
  ops::PoolIndices indices;
};

template <class T>
RbOutput<T> rb_forward(Graph<T>& g, const Tensor<T>& x, const Rb<T>& b, NormMode mode) {
  const auto d = ImageDims::of(x.shape());
  if (d.h % 2 || d.w % 2) throw ShapeError("residual block needs even spatial dims, got " + x.shape().str());
  auto h = ops::relu(g, b.bn[0](g, b.conv[0](g, x), mode));
  h = b.bn[1](g, b.conv[1](g, h), mode);
  auto shortcut = b.bn[2](g, b.conv[2](g, x), mode);
  auto pre = ops::relu(g, ops::add(g, h, shortcut));
  auto pooled = ops::maxpool2x2(g, pre);
  return {pooled.values, pre, std::move(pooled.indices)};
}

template <class T>
struct EncoderFeatures {
  Tensor<T> latent;                      // f_e
  std::vector<Tensor<T>> skips;          // one per level, pre-pooling
  std::vector<ops::PoolIndices> indices; // one per level
};

/// Encoder interface. Alternative backbones must produce five levels whose
/// skip widths match ArchConfig::widths.
template <class T>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::string id() const = 0;
  virtual EncoderFeatures<T> encode(Graph<T>& g, const Tensor<T>& x, NormMode mode) const = 0;
};

template <class T>
class SpbRbBackbone final : public Backbone<T> {
 public:
  SpbRbBackbone(const ArchConfig& arch, ParameterStore<T>& store, Rng& rng) {
    std::size_t cin = arch.channels;
    for (std::size_t lvl = 0; lvl < ArchConfig::kLevels; ++lvl) {
      Level level;
      const auto c = arch.widths[lvl];
      for (std::size_t s = 0; s < arch.spb_per_level[lvl]; ++s) {
        const auto name = "encoder.level" + std::to_string(lvl + 1) + ".spb" + std::to_string(s);
        level.spbs.push_back(Spb<T>::make(store, name, s == 0 ? cin : c, c, rng));
      }
      level.rb = Rb<T>::make(store, "encoder.level" + std::to_string(lvl + 1) + ".rb", c, rng);
      levels_.push_back(std::move(level));
      cin = c;
    }
  }

  std::string id() const override { return "spb-rb"; }

  EncoderFeatures<T> encode(Graph<T>& g, const Tensor<T>& x, NormMode mode) const override {
    EncoderFeatures<T> out;
    Tensor<T> h = x;
    for (const auto& level : levels_) {
      for (const auto& spb : level.spbs) h = spb_forward(g, h, spb, mode);
      auto r = rb_forward(g, h, level.rb, mode);
      out.skips.push_back(r.pre_pool);
      out.indices.push_back(std::move(r.indices));
      h = r.pooled;
    }
    out.latent = h;
    return out;
  }

 private:
  struct Level {
    std::vector<Spb<T>> spbs;
    Rb<T> rb;
  };
  std::vector<Level> levels_;
};

/// Backbone registry. Only the native SPB/RB encoder ships; pretrained
/// backbones would register here.
template <class T>
std::unique_ptr<Backbone<T>> make_backbone(const ArchConfig& arch, ParameterStore<T>& store, Rng& rng) {
  if (arch.backbone == "spb-rb") return std::make_unique<SpbRbBackbone<T>>(arch, store, rng);
  throw ConfigError("unknown backbone '" + arch.backbone + "' (available: spb-rb)");
}

/// f_d = f_e + f_e * proj(resize(grid(p_t))). p_t rows are laid out on the
/// grid_rows x grid_cols patch grid, resized to f_e's spatial dims and
/// projected to f_e's channel count by a 1x1 convolution.
template <class T>
Tensor<T> fuse(Graph<T>& g, const Tensor<T>& f_e, const Tensor<T>& p_t, std::size_t grid_rows,
               std::size_t grid_cols, const Conv<T>& proj) {
  const auto d = ImageDims::of(f_e.shape());
  const auto rank = p_t.shape().rank();
  const auto n_p = p_t.shape()[rank - 2], l = p_t.shape().back();
  if (grid_rows * grid_cols != n_p)
    throw ConfigError("fuse: " + std::to_string(n_p) + " projections do not fill a " +
                      std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " grid");
  const auto batch = rank == 3 ? p_t.shape()[0] : 1;
  if (batch != d.n) throw ShapeError("fuse: batch mismatch between f_e and p_t");
  auto grid = ops::reshape(g, p_t, ImageDims::shape_like(f_e.shape(), d.n, grid_rows, grid_cols, l));
  auto filt = proj(g, ops::resize_bilinear(g, grid, d.h, d.w));
  if (filt.shape() != f_e.shape())
    throw ShapeError("fuse: projected filter " + filt.shape().str() + " vs f_e " + f_e.shape().str());
  return ops::add(g, f_e, ops::mul(g, f_e, filt));
}

/// Square-grid form: n_p must be a perfect square.
template <class T>
Tensor<T> fuse(Graph<T>& g, const Tensor<T>& f_e, const Tensor<T>& p_t, const Conv<T>& proj) {
  const auto n_p = p_t.shape()[p_t.shape().rank() - 2];
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(n_p))));
  if (side * side != n_p) throw ConfigError("fuse: patch count " + std::to_string(n_p) + " is not a perfect square");
  return fuse(g, f_e, p_t, side, side, proj);
}

/// One unpool + rescale stage: unpool with the level's indices, concatenate
/// the level's skip tensor, then 3x3 conv-BN-ReLU.
template <class T>
struct DecoderStage {
  Conv<T> conv;
  BatchNorm<T> bn;
};

template <class T>
class SegModel {
 public:
  SegModel(ArchConfig arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    Rng rng(seed);
    backbone_ = make_backbone(arch_, store_, rng);
    const auto& w = arch_.widths;
    if (arch_.use_transformer) {
      transformer_ = TransformerStack<T>::make(store_, arch_.patch, arch_.padded_height(), arch_.padded_width(),
                                               arch_.channels, rng);
      fuse_proj_ = Conv<T>::make(store_, "fuse.proj", 1, arch_.patch.embed, w.back(), rng, true);
    }
    for (std::size_t s = 0; s < ArchConfig::kLevels; ++s) {
      const auto lvl = ArchConfig::kLevels - 1 - s;  // deepest first
      const auto out = lvl == 0 ? w[0] : w[lvl - 1];
      const auto name = "decoder.stage" + std::to_string(s + 1);
      decoder_.push_back({Conv<T>::make(store_, name + ".conv", 3, 2 * w[lvl], out, rng, false),
                          BatchNorm<T>::make(store_, name + ".bn", out)});
    }
    head_ = Conv<T>::make(store_, "decoder.head", 1, w[0], arch_.classes, rng, true);
  }

  SegModel(SegModel&&) noexcept = default;
  SegModel& operator=(SegModel&&) noexcept = default;

  const ArchConfig& arch() const noexcept { return arch_; }
  ParameterStore<T>& store() noexcept { return store_; }
  const ParameterStore<T>& store() const noexcept { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }
  const Backbone<T>& backbone() const { return *backbone_; }
  const TransformerStack<T>& transformer() const { return transformer_; }
  const Conv<T>& fuse_projection() const { return fuse_proj_; }
  const std::vector<DecoderStage<T>>& decoder() const { return decoder_; }
  const Conv<T>& head() const { return head_; }

  /// Encoder on an aligned NHWC input.
  EncoderFeatures<T> encode(Graph<T>& g, const Tensor<T>& x, NormMode mode) const {
    return backbone_->encode(g, x, mode);
  }

  /// p_t for an aligned NHWC input.
  Tensor<T> project(Graph<T>& g, const Tensor<T>& x, std::vector<Tensor<T>>* attention = nullptr) const {
    if (!arch_.use_transformer) throw ContractError("transformer disabled in this architecture");
    return transformer_stack(g, x, transformer_, attention);
  }

  Tensor<T> decode(Graph<T>& g, Tensor<T> f_d, const EncoderFeatures<T>& enc, NormMode mode) const {
    if (enc.indices.size() != ArchConfig::kLevels || enc.skips.size() != ArchConfig::kLevels)
      throw CorruptIndexError("decoder needs one pooling record and skip per encoder level");
    Tensor<T> h = std::move(f_d);
    for (std::size_t s = 0; s < decoder_.size(); ++s) {
      const auto lvl = ArchConfig::kLevels - 1 - s;
      const auto& skip = enc.skips[lvl];
      auto up = ops::max_unpool2x2(g, h, enc.indices[lvl], skip.shape());
      auto cat = ops::concat_last(g, std::vector<Tensor<T>>{up, skip});
      h = ops::relu(g, decoder_[s].bn(g, decoder_[s].conv(g, cat), mode));
    }
    return head_(g, h);
  }

  /// Per-pixel class logits, [N x H x W x classes] (or HxWxclasses for a
  /// rank-3 input).
  Tensor<T> logits(Graph<T>& g, const Tensor<T>& x, NormMode mode, std::vector<Tensor<T>>* attention = nullptr) const {
    const auto d = ImageDims::of(x.shape());
    if (d.h != arch_.height || d.w != arch_.width || d.c != arch_.channels)
      throw ShapeError("model expects " + std::to_string(arch_.height) + "x" + std::to_string(arch_.width) + "x" +
                       std::to_string(arch_.channels) + " inputs, got " + x.shape().str());
    Tensor<T> h = x.shape().rank() == 3 ? ops::reshape(g, x, Shape{1, d.h, d.w, d.c}) : x;
    const auto ph = arch_.padded_height(), pw = arch_.padded_width();
    const auto top = (ph - d.h) / 2, left = (pw - d.w) / 2;
    if (ph != d.h || pw != d.w) h = ops::pad_reflect(g, h, top, ph - d.h - top, left, pw - d.w - left);

    auto enc = encode(g, h, mode);
    Tensor<T> f_d = enc.latent;
    if (arch_.use_transformer)
      f_d = fuse(g, enc.latent, project(g, h, attention), transformer_.grid.rows, transformer_.grid.cols, fuse_proj_);
    auto out = decode(g, f_d, enc, mode);

    if (ph != d.h || pw != d.w) out = ops::crop(g, out, top, left, d.h, d.w);
    if (x.shape().rank() == 3) out = ops::reshape(g, out, Shape{d.h, d.w, arch_.classes});
    return out;
  }

  /// Per-pixel class distribution (softmax at unit temperature).
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, NormMode mode) const {
    return ops::softmax_temp(g, logits(g, x, mode), 1.0);
  }

 private:
  ArchConfig arch_;
  ParameterStore<T> store_;
  std::unique_ptr<Backbone<T>> backbone_;
  TransformerStack<T> transformer_;
  Conv<T> fuse_proj_;
  std::vector<DecoderStage<T>> decoder_;
  Conv<T> head_;
};

}  // namespace ripeseg
