#include "ripeseg/data/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ripeseg/tensor/nn.hpp"

namespace ripeseg {

namespace {

constexpr std::array kKinds{TransformKind::brightness, TransformKind::hflip,         TransformKind::vflip,
                            TransformKind::rotation,   TransformKind::shear_h,       TransformKind::shear_v,
                            TransformKind::zoom,       TransformKind::gaussian_blur, TransformKind::salt_pepper,
                            TransformKind::speckle};

/// Maps output-pixel centers to source coordinates, both centered on the
/// image center: src = m * out.
struct InverseMap {
  double m[2][2];
};

InverseMap inverse_map(TransformKind kind, double p) {
  switch (kind) {
    case TransformKind::rotation: {
      const double t = p * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
      // (y, x) with y pointing down; counter-clockwise on screen.
      return {{{c, s}, {-s, c}}};
    }
    case TransformKind::shear_h: return {{{1, 0}, {-p, 1}}};
    case TransformKind::shear_v: return {{{1, -p}, {0, 1}}};
    case TransformKind::zoom: return {{{1 / p, 0}, {0, 1 / p}}};
    default: return {{{1, 0}, {0, 1}}};
  }
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-6 ? r : v;
}

struct SourceCoord {
  double y, x;  // in pixel-index units
};

template <class F>
void for_each_source(std::size_t h, std::size_t w, const InverseMap& im, F&& f) {
  const double cy = double(h) / 2, cx = double(w) / 2;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double yo = double(r) + 0.5 - cy, xo = double(c) + 0.5 - cx;
      const double ys = im.m[0][0] * yo + im.m[0][1] * xo + cy - 0.5;
      const double xs = im.m[1][0] * yo + im.m[1][1] * xo + cx - 0.5;
      f(r, c, SourceCoord{snap(ys), snap(xs)});
    }
}

LabelGrid warp_mask(const LabelGrid& mask, const InverseMap& im) {
  LabelGrid out(mask.height, mask.width, std::uint8_t{0});
  for_each_source(mask.height, mask.width, im, [&](std::size_t r, std::size_t c, SourceCoord s) {
    const double ry = std::floor(s.y + 0.5), rx = std::floor(s.x + 0.5);
    if (ry < 0 || rx < 0 || ry >= double(mask.height) || rx >= double(mask.width)) return;
    out.at(r, c) = mask.at(std::size_t(ry), std::size_t(rx));
  });
  return out;
}

NDArray<float> warp_image(const NDArray<float>& img, const InverseMap& im) {
  const auto h = img.shape()[0], w = img.shape()[1], ch = img.shape()[2];
  NDArray<float> out(img.shape());
  auto tap = [&](long y, long x, std::size_t k) -> double {
    if (y < 0 || x < 0 || y >= long(h) || x >= long(w)) return 0.0;
    return img[(std::size_t(y) * w + std::size_t(x)) * ch + k];
  };
  for_each_source(h, w, im, [&](std::size_t r, std::size_t c, SourceCoord s) {
    const double fy = std::floor(s.y), fx = std::floor(s.x);
    const double ty = s.y - fy, tx = s.x - fx;
    const long y0 = long(fy), x0 = long(fx);
    for (std::size_t k = 0; k < ch; ++k) {
      double v = tap(y0, x0, k) * (1 - ty) * (1 - tx);
      if (tx != 0) v += tap(y0, x0 + 1, k) * (1 - ty) * tx;
      if (ty != 0) v += tap(y0 + 1, x0, k) * ty * (1 - tx);
      if (ty != 0 && tx != 0) v += tap(y0 + 1, x0 + 1, k) * ty * tx;
      out[(r * w + c) * ch + k] = float(v);
    }
  });
  return out;
}

template <class V>
void flip_axis(std::vector<V>& v, std::size_t h, std::size_t w, std::size_t ch, bool horizontal) {
  std::vector<V> src(v);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const auto sr = horizontal ? r : h - 1 - r, sc = horizontal ? w - 1 - c : c;
      for (std::size_t k = 0; k < ch; ++k) v[(r * w + c) * ch + k] = src[(sr * w + sc) * ch + k];
    }
}

NDArray<float> blur(const NDArray<float>& img, double sigma) {
  if (sigma <= 1e-12) return img;
  const auto h = img.shape()[0], w = img.shape()[1], ch = img.shape()[2];
  const long radius = long(std::ceil(3 * sigma));
  std::vector<double> kernel;
  double total = 0;
  for (long i = -radius; i <= radius; ++i) {
    kernel.push_back(std::exp(-0.5 * double(i * i) / (sigma * sigma)));
    total += kernel.back();
  }
  for (auto& k : kernel) k /= total;
  NDArray<float> tmp(img.shape()), out(img.shape());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t k = 0; k < ch; ++k) {
        double v = 0;
        for (long i = -radius; i <= radius; ++i)
          v += kernel[std::size_t(i + radius)] * img[(r * w + ops::detail::reflect_index(long(c) + i, w)) * ch + k];
        tmp[(r * w + c) * ch + k] = float(v);
      }
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t k = 0; k < ch; ++k) {
        double v = 0;
        for (long i = -radius; i <= radius; ++i)
          v += kernel[std::size_t(i + radius)] * tmp[(ops::detail::reflect_index(long(r) + i, h) * w + c) * ch + k];
        out[(r * w + c) * ch + k] = float(v);
      }
  return out;
}

void clamp01(NDArray<float>& img) {
  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::brightness: return "brightness";
    case TransformKind::hflip: return "hflip";
    case TransformKind::vflip: return "vflip";
    case TransformKind::rotation: return "rotation";
    case TransformKind::shear_h: return "shear_h";
    case TransformKind::shear_v: return "shear_v";
    case TransformKind::zoom: return "zoom";
    case TransformKind::gaussian_blur: return "gaussian_blur";
    case TransformKind::salt_pepper: return "salt_pepper";
    case TransformKind::speckle: return "speckle";
  }
  return "?";
}

TransformKind parse_transform(const std::string& name) {
  for (auto k : kKinds)
    if (to_string(k) == name) return k;
  std::string known;
  for (auto k : kKinds) known += (known.empty() ? "" : ", ") + to_string(k);
  throw ConfigError("unknown transform '" + name + "' (known: " + known + ")");
}

bool is_geometric(TransformKind k) {
  switch (k) {
    case TransformKind::hflip:
    case TransformKind::vflip:
    case TransformKind::rotation:
    case TransformKind::shear_h:
    case TransformKind::shear_v:
    case TransformKind::zoom: return true;
    default: return false;
  }
}

TransformSpec default_transform(TransformKind kind, double probability) {
  switch (kind) {
    case TransformKind::brightness: return {kind, 0.7, 1.3, probability};
    case TransformKind::rotation: return {kind, -25, 25, probability};
    case TransformKind::shear_h:
    case TransformKind::shear_v: return {kind, -0.2, 0.2, probability};
    case TransformKind::zoom: return {kind, 0.8, 1.2, probability};
    case TransformKind::gaussian_blur: return {kind, 0, 1.5, probability};
    case TransformKind::salt_pepper: return {kind, 0, 0.02, probability};
    case TransformKind::speckle: return {kind, 0, 0.1, probability};
    default: return {kind, 0, 0, probability};
  }
}

AugmentSpec AugmentSpec::defaults(double probability) {
  AugmentSpec s;
  for (auto k : kKinds) s.transforms.push_back(default_transform(k, probability));
  return s;
}

AugmentSpec AugmentSpec::parse(const std::string& list, double probability) {
  if (probability < 0 || probability > 1) throw ConfigError("augment probability must lie in [0, 1]");
  AugmentSpec s;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    s.transforms.push_back(default_transform(parse_transform(item), probability));
  }
  return s;
}

LabelGrid transform_mask(const LabelGrid& mask, TransformKind kind, double param) {
  if (!is_geometric(kind)) return mask;
  LabelGrid out = mask;
  if (kind == TransformKind::hflip || kind == TransformKind::vflip) {
    flip_axis(out.values, mask.height, mask.width, 1, kind == TransformKind::hflip);
    return out;
  }
  if (kind == TransformKind::zoom && !(param > 0)) throw ConfigError("zoom factor must be positive");
  return warp_mask(mask, inverse_map(kind, param));
}

LabeledSample apply_transform(const LabeledSample& s, TransformKind kind, double param, Rng& rng) {
  const auto& shape = s.image.shape();
  if (shape.rank() != 3) throw ShapeError("augment expects HxWxC images, got " + shape.str());
  if (s.mask.height != shape[0] || s.mask.width != shape[1]) throw ShapeError("augment: image/mask dims differ");
  LabeledSample out = s;
  auto& img = out.image;
  switch (kind) {
    case TransformKind::hflip:
    case TransformKind::vflip: {
      std::vector<float> v = img.vec();
      flip_axis(v, shape[0], shape[1], shape[2], kind == TransformKind::hflip);
      img = NDArray<float>(shape, std::move(v));
      out.mask = transform_mask(s.mask, kind, param);
      return out;
    }
    case TransformKind::rotation:
    case TransformKind::shear_h:
    case TransformKind::shear_v:
    case TransformKind::zoom:
      out.mask = transform_mask(s.mask, kind, param);
      img = warp_image(s.image, inverse_map(kind, param));
      break;
    case TransformKind::brightness:
      for (auto& v : img.data()) v = float(v * param);
      break;
    case TransformKind::gaussian_blur:
      img = blur(s.image, param);
      break;
    case TransformKind::salt_pepper: {
      const auto ch = shape[2];
      for (std::size_t px = 0; px < shape[0] * shape[1]; ++px) {
        if (!rng.bernoulli(param)) continue;
        const float v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        for (std::size_t k = 0; k < ch; ++k) img[px * ch + k] = v;
      }
      break;
    }
    case TransformKind::speckle:
      if (param > 0)
        for (auto& v : img.data()) v = float(v + v * param * rng.normal());
      break;
  }
  clamp01(img);
  return out;
}

LabeledSample augment(const LabeledSample& s, const AugmentSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  LabeledSample out = s;
  for (const auto& t : spec.transforms) {
    const bool apply = rng.bernoulli(t.probability);
    const double param = rng.uniform(t.lo, t.hi);
    if (apply) out = apply_transform(out, t.kind, param, rng);
  }
  return out;
}

}  // namespace ripeseg
