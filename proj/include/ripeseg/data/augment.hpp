#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ripeseg/data/dataset.hpp"
#include "ripeseg/tensor/random.hpp"

namespace ripeseg {

enum class TransformKind {
  brightness,     // multiply by factor
  hflip,
  vflip,
  rotation,       // degrees, counter-clockwise
  shear_h,        // x += k * y
  shear_v,        // y += k * x
  zoom,           // scale about the center
  gaussian_blur,  // sigma in pixels
  salt_pepper,    // corrupted pixel density
  speckle,        // multiplicative noise sigma
};

std::string to_string(TransformKind k);
TransformKind parse_transform(const std::string& name);
bool is_geometric(TransformKind k);

struct TransformSpec {
  TransformKind kind;
  double lo = 0, hi = 0;     // parameter drawn uniformly from [lo, hi]
  double probability = 0.5;
};

/// Default parameter range of each kind.
TransformSpec default_transform(TransformKind kind, double probability = 0.5);

struct AugmentSpec {
  std::vector<TransformSpec> transforms;

  /// All ten kinds at default ranges.
  static AugmentSpec defaults(double probability = 0.5);
  /// Comma-separated kind names at default ranges.
  static AugmentSpec parse(const std::string& list, double probability = 0.5);
};

/// Seed of sample `index` under a global seed.
inline std::uint64_t sample_seed(std::uint64_t global, std::uint64_t index) { return global ^ index; }

/// Applies one transform with an explicit parameter. Geometric kinds move
/// image (bilinear) and mask (nearest) through the same inverse map and fill
/// exposed regions with 0; the others leave the mask untouched.
LabeledSample apply_transform(const LabeledSample& s, TransformKind kind, double param, Rng& rng);

/// Mask-only geometric transform; identical to the mask produced by
/// apply_transform for the same kind and parameter.
LabelGrid transform_mask(const LabelGrid& mask, TransformKind kind, double param);

/// Walks the spec in order, applying each transform with its probability.
LabeledSample augment(const LabeledSample& s, const AugmentSpec& spec, std::uint64_t seed);

}  // namespace ripeseg
