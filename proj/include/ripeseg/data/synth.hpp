#pragma once

// Synthetic ripeness scenes: textured dark-green foliage with 1-6 disjoint
// ellipses whose color encodes the class.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ripeseg/data/dataset.hpp"

namespace ripeseg {

struct Ellipse {
  double cy = 0, cx = 0;  // center, pixel units
  double ry = 1, rx = 1;
  double angle = 0;       // radians
  std::uint8_t cls = 1;

  /// Membership of the point (y, x); pixel (r, c) is tested at its center.
  bool contains(double y, double x) const;
  bool contains_pixel(std::size_t r, std::size_t c) const { return contains(double(r) + 0.5, double(c) + 0.5); }
};

struct SynthConfig {
  std::size_t count = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
  std::array<double, 3> class_weights{18.0, 1.0, 3.7};  // unripened, half, fully
  std::size_t min_objects = 1;
  std::size_t max_objects = 6;

  void validate() const;
};

struct SynthScene {
  LabeledSample sample;
  std::vector<Ellipse> ellipses;
};

/// Scene `index` of the configured set. Image values are multiples of 1/255
/// so the scene survives an 8-bit round trip unchanged.
SynthScene synth_scene(const SynthConfig& cfg, std::size_t index);

std::vector<SynthScene> synth_scenes(const SynthConfig& cfg);

/// Writes the set in the dataset layout and returns its manifest.
DatasetManifest synth_generate(const std::filesystem::path& root, const SynthConfig& cfg);

}  // namespace ripeseg
