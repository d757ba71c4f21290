#pragma once

// On-disk layout: root/images/<stem>.png, root/masks/<stem>.png and
// root/classmap.txt with one "<index> <name>" line per class.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ripeseg/metrics/metrics.hpp"
#include "ripeseg/tensor/ndarray.hpp"

namespace ripeseg {

struct ClassMap {
  std::vector<std::string> names;  // index = class id; 0 is background

  static ClassMap tomato();
  static ClassMap read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
  std::size_t size() const noexcept { return names.size(); }
};

struct SplitFractions {
  double train = 0.75;
  double val = 0.125;
  double test = 0.125;

  void validate() const;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> stems;  // sorted
  ClassMap classes;
  std::uint64_t split_seed = 0;
  SplitFractions fractions{};

  std::filesystem::path image_path(const std::string& stem) const { return root / "images" / (stem + ".png"); }
  std::filesystem::path mask_path(const std::string& stem) const { return root / "masks" / (stem + ".png"); }

  /// Lists root/images and pairs each image with its mask.
  static DatasetManifest scan(const std::filesystem::path& root);
};

struct LabeledSample {
  std::string stem;
  NDArray<float> image;  // HxWx3 in [0,1]
  LabelGrid mask;
};

/// Loads every manifest entry, sorted by stem, validating dims and labels.
std::vector<LabeledSample> load_dataset(const DatasetManifest& manifest);

/// Writes samples in the dataset layout under `root`.
void save_dataset(const std::filesystem::path& root, const std::vector<LabeledSample>& samples, const ClassMap& classes);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of [0, n) into three parts. Validation and test sizes are
/// floor(fraction * n); the remainder goes to training.
SplitIndices split_indices(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

struct DatasetSplit {
  std::vector<LabeledSample> train, val, test;
};

DatasetSplit split(const std::vector<LabeledSample>& samples, const SplitFractions& fractions, std::uint64_t seed);

}  // namespace ripeseg
