#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "ripeseg/transformer/transformer.hpp"

namespace ripeseg {

/// Architecture hyperparameters. Everything that determines the parameter
/// manifest lives here; loss and optimizer settings do not.
struct ArchConfig {
  static constexpr std::size_t kLevels = 5;
  static constexpr std::size_t kAlignment = 1u << kLevels;  // one halving per level

  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  std::size_t classes = 4;  // including background
  std::vector<std::size_t> widths{16, 32, 64, 128, 256};
  std::vector<std::size_t> spb_per_level{2, 2, 2, 2, 3};
  PatchConfig patch{};
  bool use_transformer = true;
  std::string backbone = "spb-rb";

  /// Working resolution: input dims rounded up to a multiple of 32. Inputs
  /// that are not aligned are reflect-padded and the output cropped back.
  std::size_t padded_height() const { return round_up(height); }
  std::size_t padded_width() const { return round_up(width); }

  std::size_t total_spbs() const {
    return std::accumulate(spb_per_level.begin(), spb_per_level.end(), std::size_t{0});
  }
  std::size_t decoder_stages() const { return kLevels; }

  void validate() const {
    if (height == 0 || width == 0 || channels == 0) throw ConfigError("input dims must be positive");
    if (classes < 2) throw ConfigError("model.classes must be >= 2 (background plus one class)");
    if (widths.size() != kLevels)
      throw ConfigError("model.widths needs exactly " + std::to_string(kLevels) + " entries");
    if (spb_per_level.size() != kLevels)
      throw ConfigError("model.spb_per_level needs exactly " + std::to_string(kLevels) + " entries");
    for (auto w : widths)
      if (w == 0) throw ConfigError("model.widths entries must be positive");
    for (auto s : spb_per_level)
      if (s == 0) throw ConfigError("model.spb_per_level entries must be positive");
    if (use_transformer) {
      patch.validate();
      if (padded_height() % patch.patch || padded_width() % patch.patch)
        throw ConfigError("patch size " + std::to_string(patch.patch) + " does not tile the " +
                          std::to_string(padded_height()) + "x" + std::to_string(padded_width()) +
                          " working resolution");
    }
  }

 private:
  static std::size_t round_up(std::size_t v) { return (v + kAlignment - 1) / kAlignment * kAlignment; }
};

}  // namespace ripeseg
