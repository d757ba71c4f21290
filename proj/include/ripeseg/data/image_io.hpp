#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ripeseg/metrics/metrics.hpp"
#include "ripeseg/tensor/ndarray.hpp"

namespace ripeseg {

/// 8-bit PNG as HxWx3 floats in [0,1]. Gray and alpha inputs are converted.
NDArray<float> read_image(const std::filesystem::path& path);

/// Single-channel 8-bit PNG of class indices. Color or 16-bit files are
/// rejected with ManifestError.
LabelGrid read_mask(const std::filesystem::path& path);

/// Writes HxWx3 (or HxWx1) floats, clamped and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const NDArray<float>& image);
void write_mask(const std::filesystem::path& path, const LabelGrid& mask);
void write_rgba(const std::filesystem::path& path, std::size_t height, std::size_t width,
                const std::vector<std::uint8_t>& rgba);

inline float from_byte(std::uint8_t v) { return float(v) / 255.0f; }
std::uint8_t to_byte(float v);

}  // namespace ripeseg
