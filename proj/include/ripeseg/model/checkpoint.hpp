#pragma once

// Binary checkpoint envelope:
//   "KUTS" | u32 version | u32 count | count x {u16 name_len, name, u8 rank,
//   rank x u32 dim, f32 data} | u32 crc32 of everything before it.
// All integers and reals are little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ripeseg/model/segmodel.hpp"

namespace ripeseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Copies every parameter and running statistic of `store`, in manifest order.
template <class T>
std::vector<CheckpointEntry> snapshot(ParameterStore<T>& store) {
  std::vector<CheckpointEntry> out;
  for (const auto& s : store.slots()) {
    CheckpointEntry e{s.name, s.shape, {}};
    e.data.reserve(s.data.size());
    for (T v : s.data) e.data.push_back(static_cast<float>(v));
    out.push_back(std::move(e));
  }
  return out;
}

/// Overwrites `store` from `entries`. The two manifests must match exactly
/// in names and shapes; the first disagreement is named in the error.
template <class T>
void restore(ParameterStore<T>& store, std::span<const CheckpointEntry> entries) {
  auto slots = store.slots();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (i >= entries.size()) throw CheckpointError("checkpoint lacks parameter " + slots[i].name);
    const auto& e = entries[i];
    if (e.name != slots[i].name)
      throw CheckpointError("checkpoint parameter " + std::to_string(i) + " is " + e.name + ", model expects " +
                            slots[i].name);
    if (e.shape != slots[i].shape)
      throw CheckpointError("parameter " + e.name + " has shape " + e.shape.str() + " in checkpoint, model expects " +
                            slots[i].shape.str());
  }
  if (entries.size() != slots.size())
    throw CheckpointError("checkpoint has unexpected parameter " + entries[slots.size()].name);
  for (std::size_t i = 0; i < slots.size(); ++i)
    for (std::size_t k = 0; k < slots[i].data.size(); ++k) slots[i].data[k] = static_cast<T>(entries[i].data[k]);
}

template <class T>
void save_checkpoint(SegModel<T>& model, const std::filesystem::path& path) {
  write_checkpoint(path, snapshot(model.store()));
}

template <class T>
SegModel<T> load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch) {
  SegModel<T> model(arch, 0);
  const auto entries = read_checkpoint(path);
  restore(model.store(), std::span<const CheckpointEntry>(entries));
  return model;
}

}  // namespace ripeseg
