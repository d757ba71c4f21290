#pragma once

// Ablation sweeps: one full train + evaluate per grid cell, tabulated like
// the corresponding ablation tables.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ripeseg/model/arch.hpp"
#include "ripeseg/train/trainer.hpp"

namespace ripeseg {

enum class SweepKind { beta, tau, loss, transformer };

std::string to_string(SweepKind k);
SweepKind parse_sweep_kind(const std::string& s);

/// Grid used when none is given: beta1 in {0.1..0.9 step 0.2}, tau in
/// {1, 1.5, 2, 2.5}, every loss kind, transformer {on, off}.
std::vector<std::string> default_grid(SweepKind k);

struct SweepBase {
  ArchConfig arch;
  TrainConfig train;
  LossConfig loss;
  TrainData data;
  std::vector<LabeledSample> eval_set;  // empty: evaluate on data.val, else data.train
  std::uint64_t model_seed = 0;
  std::filesystem::path run_root;       // empty: nothing written
};

struct SweepCell {
  std::string setting;
  double beta1 = 0, beta2 = 0;  // beta sweeps only
  bool ok = false;
  std::string error;
  MetricsReport report;
  RunLog log;
};

struct SweepTable {
  SweepKind kind;
  std::vector<SweepCell> cells;

  /// Beta: a beta2-row by beta1-column grid with mAP on the beta1 + beta2 = 1
  /// diagonal and "-" elsewhere. Others: one row per setting with miou, mdc,
  /// map, auc (transformer: miou, mdc).
  std::string serialize() const;
};

/// Runs every cell; a failing cell is recorded and the sweep continues.
SweepTable run_sweep(SweepKind kind, const std::vector<std::string>& grid, const SweepBase& base,
                     std::ostream* log = nullptr);

}  // namespace ripeseg
