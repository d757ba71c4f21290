#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ripeseg/data/augment.hpp"
#include "ripeseg/data/dataset.hpp"
#include "ripeseg/loss/loss.hpp"
#include "ripeseg/metrics/metrics.hpp"
#include "ripeseg/model/segmodel.hpp"
#include "ripeseg/train/adadelta.hpp"

namespace ripeseg {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  std::size_t fixed_iterations = 0;  // 0: ceil(train_size / batch_size)
  AdadeltaConfig optimizer{};
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1;  // 0: only best and final
  std::size_t patience = 0;          // 0: no early stopping
  bool run_validation = true;
  std::string augment;               // comma-separated transform kinds; empty: off
  double augment_probability = 0.5;
  EvalOptions eval{};

  void validate() const;
  std::size_t iterations(std::size_t train_size) const;
};

/// Training-set indices of every batch of `epoch`, a pure function of
/// (seed, epoch). Dataset-derived schedules end with a partial batch; fixed
/// schedules cycle through the epoch's permutation.
std::vector<std::vector<std::size_t>> epoch_batches(const TrainConfig& cfg, std::size_t train_size, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;   // NaN without validation
  double val_miou = 0;   // NaN without validation
};

struct RunLog {
  std::vector<std::pair<std::string, std::string>> header;  // resolved settings
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;
  std::size_t best_epoch = 0;
  std::optional<MetricsReport> final_report;

  /// "epoch\ttrain_loss\tval_loss\tval_miou" rows, values at full precision.
  std::string curves_tsv() const;
  /// Header, curves and summary; everything but wall time is reproducible.
  std::string text() const;
  std::string summary() const;

  static std::vector<EpochRecord> parse_curves(const std::string& tsv);
};

struct TrainData {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
  std::vector<std::string> class_names;
};

struct TrainOptions {
  std::filesystem::path run_dir;  // empty: nothing written
  bool resume = false;            // continue from run_dir/checkpoints/last
  std::vector<std::pair<std::string, std::string>> header;
  std::ostream* log = nullptr;
};

/// Batched NHWC input and one-hot targets for the given samples.
std::pair<NDArray<float>, NDArray<float>> make_batch(const std::vector<const LabeledSample*>& samples,
                                                      std::size_t classes);

struct Prediction {
  LabelGrid mask;
  ConfidenceGrid confidence;  // max class probability
  NDArray<float> probs;       // HxWxclasses
};

Prediction predict(const SegModel<float>& model, const NDArray<float>& image);

struct Evaluation {
  MetricsReport report;
  double loss = 0;
};

/// Eval-mode metrics over `samples`; loss is computed when `loss` is given.
Evaluation evaluate(const SegModel<float>& model, const std::vector<LabeledSample>& samples,
                    const std::vector<std::string>& class_names, const EvalOptions& options,
                    const LossConfig* loss = nullptr);

/// One optimization step on a batch; returns the loss.
double train_step(SegModel<float>& model, Adadelta& opt, const NDArray<float>& x, const NDArray<float>& targets,
                  const LossConfig& loss);

RunLog train(SegModel<float>& model, const TrainData& data, const TrainConfig& cfg, const LossConfig& loss,
             const TrainOptions& options = {});

namespace run_files {
inline std::filesystem::path checkpoints(const std::filesystem::path& run) { return run / "checkpoints"; }
inline std::filesystem::path best(const std::filesystem::path& run) { return checkpoints(run) / "best.kuts"; }
inline std::filesystem::path last(const std::filesystem::path& run) { return checkpoints(run) / "last.kuts"; }
inline std::filesystem::path last_optimizer(const std::filesystem::path& run) {
  return checkpoints(run) / "last.optim.kuts";
}
inline std::filesystem::path curves(const std::filesystem::path& run) { return run / "curves.tsv"; }
inline std::filesystem::path log(const std::filesystem::path& run) { return run / "log.txt"; }
inline std::filesystem::path reports(const std::filesystem::path& run) { return run / "reports"; }
}  // namespace run_files

}  // namespace ripeseg
