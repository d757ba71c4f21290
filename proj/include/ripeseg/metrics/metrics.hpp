#pragma once

// Segmentation metrics: pixel IoU/Dice from global confusion counts, mAP from
// bounding rectangles of connected mask components, and one-vs-rest AUC.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ripeseg/tensor/ndarray.hpp"

namespace ripeseg {

template <class V>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<V> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, V fill = V{}) : height(h), width(w), values(h * w, fill) {}
  Grid(std::size_t h, std::size_t w, std::vector<V> v) : height(h), width(w), values(std::move(v)) {
    if (values.size() != h * w) throw ShapeError("grid data does not match its dims");
  }

  V& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  const V& at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t size() const { return values.size(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using LabelGrid = Grid<std::uint8_t>;
using ConfidenceGrid = Grid<float>;

/// Prediction/ground-truth pair for one image. `confidence` holds the
/// per-pixel max class probability when available.
struct MaskPair {
  LabelGrid pred;
  LabelGrid truth;
  std::optional<ConfidenceGrid> confidence;
};

/// Pixel counts indexed by (truth, predicted).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  void add(const LabelGrid& pred, const LabelGrid& truth);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t true_positives(std::size_t c) const { return at(c, c); }
  std::uint64_t predicted(std::size_t c) const;
  std::uint64_t actual(std::size_t c) const;
  std::uint64_t total() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const MaskPair> pairs, std::size_t classes);

/// |pred ∩ truth| / |pred ∪ truth| for class c; nullopt when the union is
/// empty (class absent from both).
std::optional<double> classwise_iou(const ConfusionMatrix& cm, std::size_t c);

/// 2|pred ∩ truth| / (|pred| + |truth|) for class c; nullopt when both are
/// empty.
std::optional<double> dice_coeff(const ConfusionMatrix& cm, std::size_t c);

/// 4-connected components of the pixels where `mask` is true, as flat
/// row-major indices. Components are ordered by their first pixel.
std::vector<std::vector<std::size_t>> connected_components(const Grid<std::uint8_t>& mask);

struct DetectionBox {
  std::size_t image = 0;
  std::size_t cls = 0;
  std::size_t row_min = 0, col_min = 0, row_max = 0, col_max = 0;  // inclusive
  double score = 1.0;
};

double box_iou(const DetectionBox& a, const DetectionBox& b);

/// Minimum bounding rectangles of each connected component of every
/// foreground class in `mask`. Scores are the mean confidence over the
/// component's pixels, or 1 without a confidence grid.
std::vector<DetectionBox> mask_to_boxes(const LabelGrid& mask, const ConfidenceGrid* confidence,
                                        std::size_t classes, std::size_t image = 0);

enum class ApMode { all_point, eleven_point };

/// AP of one class: predictions ranked by descending score, each greedily
/// matched to the unmatched truth box of the same image with the highest
/// IoU >= iou_thresh. nullopt when there are no truth boxes.
std::optional<double> average_precision(std::vector<DetectionBox> preds, const std::vector<DetectionBox>& truths,
                                        double iou_thresh, ApMode mode = ApMode::all_point);

struct MapResult {
  double map = 0;                                 // mean over classes with truth boxes
  std::vector<std::optional<double>> per_class;   // index = class id; [0] unused
};

/// mAP over foreground classes present in the ground truth. Pairs without
/// confidence grids score their boxes 1.
MapResult map_from_masks(std::span<const MaskPair> pairs, std::size_t classes, double iou_thresh,
                         ApMode mode = ApMode::all_point);

/// ROC AUC via the Mann-Whitney rank statistic; ties count 1/2. nullopt when
/// either label is absent.
std::optional<double> roc_auc(std::span<const float> scores, std::span<const std::uint8_t> positive);

struct AucResult {
  double mean = 0;
  std::vector<std::optional<double>> per_class;
};

/// One-vs-rest pixel AUC per foreground class, averaged over classes present
/// in the truth. probs[i] is HxWxclasses for image i.
AucResult auc_ovr(std::span<const NDArray<float>> probs, std::span<const LabelGrid> truth, std::size_t classes);

struct EvalOptions {
  double map_iou = 0.5;
  ApMode ap_mode = ApMode::all_point;
};

struct MetricsReport {
  std::vector<std::string> class_names;        // index = class id
  std::vector<std::optional<double>> iou;      // foreground classes; [0] = background
  std::vector<std::optional<double>> dice;
  double miou = 0;
  double mdc = 0;
  double map = 0;
  double auc = 0;
  ConfusionMatrix confusion;
  std::vector<std::string> flags;               // excluded classes and why

  std::string table() const;
  std::string key_values() const;
};

/// Builds the full report. `probs` may be empty, in which case AUC is 0 and
/// flagged.
MetricsReport build_report(std::span<const MaskPair> pairs, std::span<const NDArray<float>> probs,
                           const std::vector<std::string>& class_names, const EvalOptions& options);

}  // namespace ripeseg
