#include "ripeseg/metrics/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace ripeseg {

void ConfusionMatrix::add(const LabelGrid& pred, const LabelGrid& truth) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw ShapeError("confusion: prediction and truth dims differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred.values[i], t = truth.values[i];
    if (p >= classes_ || t >= classes_)
      throw LabelError("confusion: label outside " + std::to_string(classes_) + " classes");
    ++counts_[t * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::predicted(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t t = 0; t < classes_; ++t) n += at(t, c);
  return n;
}

std::uint64_t ConfusionMatrix::actual(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t p = 0; p < classes_; ++p) n += at(c, p);
  return n;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

ConfusionMatrix confusion(std::span<const MaskPair> pairs, std::size_t classes) {
  ConfusionMatrix cm(classes);
  for (const auto& p : pairs) cm.add(p.pred, p.truth);
  return cm;
}

std::optional<double> classwise_iou(const ConfusionMatrix& cm, std::size_t c) {
  const auto tp = cm.true_positives(c);
  const auto uni = cm.predicted(c) + cm.actual(c) - tp;
  if (uni == 0) return std::nullopt;
  return double(tp) / double(uni);
}

std::optional<double> dice_coeff(const ConfusionMatrix& cm, std::size_t c) {
  const auto denom = cm.predicted(c) + cm.actual(c);
  if (denom == 0) return std::nullopt;
  return 2.0 * double(cm.true_positives(c)) / double(denom);
}

std::vector<std::vector<std::size_t>> connected_components(const Grid<std::uint8_t>& mask) {
  std::vector<std::vector<std::size_t>> comps;
  std::vector<bool> seen(mask.size(), false);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.values[start] || seen[start]) continue;
    std::vector<std::size_t> comp;
    seen[start] = true;
    stack.push_back(start);
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      comp.push_back(i);
      const auto r = i / mask.width, c = i % mask.width;
      auto visit = [&](std::size_t j) {
        if (mask.values[j] && !seen[j]) {
          seen[j] = true;
          stack.push_back(j);
        }
      };
      if (r > 0) visit(i - mask.width);
      if (r + 1 < mask.height) visit(i + mask.width);
      if (c > 0) visit(i - 1);
      if (c + 1 < mask.width) visit(i + 1);
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

double box_iou(const DetectionBox& a, const DetectionBox& b) {
  const auto r0 = std::max(a.row_min, b.row_min), r1 = std::min(a.row_max, b.row_max);
  const auto c0 = std::max(a.col_min, b.col_min), c1 = std::min(a.col_max, b.col_max);
  auto area = [](const DetectionBox& x) {
    return double(x.row_max - x.row_min + 1) * double(x.col_max - x.col_min + 1);
  };
  const double inter = (r0 > r1 || c0 > c1) ? 0.0 : double(r1 - r0 + 1) * double(c1 - c0 + 1);
  return inter / (area(a) + area(b) - inter);
}

std::vector<DetectionBox> mask_to_boxes(const LabelGrid& mask, const ConfidenceGrid* confidence,
                                        std::size_t classes, std::size_t image) {
  if (confidence && (confidence->height != mask.height || confidence->width != mask.width))
    throw ShapeError("mask_to_boxes: confidence dims differ from mask");
  std::vector<DetectionBox> boxes;
  Grid<std::uint8_t> binary(mask.height, mask.width);
  for (std::size_t cls = 1; cls < classes; ++cls) {
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) any |= (binary.values[i] = mask.values[i] == cls);
    if (!any) continue;
    for (const auto& comp : connected_components(binary)) {
      DetectionBox b{image, cls, mask.height, mask.width, 0, 0, 1.0};
      double conf = 0;
      for (auto i : comp) {
        const auto r = i / mask.width, c = i % mask.width;
        b.row_min = std::min(b.row_min, r);
        b.row_max = std::max(b.row_max, r);
        b.col_min = std::min(b.col_min, c);
        b.col_max = std::max(b.col_max, c);
        if (confidence) conf += confidence->values[i];
      }
      if (confidence) b.score = conf / double(comp.size());
      boxes.push_back(b);
    }
  }
  return boxes;
}

std::optional<double> average_precision(std::vector<DetectionBox> preds, const std::vector<DetectionBox>& truths,
                                        double iou_thresh, ApMode mode) {
  if (truths.empty()) return std::nullopt;
  if (preds.empty()) return 0.0;
  std::stable_sort(preds.begin(), preds.end(),
                   [](const DetectionBox& a, const DetectionBox& b) { return a.score > b.score; });
  std::vector<bool> taken(truths.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    double best = iou_thresh;
    std::optional<std::size_t> match;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (taken[t] || truths[t].image != preds[k].image) continue;
      const double iou = box_iou(preds[k], truths[t]);
      if (iou >= best) {
        if (!match || iou > best) match = t;
        best = iou;
      }
    }
    if (match) {
      taken[*match] = true;
      ++tp;
    }
    precision.push_back(double(tp) / double(k + 1));
    recall.push_back(double(tp) / double(truths.size()));
  }
  // Precision envelope: max precision at any recall >= r.
  std::vector<double> env(precision);
  for (std::size_t i = env.size() - 1; i-- > 0;) env[i] = std::max(env[i], env[i + 1]);

  if (mode == ApMode::eleven_point) {
    double ap = 0;
    for (int s = 0; s <= 10; ++s) {
      const double r = s / 10.0;
      double p = 0;
      for (std::size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= r) {
          p = env[i];
          break;
        }
      ap += p / 11.0;
    }
    return ap;
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * env[i];
    prev_recall = recall[i];
  }
  return ap;
}

MapResult map_from_masks(std::span<const MaskPair> pairs, std::size_t classes, double iou_thresh, ApMode mode) {
  std::vector<std::vector<DetectionBox>> pred(classes), truth(classes);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    for (auto& b : mask_to_boxes(p.pred, p.confidence ? &*p.confidence : nullptr, classes, i))
      pred[b.cls].push_back(b);
    for (auto& b : mask_to_boxes(p.truth, nullptr, classes, i)) truth[b.cls].push_back(b);
  }
  MapResult out;
  out.per_class.assign(classes, std::nullopt);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    out.per_class[c] = average_precision(pred[c], truth[c], iou_thresh, mode);
    if (out.per_class[c]) {
      sum += *out.per_class[c];
      ++n;
    }
  }
  out.map = n ? sum / double(n) : 0.0;
  return out;
}

std::optional<double> roc_auc(std::span<const float> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ShapeError("roc_auc: score/label length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        rank_sum += mid_rank;
        ++pos;
      }
    i = j;
  }
  const std::uint64_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - double(pos) * double(pos + 1) / 2.0) / (double(pos) * double(neg));
}

AucResult auc_ovr(std::span<const NDArray<float>> probs, std::span<const LabelGrid> truth, std::size_t classes) {
  if (probs.size() != truth.size()) throw ShapeError("auc_ovr: probability/truth count mismatch");
  std::size_t total = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i].size() != truth[i].size() * classes)
      throw ShapeError("auc_ovr: probability map does not match truth dims");
    total += truth[i].size();
  }
  AucResult out;
  out.per_class.assign(classes, std::nullopt);
  std::vector<float> scores(total);
  std::vector<std::uint8_t> labels(total);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < probs.size(); ++i)
      for (std::size_t px = 0; px < truth[i].size(); ++px, ++k) {
        scores[k] = probs[i][px * classes + c];
        labels[k] = truth[i].values[px] == c;
      }
    out.per_class[c] = roc_auc(scores, labels);
    if (out.per_class[c]) {
      sum += *out.per_class[c];
      ++n;
    }
  }
  out.mean = n ? sum / double(n) : 0.0;
  return out;
}

MetricsReport build_report(std::span<const MaskPair> pairs, std::span<const NDArray<float>> probs,
                           const std::vector<std::string>& class_names, const EvalOptions& options) {
  const auto classes = class_names.size();
  MetricsReport r;
  r.class_names = class_names;
  r.confusion = confusion(pairs, classes);
  r.iou.assign(classes, std::nullopt);
  r.dice.assign(classes, std::nullopt);
  double si = 0, sd = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    r.iou[c] = classwise_iou(r.confusion, c);
    r.dice[c] = dice_coeff(r.confusion, c);
    if (c == 0) continue;
    if (!r.iou[c]) {
      r.flags.push_back(class_names[c] + ": absent from predictions and truth, excluded from miou/mdc");
      continue;
    }
    si += *r.iou[c];
    sd += *r.dice[c];
    ++n;
  }
  r.miou = n ? si / double(n) : 0.0;
  r.mdc = n ? sd / double(n) : 0.0;

  const auto m = map_from_masks(pairs, classes, options.map_iou, options.ap_mode);
  r.map = m.map;
  for (std::size_t c = 1; c < classes; ++c)
    if (!m.per_class[c]) r.flags.push_back(class_names[c] + ": no ground-truth objects, excluded from map");

  if (probs.empty()) {
    r.flags.push_back("auc: no probability maps supplied");
  } else {
    std::vector<LabelGrid> truth;
    truth.reserve(pairs.size());
    for (const auto& p : pairs) truth.push_back(p.truth);
    const auto a = auc_ovr(probs, truth, classes);
    r.auc = a.mean;
    for (std::size_t c = 1; c < classes; ++c)
      if (!a.per_class[c]) r.flags.push_back(class_names[c] + ": absent or exhaustive in truth, excluded from auc");
  }
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "absent"; }

}  // namespace

std::string MetricsReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(20) << "metric" << "value\n";
  os << std::setw(20) << "miou" << fmt(miou) << '\n';
  os << std::setw(20) << "mdc" << fmt(mdc) << '\n';
  os << std::setw(20) << "map" << fmt(map) << '\n';
  os << std::setw(20) << "auc" << fmt(auc) << '\n';
  for (std::size_t c = 1; c < class_names.size(); ++c)
    os << std::setw(20) << ("iou " + class_names[c]) << fmt(iou[c]) << '\n';
  os << "confusion (rows truth, cols predicted)\n";
  for (std::size_t t = 0; t < confusion.classes(); ++t) {
    os << std::setw(16) << class_names[t];
    for (std::size_t p = 0; p < confusion.classes(); ++p) os << ' ' << std::setw(10) << confusion.at(t, p);
    os << '\n';
  }
  for (const auto& f : flags) os << "note: " << f << '\n';
  return os.str();
}

std::string MetricsReport::key_values() const {
  std::ostringstream os;
  os << "miou=" << fmt(miou) << '\n' << "mdc=" << fmt(mdc) << '\n';
  for (std::size_t c = 1; c < class_names.size(); ++c) os << "iou." << class_names[c] << '=' << fmt(iou[c]) << '\n';
  os << "map=" << fmt(map) << '\n' << "auc=" << fmt(auc) << '\n';
  return os.str();
}

}  // namespace ripeseg
