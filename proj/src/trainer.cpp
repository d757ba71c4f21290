#include "ripeseg/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace ripeseg {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  os << text;
  if (!os) throw IoError("cannot write " + p.string());
}

NDArray<float> as_batch(const NDArray<float>& image) {
  const auto& s = image.shape();
  if (s.rank() == 4) return image;
  if (s.rank() != 3) throw ShapeError("expected an HxWxC image, got " + s.str());
  return image.reshaped(Shape{1, s[0], s[1], s[2]});
}

double score_of(const EpochRecord& r) { return std::isnan(r.val_miou) ? -r.train_loss : r.val_miou; }

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (augment_probability < 0 || augment_probability > 1)
    throw ConfigError("train.augment_probability must lie in [0, 1]");
  if (!(eval.map_iou > 0 && eval.map_iou <= 1)) throw ConfigError("eval.map_iou must lie in (0, 1]");
  optimizer.validate();
  AugmentSpec::parse(augment, augment_probability);
}

std::size_t TrainConfig::iterations(std::size_t train_size) const {
  if (fixed_iterations) return fixed_iterations;
  return (train_size + batch_size - 1) / batch_size;
}

std::vector<std::vector<std::size_t>> epoch_batches(const TrainConfig& cfg, std::size_t train_size, std::size_t epoch) {
  if (train_size == 0) throw ConfigError("training set is empty");
  Rng rng(Rng::derive(cfg.seed, epoch));
  const auto perm = rng.permutation(train_size);
  std::vector<std::vector<std::size_t>> out;
  const auto iters = cfg.iterations(train_size);
  std::size_t cursor = 0;
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<std::size_t> batch;
    for (std::size_t j = 0; j < cfg.batch_size; ++j) {
      if (!cfg.fixed_iterations && cursor == train_size) break;
      batch.push_back(perm[cursor % train_size]);
      ++cursor;
    }
    out.push_back(std::move(batch));
  }
  return out;
}

std::string RunLog::curves_tsv() const {
  std::string s = "epoch\ttrain_loss\tval_loss\tval_miou\n";
  for (const auto& r : epochs)
    s += std::to_string(r.epoch) + '\t' + num(r.train_loss) + '\t' + num(r.val_loss) + '\t' + num(r.val_miou) + '\n';
  return s;
}

std::string RunLog::summary() const {
  std::string s;
  s += "epochs=" + std::to_string(epochs.size()) + '\n';
  if (!epochs.empty()) {
    s += "final_train_loss=" + num(epochs.back().train_loss) + '\n';
    s += "first_train_loss=" + num(epochs.front().train_loss) + '\n';
  }
  s += "best_epoch=" + std::to_string(best_epoch) + '\n';
  if (final_report) s += final_report->key_values();
  return s;
}

std::string RunLog::text() const {
  std::string s;
  for (const auto& [k, v] : header) s += "# " + k + " = " + v + '\n';
  s += curves_tsv();
  s += summary();
  s += "wall_seconds=" + num(wall_seconds) + '\n';
  return s;
}

std::vector<EpochRecord> RunLog::parse_curves(const std::string& tsv) {
  std::vector<EpochRecord> out;
  std::istringstream is(tsv);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char* end = nullptr;
    const char* p = line.c_str();
    r.epoch = std::strtoull(p, &end, 10);
    r.train_loss = std::strtod(end, &end);
    r.val_loss = std::strtod(end, &end);
    r.val_miou = std::strtod(end, &end);
    if (end == p) throw IoError("malformed curves row: " + line);
    out.push_back(r);
  }
  return out;
}

std::pair<NDArray<float>, NDArray<float>> make_batch(const std::vector<const LabeledSample*>& samples,
                                                      std::size_t classes) {
  if (samples.empty()) throw ContractError("make_batch: empty batch");
  const auto& s0 = samples.front()->image.shape();
  const std::size_t h = s0[0], w = s0[1], c = s0[2], n = samples.size();
  NDArray<float> x(Shape{n, h, w, c});
  std::vector<std::uint8_t> labels;
  labels.reserve(n * h * w);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* s = samples[i];
    if (s->image.shape() != s0) throw ShapeError("batch images differ in shape: " + s->stem);
    if (s->mask.height != h || s->mask.width != w) throw ShapeError("mask dims differ from image: " + s->stem);
    std::copy(s->image.data().begin(), s->image.data().end(), x.data().begin() + std::ptrdiff_t(i * h * w * c));
    labels.insert(labels.end(), s->mask.values.begin(), s->mask.values.end());
  }
  auto t = one_hot<float, std::uint8_t>(labels, Shape{n, h, w}, classes);
  return {std::move(x), std::move(t)};
}

Prediction predict(const SegModel<float>& model, const NDArray<float>& image) {
  Graph<float>::Options inference;
  inference.record = false;
  Graph<float> g(inference);
  auto probs = model.forward(g, Tensor<float>::constant(as_batch(image)), NormMode::eval);
  const auto& s = probs.shape();
  const std::size_t h = s[1], w = s[2], c = s[3];
  Prediction p{LabelGrid(h, w), ConfidenceGrid(h, w), probs.value().reshaped(Shape{h, w, c})};
  const auto v = probs.data();
  for (std::size_t px = 0; px < h * w; ++px) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (v[px * c + k] > v[px * c + best]) best = k;
    p.mask.values[px] = static_cast<std::uint8_t>(best);
    p.confidence.values[px] = v[px * c + best];
  }
  return p;
}

Evaluation evaluate(const SegModel<float>& model, const std::vector<LabeledSample>& samples,
                    const std::vector<std::string>& class_names, const EvalOptions& options, const LossConfig* loss) {
  if (class_names.size() != model.arch().classes)
    throw ConfigError("class map has " + std::to_string(class_names.size()) + " classes, model predicts " +
                      std::to_string(model.arch().classes));
  std::vector<MaskPair> pairs;
  std::vector<NDArray<float>> probs;
  double loss_sum = 0;
  for (const auto& s : samples) {
    Graph<float>::Options inference;
    inference.record = false;
    Graph<float> g(inference);
    auto logits = model.logits(g, Tensor<float>::constant(as_batch(s.image)), NormMode::eval);
    if (loss) {
      const auto targets = one_hot<float, std::uint8_t>(s.mask.values, Shape{1, s.mask.height, s.mask.width},
                                                        model.arch().classes);
      loss_sum += compute_loss(g, logits, targets, *loss).item();
    }
    auto pr = ops::softmax_temp(g, logits, 1.0);
    const std::size_t h = s.mask.height, w = s.mask.width, c = model.arch().classes;
    MaskPair mp{LabelGrid(h, w), s.mask, ConfidenceGrid(h, w)};
    const auto v = pr.data();
    for (std::size_t px = 0; px < h * w; ++px) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (v[px * c + k] > v[px * c + best]) best = k;
      mp.pred.values[px] = static_cast<std::uint8_t>(best);
      mp.confidence->values[px] = v[px * c + best];
    }
    pairs.push_back(std::move(mp));
    probs.push_back(pr.value().reshaped(Shape{h, w, c}));
  }
  Evaluation e;
  e.report = build_report(pairs, probs, class_names, options);
  e.loss = samples.empty() ? kNaN : loss_sum / double(samples.size());
  return e;
}

double train_step(SegModel<float>& model, Adadelta& opt, const NDArray<float>& x, const NDArray<float>& targets,
                  const LossConfig& loss) {
  model.store().zero_grad();
  Graph<float> g;
  auto logits = model.logits(g, Tensor<float>::constant(x), NormMode::train);
  auto l = compute_loss(g, logits, targets, loss);
  g.backward(l);
  opt.step();
  return l.item();
}

RunLog train(SegModel<float>& model, const TrainData& data, const TrainConfig& cfg, const LossConfig& loss,
             const TrainOptions& options) {
  cfg.validate();
  loss.validate();
  if (data.train.empty()) throw ConfigError("training set is empty");
  if (loss.classes != model.arch().classes)
    throw ConfigError("loss configured for " + std::to_string(loss.classes) + " classes, model has " +
                      std::to_string(model.arch().classes));
  const auto t0 = std::chrono::steady_clock::now();
  const bool persist = !options.run_dir.empty();
  const auto& run = options.run_dir;
  const auto spec = AugmentSpec::parse(cfg.augment, cfg.augment_probability);
  const bool validating = cfg.run_validation && !data.val.empty();

  Adadelta opt(model.store(), cfg.optimizer);
  RunLog log;
  log.header = options.header;
  std::size_t start = 1, resumed_step = 0;
  if (options.resume) {
    if (!persist) throw ConfigError("resume needs a run directory");
    restore(model.store(), std::span<const CheckpointEntry>(read_checkpoint(run_files::last(run))));
    const auto side = read_checkpoint(run_files::last_optimizer(run));
    opt.load_state(side);
    std::size_t done = 0;
    for (const auto& e : side) {
      if (e.name == "trainer.epoch") done = static_cast<std::size_t>(e.data.at(0));
      if (e.name == "trainer.step") resumed_step = static_cast<std::size_t>(e.data.at(0));
    }
    for (const auto& r : RunLog::parse_curves(read_file(run_files::curves(run))))
      if (r.epoch <= done) log.epochs.push_back(r);
    if (log.epochs.size() != done) throw CheckpointError("curves.tsv does not cover the checkpointed epochs");
    start = done + 1;
  }
  if (persist) fs::create_directories(run_files::checkpoints(run));

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : log.epochs)
    if (score_of(r) > best) {
      best = score_of(r);
      log.best_epoch = r.epoch;
    }

  auto save_last = [&](std::size_t epoch, std::size_t step) {
    save_checkpoint(model, run_files::last(run));
    auto side = opt.state();
    side.push_back({"trainer.epoch", Shape{1}, {float(epoch)}});
    side.push_back({"trainer.step", Shape{1}, {float(step)}});
    write_checkpoint(run_files::last_optimizer(run), side);
  };

  std::size_t step = resumed_step;
  for (std::size_t epoch = start; epoch <= cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(cfg, data.train.size(), epoch);
    const auto aug_seed = Rng::derive(cfg.seed ^ 0xa7, epoch);
    double sum = 0;
    for (std::size_t it = 0; it < batches.size(); ++it) {
      std::vector<LabeledSample> augmented;
      std::vector<const LabeledSample*> members;
      augmented.reserve(batches[it].size());
      for (auto i : batches[it]) {
        if (spec.transforms.empty()) {
          members.push_back(&data.train[i]);
        } else {
          augmented.push_back(augment(data.train[i], spec, sample_seed(aug_seed, i)));
          members.push_back(&augmented.back());
        }
      }
      const auto [x, t] = make_batch(members, model.arch().classes);
      try {
        sum += train_step(model, opt, x, t, loss);
      } catch (const NumericError& e) {
        throw NumericError(e.op(), "training aborted at epoch " + std::to_string(epoch) + ", iteration " +
                                       std::to_string(it + 1) + ": first non-finite value from op '" + e.op() +
                                       "' (" + e.what() + ")");
      }
      ++step;
    }
    EpochRecord rec{epoch, sum / double(batches.size()), kNaN, kNaN};
    if (validating) {
      const auto ev = evaluate(model, data.val, data.class_names, cfg.eval, &loss);
      rec.val_loss = ev.loss;
      rec.val_miou = ev.report.miou;
    }
    log.epochs.push_back(rec);
    if (options.log) {
      *options.log << "epoch " << epoch << " train_loss " << num(rec.train_loss);
      if (validating) *options.log << " val_loss " << num(rec.val_loss) << " val_miou " << num(rec.val_miou);
      *options.log << '\n' << std::flush;
    }

    const bool improved = score_of(rec) > best;
    if (improved) {
      best = score_of(rec);
      log.best_epoch = epoch;
    }
    if (persist) {
      if (improved) save_checkpoint(model, run_files::best(run));
      write_file(run_files::curves(run), log.curves_tsv());
      if (epoch == cfg.epochs || (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0)) save_last(epoch, step);
    }
    if (cfg.patience && epoch - log.best_epoch >= cfg.patience) {
      if (persist) save_last(epoch, step);
      if (options.log) *options.log << "early stop after epoch " << epoch << '\n';
      break;
    }
  }

  const auto& final_set = validating ? data.val : data.train;
  log.final_report = evaluate(model, final_set, data.class_names, cfg.eval).report;
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (persist) {
    write_file(run_files::log(run), log.text());
    write_file(run_files::reports(run) / "final.txt", log.final_report->table() + log.final_report->key_values());
  }
  return log;
}

}  // namespace ripeseg
