#include "ripeseg/train/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace ripeseg {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double parse_number(const std::string& s, const char* what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw ConfigError(std::string("sweep ") + what + " value '" + s + "' is not a number");
  return v;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::beta: return "beta";
    case SweepKind::tau: return "tau";
    case SweepKind::loss: return "loss";
    case SweepKind::transformer: return "transformer";
  }
  return "?";
}

SweepKind parse_sweep_kind(const std::string& s) {
  if (s == "beta") return SweepKind::beta;
  if (s == "tau") return SweepKind::tau;
  if (s == "loss") return SweepKind::loss;
  if (s == "transformer") return SweepKind::transformer;
  throw ConfigError("unknown sweep kind '" + s + "' (beta, tau, loss, transformer)");
}

std::vector<std::string> default_grid(SweepKind k) {
  switch (k) {
    case SweepKind::beta: return {"0.1", "0.3", "0.5", "0.7", "0.9"};
    case SweepKind::tau: return {"1", "1.5", "2", "2.5"};
    case SweepKind::loss: return {"lt", "ce", "soft_nn", "focal_tversky", "dice"};
    case SweepKind::transformer: return {"on", "off"};
  }
  return {};
}

SweepTable run_sweep(SweepKind kind, const std::vector<std::string>& grid, const SweepBase& base, std::ostream* log) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  SweepTable table{kind, {}};
  for (const auto& setting : grid) {
    SweepCell cell;
    cell.setting = setting;
    try {
      auto arch = base.arch;
      auto loss = base.loss;
      switch (kind) {
        case SweepKind::beta: {
          const double b1 = parse_number(setting, "beta1");
          if (b1 < 0 || b1 > 1) throw ConfigError("sweep beta1 must lie in [0, 1]");
          loss.beta1 = cell.beta1 = b1;
          loss.beta2 = cell.beta2 = 1.0 - b1;
          break;
        }
        case SweepKind::tau:
          loss.tau = parse_number(setting, "tau");
          break;
        case SweepKind::loss:
          loss.kind = parse_loss_kind(setting);
          break;
        case SweepKind::transformer:
          if (setting != "on" && setting != "off") throw ConfigError("transformer sweep values are on/off");
          arch.use_transformer = setting == "on";
          break;
      }
      loss.validate();
      SegModel<float> model(arch, base.model_seed);
      TrainOptions opts;
      if (!base.run_root.empty()) opts.run_dir = base.run_root / (to_string(kind) + "_" + setting);
      opts.header = {{"sweep", to_string(kind)}, {"setting", setting}};
      cell.log = train(model, base.data, base.train, loss, opts);
      const auto& eval_set = !base.eval_set.empty()       ? base.eval_set
                             : !base.data.val.empty()      ? base.data.val
                                                           : base.data.train;
      cell.report = evaluate(model, eval_set, base.data.class_names, base.train.eval).report;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    if (log) {
      *log << to_string(kind) << ' ' << setting << ": ";
      if (cell.ok)
        *log << "miou " << fixed(cell.report.miou) << " mdc " << fixed(cell.report.mdc) << " map "
             << fixed(cell.report.map) << " auc " << fixed(cell.report.auc) << '\n';
      else
        *log << "failed: " << cell.error << '\n';
    }
    table.cells.push_back(std::move(cell));
  }
  return table;
}

std::string SweepTable::serialize() const {
  std::string s;
  constexpr std::size_t w = 14;
  auto metric = [](const SweepCell& c, double v) { return c.ok ? fixed(v) : std::string("failed"); };
  if (kind == SweepKind::beta) {
    std::vector<double> b1s;
    for (const auto& c : cells) b1s.push_back(c.beta1);
    s += pad("beta2\\beta1", w);
    for (double b : b1s) s += pad(fixed(b, 1), w);
    s += '\n';
    // Rows are beta2 values in ascending order; a cell is filled where a run
    // used that (beta1, beta2) pair.
    std::vector<double> b2s;
    for (const auto& c : cells) b2s.push_back(c.beta2);
    std::sort(b2s.begin(), b2s.end());
    b2s.erase(std::unique(b2s.begin(), b2s.end(), [](double a, double b) { return std::abs(a - b) < 1e-9; }),
              b2s.end());
    for (double b2 : b2s) {
      s += pad(fixed(b2, 1), w);
      for (const auto& c : cells) s += pad(std::abs(c.beta2 - b2) < 1e-9 ? metric(c, c.report.map) : "-", w);
      s += '\n';
    }
    return s;
  }
  const bool short_form = kind == SweepKind::transformer;
  s += pad(kind == SweepKind::tau ? "tau" : kind == SweepKind::loss ? "loss" : "variant", w);
  s += pad("miou", w) + pad("mdc", w);
  if (!short_form) s += pad("map", w) + pad("auc", w);
  s += '\n';
  for (const auto& c : cells) {
    std::string label = c.setting;
    if (kind == SweepKind::transformer) label = c.setting == "on" ? "with_transformer" : "without_transformer";
    s += pad(label, w) + pad(metric(c, c.report.miou), w) + pad(metric(c, c.report.mdc), w);
    if (!short_form) s += pad(metric(c, c.report.map), w) + pad(metric(c, c.report.auc), w);
    s += '\n';
  }
  return s;
}

}  // namespace ripeseg
