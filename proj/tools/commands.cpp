#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "ripeseg/data/augment.hpp"
#include "ripeseg/data/image_io.hpp"
#include "ripeseg/data/synth.hpp"
#include "ripeseg/model/checkpoint.hpp"
#include "ripeseg/train/sweep.hpp"
#include "ripeseg/train/trainer.hpp"
#include "ripeseg/verify/gradcheck.hpp"

namespace ripeseg::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  os << text;
  if (!os) throw IoError("cannot write " + p.string());
}

fs::path run_dir(const Context& ctx) { return ctx.out ? *ctx.out : fs::path("runs") / ctx.config.get("run.name"); }

struct LoadedData {
  ClassMap classes;
  std::vector<LabeledSample> all;
  DatasetSplit split;
};

LoadedData load_data(const Config& c, const ArchConfig& arch) {
  const fs::path root = c.get("data.root");
  if (!fs::is_directory(root)) throw ManifestError("dataset root " + root.string() + " does not exist");
  const auto manifest = DatasetManifest::scan(root);
  LoadedData d{manifest.classes, load_dataset(manifest), {}};
  if (d.all.empty()) throw ManifestError("dataset root " + root.string() + " contains no images");
  if (d.classes.size() != arch.classes)
    throw ConfigError("class map lists " + std::to_string(d.classes.size()) + " classes but model.classes is " +
                      std::to_string(arch.classes));
  const auto& s = d.all.front().image.shape();
  if (s[0] != arch.height || s[1] != arch.width)
    throw ConfigError("dataset images are " + std::to_string(s[0]) + "x" + std::to_string(s[1]) +
                      " but model.height x model.width is " + std::to_string(arch.height) + "x" +
                      std::to_string(arch.width));
  d.split = split(d.all, split_fractions(c), c.u64("data.split_seed"));
  return d;
}

const std::vector<LabeledSample>& pick_split(const LoadedData& d, const std::string& which) {
  if (which == "train") return d.split.train;
  if (which == "val") return d.split.val;
  if (which == "test") return d.split.test;
  if (which == "all") return d.all;
  throw ConfigError("eval.split must be train, val, test or all, got '" + which + "'");
}

std::vector<std::uint8_t> overlay_rgba(const LabelGrid& mask) {
  // background transparent, unripened yellow, half-ripened pink, fully-ripened cyan
  static constexpr std::uint8_t kColors[4][4] = {
      {0, 0, 0, 0}, {255, 255, 0, 160}, {255, 105, 180, 160}, {0, 255, 255, 160}};
  std::vector<std::uint8_t> out(mask.size() * 4);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto c = std::min<std::size_t>(mask.values[i], 3);
    std::copy(kColors[c], kColors[c] + 4, out.begin() + std::ptrdiff_t(4 * i));
  }
  return out;
}

}  // namespace

std::vector<std::string> command_groups(const std::string& command) {
  if (command == "train") return {"global", "run", "model", "loss", "train", "optim", "data", "eval"};
  if (command == "evaluate") return {"global", "model", "loss", "data", "eval"};
  if (command == "predict") return {"global", "model"};
  if (command == "augment") return {"global", "data", "augment"};
  if (command == "synth") return {"global", "data", "synth"};
  if (command == "gradcheck") return {};
  if (command == "sweep") return {"global", "run", "model", "loss", "train", "optim", "data", "eval", "sweep"};
  return {};
}

int cmd_train(const Context& ctx) {
  auto& out = *ctx.stdout_stream;
  const auto& c = ctx.config;
  const auto arch = arch_config(c);
  const auto loss = loss_config(c);
  const auto tcfg = train_config(c);
  const auto data = load_data(c, arch);
  const auto run = run_dir(ctx);
  fs::create_directories(run);
  write_text(run / "config.resolved", c.resolved());

  SegModel<float> model(arch, c.u64("seed"));
  out << "run " << run.string() << ": " << data.split.train.size() << " train / " << data.split.val.size()
      << " val samples, " << model.parameter_count() << " parameters\n";
  TrainOptions opts;
  opts.run_dir = run;
  opts.resume = ctx.resume || c.flag("train.resume");
  opts.header = c.items();
  opts.log = &out;
  const auto log = train(model, {data.split.train, data.split.val, data.classes.names}, tcfg, loss, opts);
  out << log.summary();
  return kOk;
}

int cmd_evaluate(const Context& ctx) {
  auto& out = *ctx.stdout_stream;
  if (!ctx.checkpoint) throw ConfigError("evaluate needs --checkpoint");
  const auto& c = ctx.config;
  const auto arch = arch_config(c);
  const auto loss = loss_config(c);
  auto model = load_checkpoint<float>(*ctx.checkpoint, arch);
  const auto data = load_data(c, arch);
  const auto& samples = pick_split(data, c.get("eval.split"));
  if (samples.empty()) throw ConfigError("split '" + c.get("eval.split") + "' is empty");
  const auto ev = evaluate(model, samples, data.classes.names, eval_options(c), &loss);
  out << ev.report.table() << '\n' << ev.report.key_values() << "loss=" << std::setprecision(17) << ev.loss << '\n';
  if (ctx.out) write_text(*ctx.out / "reports" / "evaluate.txt", ev.report.table() + ev.report.key_values());
  return kOk;
}

int cmd_predict(const Context& ctx) {
  auto& out = *ctx.stdout_stream;
  if (!ctx.checkpoint) throw ConfigError("predict needs --checkpoint");
  if (ctx.inputs.empty()) throw ConfigError("predict needs at least one --input image or directory");
  const auto arch = arch_config(ctx.config);
  auto model = load_checkpoint<float>(*ctx.checkpoint, arch);
  const fs::path dest = ctx.out ? *ctx.out : fs::path("predictions");
  std::vector<fs::path> files;
  for (const auto& in : ctx.inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  for (const auto& f : files) {
    NDArray<float> image;
    try {
      image = read_image(f);
    } catch (const IoError& e) {
      throw IoError("unreadable image " + f.string() + ": " + e.what());
    }
    const auto p = predict(model, image);
    const auto stem = f.stem().string();
    write_mask(dest / (stem + "_mask.png"), p.mask);
    write_rgba(dest / (stem + "_overlay.png"), p.mask.height, p.mask.width, overlay_rgba(p.mask));
    out << f.string() << " -> " << (dest / (stem + "_mask.png")).string() << '\n';
  }
  return kOk;
}

int cmd_augment(const Context& ctx) {
  auto& out = *ctx.stdout_stream;
  const auto& c = ctx.config;
  const fs::path root = c.get("data.root");
  const auto manifest = DatasetManifest::scan(root);
  const auto samples = load_dataset(manifest);
  const auto spec = AugmentSpec::parse(c.get("augment.transforms"), c.number("augment.probability"));
  const auto copies = c.count("augment.copies");
  const fs::path dest = ctx.out ? *ctx.out : fs::path(root.string() + "_aug");
  std::vector<LabeledSample> result;
  for (std::size_t k = 0; k < copies; ++k) {
    const auto global = Rng::derive(c.u64("seed"), k);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto s = augment(samples[i], spec, sample_seed(global, i));
      s.stem = samples[i].stem + "_aug" + std::to_string(k);
      result.push_back(std::move(s));
    }
  }
  save_dataset(dest, result, manifest.classes);
  out << "wrote " << result.size() << " augmented samples to " << dest.string() << '\n';
  return kOk;
}

int cmd_synth(const Context& ctx) {
  const auto cfg = synth_config(ctx.config);
  const fs::path root = ctx.out ? *ctx.out : fs::path(ctx.config.get("data.root"));
  const auto m = synth_generate(root, cfg);
  *ctx.stdout_stream << "wrote " << m.stems.size() << " synthetic samples to " << root.string() << '\n';
  return kOk;
}

int cmd_gradcheck(const Context& ctx) {
  auto& out = *ctx.stdout_stream;
  GradcheckSuiteOptions opts;
  opts.ops = ctx.ops;
  opts.check.faulty_op = ctx.inject_fault;
  opts.check.max_coords = ctx.max_coords;
  out << std::left << std::setw(22) << "op" << std::setw(10) << "checked" << std::setw(10) << "passed"
      << std::setw(9) << "refined" << std::setw(16) << "max_rel_err" << std::setw(10) << "seconds" << "status\n";
  std::vector<std::string> failed;
  run_gradcheck_suite(opts, [&](const GradcheckResult& r) {
    const bool ok = r.ok(opts.check.min_pass_fraction);
    char err[32], secs[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    std::snprintf(secs, sizeof secs, "%.2f", r.seconds);
    out << std::setw(22) << r.op << std::setw(10) << r.checked << std::setw(10) << r.passed << std::setw(9) << r.refined
        << std::setw(16) << err
        << std::setw(10) << secs << (ok ? "ok" : "FAIL") << (r.error.empty() ? "" : "  " + r.error) << '\n'
        << std::flush;
    if (!ok) failed.push_back(r.op);
  });
  if (failed.empty()) return kOk;
  std::string names;
  for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
  *ctx.stderr_stream << "gradient check failed for: " << names << '\n';
  return kVerificationFailed;
}

int cmd_sweep(const Context& ctx) {
  auto& out = *ctx.stdout_stream;
  const auto& c = ctx.config;
  const auto kind = parse_sweep_kind(c.get("sweep.kind"));
  auto grid = c.list("sweep.grid");
  if (grid.empty()) grid = default_grid(kind);
  SweepBase base;
  base.arch = arch_config(c);
  base.loss = loss_config(c);
  base.train = train_config(c);
  const auto data = load_data(c, base.arch);
  base.data = {data.split.train, data.split.val, data.classes.names};
  base.model_seed = c.u64("seed");
  const auto run = run_dir(ctx);
  base.run_root = run / ("sweep_" + to_string(kind));
  fs::create_directories(base.run_root);
  write_text(run / "config.resolved", c.resolved());
  const auto table = run_sweep(kind, grid, base, &out);
  const auto text = table.serialize();
  write_text(run / "reports" / ("sweep_" + to_string(kind) + ".txt"), text);
  out << text;
  const bool any_ok = std::any_of(table.cells.begin(), table.cells.end(), [](const SweepCell& s) { return s.ok; });
  return any_ok ? kOk : kRuntimeAbort;
}

}  // namespace ripeseg::cli
