#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "commands.hpp"

namespace fs = std::filesystem;
using namespace ripeseg;

namespace {

struct Sub {
  std::string name;
  std::string about;
  int (*run)(const cli::Context&);
  CLI::App* app = nullptr;
  std::map<std::string, std::pair<CLI::Option*, std::string>> keys;
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return cli::kRuntimeAbort;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ManifestError*>(&e) ||
      dynamic_cast<const LabelError*>(&e) || dynamic_cast<const CheckpointError*>(&e) ||
      dynamic_cast<const IoError*>(&e) || dynamic_cast<const ShapeError*>(&e))
    return cli::kConfigError;
  return cli::kRuntimeAbort;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const ManifestError*>(&e)) return "ManifestError";
  if (dynamic_cast<const LabelError*>(&e)) return "LabelError";
  if (dynamic_cast<const CheckpointError*>(&e)) return "CheckpointError";
  if (dynamic_cast<const IoError*>(&e)) return "IoError";
  if (dynamic_cast<const ShapeError*>(&e)) return "ShapeError";
  if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
  return "error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tomato ripeness segmentation: training, evaluation and tooling"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, seed;
  app.add_option("--config", config_path, "config file of 'key = value' lines");
  app.add_option("--seed", seed, "global seed (config key 'seed')");
  app.add_option("--out", out_dir, "output directory (run dir, dataset root or prediction dir)");

  std::vector<Sub> subs{
      {"train", "train a model and write a run directory", cli::cmd_train, nullptr, {}},
      {"evaluate", "evaluate a checkpoint on a dataset split", cli::cmd_evaluate, nullptr, {}},
      {"predict", "write predicted masks and color overlays", cli::cmd_predict, nullptr, {}},
      {"augment", "write augmented copies of a dataset", cli::cmd_augment, nullptr, {}},
      {"synth", "generate a synthetic ripeness dataset", cli::cmd_synth, nullptr, {}},
      {"gradcheck", "finite-difference gradient verification suite", cli::cmd_gradcheck, nullptr, {}},
      {"sweep", "run an ablation sweep (beta, tau, loss, transformer)", cli::cmd_sweep, nullptr, {}},
  };

  std::string checkpoint;
  std::vector<std::string> inputs, ops;
  std::string fault;
  std::size_t max_coords = 0;
  bool resume = false;

  for (auto& s : subs) {
    s.app = app.add_subcommand(s.name, s.about);
    for (const auto* k : keys_for_groups(cli::command_groups(s.name))) {
      if (k->key == "seed") continue;  // the global --seed flag
      auto& slot = s.keys[k->key];
      std::string help = k->help + " (default: " + (k->default_value.empty() ? "empty" : k->default_value) + ")";
      slot.first = s.app->add_option("--" + k->key, slot.second, help)->group("Config keys");
    }
  }
  auto* train = subs[0].app;
  train->add_flag("--resume", resume, "continue from the run directory's last checkpoint");
  for (auto* a : {subs[1].app, subs[2].app})
    a->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  subs[2].app->add_option("--input", inputs, "input image or directory (repeatable)")->required();
  auto* gc = subs[5].app;
  gc->add_option("--ops", ops, "restrict the suite to these ops")->delimiter(',');
  gc->add_option("--inject-fault", fault, "corrupt this op's backward pass (verification of the harness)");
  gc->add_option("--max-coords", max_coords, "checked coordinates per tensor (0: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  const Sub* chosen = nullptr;
  for (const auto& s : subs)
    if (s.app->parsed()) chosen = &s;

  cli::Context ctx;
  ctx.stdout_stream = &std::cout;
  ctx.stderr_stream = &std::cerr;
  try {
    if (!checkpoint.empty()) {
      ctx.checkpoint = fs::path(checkpoint);
      // A checkpoint inside runs/<name>/checkpoints/ inherits that run's settings.
      const auto resolved = ctx.checkpoint->parent_path().parent_path() / "config.resolved";
      if (fs::exists(resolved)) ctx.config.load_file(resolved);
    }
    if (!config_path.empty()) ctx.config.load_file(config_path);
    for (const auto& [key, slot] : chosen->keys)
      if (slot.first->count()) ctx.config.set(key, slot.second);
    if (!seed.empty()) ctx.config.set("seed", seed);
    ctx.config.u64("seed");
    if (!out_dir.empty()) ctx.out = fs::path(out_dir);
    ctx.inputs = inputs;
    ctx.ops = ops;
    ctx.inject_fault = fault;
    ctx.max_coords = max_coords;
    ctx.resume = resume;
    return chosen->run(ctx);
  } catch (const std::exception& e) {
    std::cerr << chosen->name << ": " << error_kind(e) << ": " << e.what() << '\n';
    return exit_code_for(e);
  }
}
