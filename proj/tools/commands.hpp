#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ripeseg/cli/config.hpp"

namespace ripeseg::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeAbort = 2, kVerificationFailed = 3 };

struct Context {
  Config config;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<std::string> inputs;
  std::vector<std::string> ops;
  std::string inject_fault;
  std::size_t max_coords = 0;
  bool resume = false;
  std::ostream* stdout_stream;
  std::ostream* stderr_stream;
};

/// Config groups each subcommand consumes; drives option registration and
/// --help listings.
std::vector<std::string> command_groups(const std::string& command);

int cmd_train(const Context& ctx);
int cmd_evaluate(const Context& ctx);
int cmd_predict(const Context& ctx);
int cmd_augment(const Context& ctx);
int cmd_synth(const Context& ctx);
int cmd_gradcheck(const Context& ctx);
int cmd_sweep(const Context& ctx);

}  // namespace ripeseg::cli
