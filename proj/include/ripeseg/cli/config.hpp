#pragma once

// Flat dotted-key configuration. Every key is declared once in the registry;
// config files ("key = value", '#' comments) and command-line flags may only
// set registered keys.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ripeseg/data/dataset.hpp"
#include "ripeseg/data/synth.hpp"
#include "ripeseg/loss/loss.hpp"
#include "ripeseg/model/arch.hpp"
#include "ripeseg/train/trainer.hpp"

namespace ripeseg {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string help;
  std::string group;  // prefix before the first '.', or "global"
};

const std::vector<ConfigKey>& config_registry();

/// Registry entries whose group is in `groups`, in registry order.
std::vector<const ConfigKey*> keys_for_groups(const std::vector<std::string>& groups);

class Config {
 public:
  Config();

  /// Unknown keys and malformed values raise ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  void parse(const std::string& text, const std::string& origin);
  void load_file(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  /// Every key with its current value, one "key = value" line each, sorted.
  std::string resolved() const;
  std::vector<std::pair<std::string, std::string>> items() const;

 private:
  std::map<std::string, std::string> values_;
};

ArchConfig arch_config(const Config& c);
LossConfig loss_config(const Config& c);
TrainConfig train_config(const Config& c);
SynthConfig synth_config(const Config& c);
SplitFractions split_fractions(const Config& c);
EvalOptions eval_options(const Config& c);

}  // namespace ripeseg
