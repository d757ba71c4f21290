#include "ripeseg/cli/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ripeseg {

namespace {

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  return s;
}

std::string group_of(const std::string& key) {
  const auto dot = key.find('.');
  return dot == std::string::npos ? "global" : key.substr(0, dot);
}

std::vector<ConfigKey> build_registry() {
  std::vector<ConfigKey> r{
      {"seed", "0", "seed for initialization, batch order, augmentation and synthesis", ""},
      {"run.name", "default", "run directory name under runs/ when --out is not given", ""},

      {"model.height", "64", "input height in pixels (padded internally to a multiple of 32)", ""},
      {"model.width", "64", "input width in pixels (padded internally to a multiple of 32)", ""},
      {"model.channels", "3", "input channels", ""},
      {"model.classes", "4", "output classes including background", ""},
      {"model.widths", "16,32,64,128,256", "encoder channel widths, one per level", ""},
      {"model.spb_per_level", "2,2,2,2,3", "shape preservation blocks per encoder level", ""},
      {"model.use_transformer", "true", "fuse transformer projections into the latent features", ""},
      {"model.backbone", "spb-rb", "encoder backbone id", ""},
      {"model.patch", "8", "transformer patch side P", ""},
      {"model.embed", "64", "transformer embedding width l", ""},
      {"model.heads", "4", "attention heads h", ""},
      {"model.depth", "3", "stacked transformer encoders t", ""},
      {"model.ff_mult", "4", "feedforward hidden width as a multiple of l", ""},

      {"loss.kind", "lt", "objective: lt, ce, dice, focal_tversky, soft_nn", ""},
      {"loss.beta1", "0.9", "weight of the dice-style term", ""},
      {"loss.beta2", "0.1", "weight of the cross-entropy term", ""},
      {"loss.tau", "1.5", "softmax temperature applied to logits inside the loss", ""},
      {"loss.class_weights", "", "optional per-class cross-entropy weights (comma-separated)", ""},
      {"loss.prob_floor", "1e-7", "probability clamp before the logarithm", ""},
      {"loss.ft_alpha", "0.7", "focal Tversky false-negative weight", ""},
      {"loss.ft_beta", "0.3", "focal Tversky false-positive weight", ""},
      {"loss.ft_gamma", "1.3333333333333333", "focal Tversky focusing exponent", ""},

      {"train.epochs", "200", "training epochs", ""},
      {"train.batch_size", "16", "samples per batch", ""},
      {"train.fixed_iterations", "0", "iterations per epoch; 0 derives it from the training set size", ""},
      {"train.checkpoint_every", "1", "write last checkpoint every N epochs (0: only at the end)", ""},
      {"train.patience", "0", "early-stop patience in epochs (0: off)", ""},
      {"train.validate", "true", "evaluate on the validation split after each epoch", ""},
      {"train.augment", "", "comma-separated augmentations applied on the fly (empty: off)", ""},
      {"train.augment_probability", "0.5", "probability of each on-the-fly augmentation", ""},
      {"train.resume", "false", "continue from the run directory's last checkpoint", ""},

      {"optim.rho", "0.95", "ADADELTA decay rate", ""},
      {"optim.lr", "1.0", "ADADELTA learning rate", ""},
      {"optim.eps", "1e-6", "ADADELTA epsilon", ""},

      {"data.root", "data", "dataset root with images/, masks/ and classmap.txt", ""},
      {"data.split_seed", "0", "seed of the train/val/test shuffle", ""},
      {"data.train_fraction", "0.75", "training fraction", ""},
      {"data.val_fraction", "0.125", "validation fraction", ""},
      {"data.test_fraction", "0.125", "test fraction", ""},

      {"eval.map_iou", "0.5", "box IoU threshold for mAP matching", ""},
      {"eval.ap_mode", "all_point", "AP interpolation: all_point or eleven_point", ""},
      {"eval.split", "test", "split to evaluate: train, val, test or all", ""},

      {"synth.count", "16", "number of synthetic scenes", ""},
      {"synth.height", "64", "synthetic scene height", ""},
      {"synth.width", "64", "synthetic scene width", ""},
      {"synth.min_objects", "1", "minimum ellipses per scene", ""},
      {"synth.max_objects", "6", "maximum ellipses per scene", ""},

      {"augment.transforms", "brightness,hflip,vflip,rotation,shear_h,shear_v,zoom,gaussian_blur,salt_pepper,speckle",
       "augmentations for the augment command", ""},
      {"augment.probability", "0.5", "probability of each augmentation", ""},
      {"augment.copies", "1", "augmented copies written per sample", ""},

      {"sweep.kind", "beta", "ablation: beta, tau, loss or transformer", ""},
      {"sweep.grid", "", "comma-separated settings (empty: the standard grid)", ""},
  };
  for (auto& k : r) k.group = group_of(k.key);
  return r;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key " + key + ": '" + value + "' is not " + expected);
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) bad_value(key, v, "a number");
  return d;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  if (v.empty() || v[0] == '-') bad_value(key, v, "a non-negative integer");
  const auto n = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || errno == ERANGE) bad_value(key, v, "a non-negative integer");
  return n;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

}  // namespace

const std::vector<ConfigKey>& config_registry() {
  static const auto r = build_registry();
  return r;
}

std::vector<const ConfigKey*> keys_for_groups(const std::vector<std::string>& groups) {
  std::vector<const ConfigKey*> out;
  for (const auto& k : config_registry())
    if (std::find(groups.begin(), groups.end(), k.group) != groups.end()) out.push_back(&k);
  return out;
}

Config::Config() {
  for (const auto& k : config_registry()) values_[k.key] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = trim(value);
}

void Config::parse(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (!values_.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    set(key, line.substr(eq + 1));
  }
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  parse(os.str(), path.string());
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::number(const std::string& key) const { return parse_double(key, get(key)); }
std::uint64_t Config::u64(const std::string& key) const { return parse_u64(key, get(key)); }
std::size_t Config::count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool Config::flag(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::vector<double> Config::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(get(key))) out.push_back(parse_double(key, s));
  return out;
}

std::vector<std::size_t> Config::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(get(key))) out.push_back(static_cast<std::size_t>(parse_u64(key, s)));
  return out;
}

std::vector<std::string> Config::list(const std::string& key) const { return split_list(get(key)); }

std::string Config::resolved() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + '\n';
  return s;
}

std::vector<std::pair<std::string, std::string>> Config::items() const { return {values_.begin(), values_.end()}; }

ArchConfig arch_config(const Config& c) {
  ArchConfig a;
  a.height = c.count("model.height");
  a.width = c.count("model.width");
  a.channels = c.count("model.channels");
  a.classes = c.count("model.classes");
  a.widths = c.counts("model.widths");
  a.spb_per_level = c.counts("model.spb_per_level");
  a.use_transformer = c.flag("model.use_transformer");
  a.backbone = c.get("model.backbone");
  a.patch = {c.count("model.patch"), c.count("model.embed"), c.count("model.heads"), c.count("model.depth"),
             c.count("model.ff_mult")};
  a.validate();
  return a;
}

LossConfig loss_config(const Config& c) {
  LossConfig l;
  l.kind = parse_loss_kind(c.get("loss.kind"));
  l.beta1 = c.number("loss.beta1");
  l.beta2 = c.number("loss.beta2");
  l.tau = c.number("loss.tau");
  l.classes = c.count("model.classes");
  l.class_weights = c.numbers("loss.class_weights");
  l.prob_floor = c.number("loss.prob_floor");
  l.focal_tversky = {c.number("loss.ft_alpha"), c.number("loss.ft_beta"), c.number("loss.ft_gamma")};
  l.validate();
  return l;
}

EvalOptions eval_options(const Config& c) {
  EvalOptions e;
  e.map_iou = c.number("eval.map_iou");
  if (!(e.map_iou > 0 && e.map_iou <= 1)) throw ConfigError("eval.map_iou must lie in (0, 1]");
  const auto& mode = c.get("eval.ap_mode");
  if (mode == "all_point") e.ap_mode = ApMode::all_point;
  else if (mode == "eleven_point") e.ap_mode = ApMode::eleven_point;
  else throw ConfigError("eval.ap_mode must be all_point or eleven_point, got '" + mode + "'");
  return e;
}

TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.epochs = c.count("train.epochs");
  t.batch_size = c.count("train.batch_size");
  t.fixed_iterations = c.count("train.fixed_iterations");
  t.checkpoint_every = c.count("train.checkpoint_every");
  t.patience = c.count("train.patience");
  t.run_validation = c.flag("train.validate");
  t.augment = c.get("train.augment");
  t.augment_probability = c.number("train.augment_probability");
  t.optimizer = {c.number("optim.rho"), c.number("optim.lr"), c.number("optim.eps")};
  t.seed = c.u64("seed");
  t.eval = eval_options(c);
  t.validate();
  return t;
}

SynthConfig synth_config(const Config& c) {
  SynthConfig s;
  s.count = c.count("synth.count");
  s.height = c.count("synth.height");
  s.width = c.count("synth.width");
  s.min_objects = c.count("synth.min_objects");
  s.max_objects = c.count("synth.max_objects");
  s.seed = c.u64("seed");
  s.validate();
  return s;
}

SplitFractions split_fractions(const Config& c) {
  SplitFractions f{c.number("data.train_fraction"), c.number("data.val_fraction"), c.number("data.test_fraction")};
  f.validate();
  return f;
}

}  // namespace ripeseg
