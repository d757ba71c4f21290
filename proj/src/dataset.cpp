#include "ripeseg/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ripeseg/data/image_io.hpp"
#include "ripeseg/tensor/random.hpp"

namespace ripeseg {

namespace fs = std::filesystem;

ClassMap ClassMap::tomato() { return {{"background", "unripened", "half_ripened", "fully_ripened"}}; }

ClassMap ClassMap::read(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open class map " + path.string());
  std::vector<std::pair<std::size_t, std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    long long idx;
    std::string name, extra;
    if (!(ls >> idx)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": expected '<index> <name>'");
    }
    if (!(ls >> name) || (ls >> extra) || idx < 0 || idx > 255)
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": expected '<index> <name>'");
    rows.emplace_back(std::size_t(idx), name);
  }
  std::sort(rows.begin(), rows.end());
  ClassMap m;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != i) throw ManifestError(path.string() + ": class indices must be 0..n-1 without gaps");
    m.names.push_back(rows[i].second);
  }
  if (m.names.size() < 2) throw ManifestError(path.string() + ": need background plus at least one class");
  return m;
}

void ClassMap::write(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  for (std::size_t i = 0; i < names.size(); ++i) os << i << ' ' << names[i] << '\n';
  if (!os) throw IoError("cannot write " + path.string());
}

void SplitFractions::validate() const {
  if (train < 0 || val < 0 || test < 0) throw ConfigError("split fractions must be non-negative");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

DatasetManifest DatasetManifest::scan(const fs::path& root) {
  if (!fs::is_directory(root)) throw ManifestError("dataset root " + root.string() + " does not exist");
  if (!fs::is_directory(root / "images")) throw ManifestError("dataset root " + root.string() + " has no images/");
  DatasetManifest m;
  m.root = root;
  for (const auto& e : fs::directory_iterator(root / "images"))
    if (e.is_regular_file() && e.path().extension() == ".png") m.stems.push_back(e.path().stem().string());
  std::sort(m.stems.begin(), m.stems.end());
  for (const auto& s : m.stems)
    if (!fs::exists(m.mask_path(s))) throw ManifestError("missing mask for " + s);
  m.classes = ClassMap::read(root / "classmap.txt");
  return m;
}

std::vector<LabeledSample> load_dataset(const DatasetManifest& manifest) {
  auto stems = manifest.stems;
  std::sort(stems.begin(), stems.end());
  std::vector<LabeledSample> out;
  out.reserve(stems.size());
  for (const auto& stem : stems) {
    if (!fs::exists(manifest.mask_path(stem))) throw ManifestError("missing mask for " + stem);
    LabeledSample s{stem, read_image(manifest.image_path(stem)), read_mask(manifest.mask_path(stem))};
    if (s.mask.height != s.image.shape()[0] || s.mask.width != s.image.shape()[1])
      throw ManifestError("image/mask dims differ for " + stem);
    for (auto v : s.mask.values)
      if (v >= manifest.classes.size())
        throw LabelError("mask " + stem + " has class " + std::to_string(v) + " outside the " +
                         std::to_string(manifest.classes.size()) + "-class map");
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const fs::path& root, const std::vector<LabeledSample>& samples, const ClassMap& classes) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  classes.write(root / "classmap.txt");
  for (const auto& s : samples) {
    write_image(root / "images" / (s.stem + ".png"), s.image);
    write_mask(root / "masks" / (s.stem + ".png"), s.mask);
  }
}

SplitIndices split_indices(std::size_t n, const SplitFractions& fractions, std::uint64_t seed) {
  fractions.validate();
  const auto n_val = static_cast<std::size_t>(std::floor(fractions.val * double(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(fractions.test * double(n) + 1e-9));
  Rng rng(Rng::derive(seed, 0x5b1e));
  const auto perm = rng.permutation(n);
  SplitIndices out;
  out.val.assign(perm.begin(), perm.begin() + n_val);
  out.test.assign(perm.begin() + n_val, perm.begin() + n_val + n_test);
  out.train.assign(perm.begin() + n_val + n_test, perm.end());
  for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

DatasetSplit split(const std::vector<LabeledSample>& samples, const SplitFractions& fractions, std::uint64_t seed) {
  const auto idx = split_indices(samples.size(), fractions, seed);
  DatasetSplit out;
  for (auto i : idx.train) out.train.push_back(samples[i]);
  for (auto i : idx.val) out.val.push_back(samples[i]);
  for (auto i : idx.test) out.test.push_back(samples[i]);
  return out;
}

}  // namespace ripeseg
