#include "ripeseg/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ripeseg/data/image_io.hpp"
#include "ripeseg/tensor/random.hpp"

namespace ripeseg {

namespace {

constexpr std::array<std::array<double, 3>, 4> kPalette{{
    {0.12, 0.30, 0.10},  // foliage
    {0.46, 0.72, 0.22},  // unripened: light green
    {0.95, 0.55, 0.15},  // half: orange
    {0.82, 0.09, 0.08},  // fully: red
}};

std::uint8_t draw_class(const SynthConfig& cfg, Rng& rng) {
  const double total = cfg.class_weights[0] + cfg.class_weights[1] + cfg.class_weights[2];
  double u = rng.uniform() * total;
  for (std::uint8_t c = 0; c < 3; ++c) {
    if (u < cfg.class_weights[c]) return std::uint8_t(c + 1);
    u -= cfg.class_weights[c];
  }
  return 3;
}

}  // namespace

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy, dx = x - cx;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
}

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synth.count must be >= 1");
  if (std::min(height, width) < 16)
    throw ConfigError("synth dims " + std::to_string(height) + "x" + std::to_string(width) +
                      " are too small for ellipse placement (minimum 16)");
  if (min_objects < 1 || max_objects < min_objects) throw ConfigError("synth object count range is empty");
  for (double w : class_weights)
    if (w < 0) throw ConfigError("synth class weights must be non-negative");
  if (class_weights[0] + class_weights[1] + class_weights[2] <= 0)
    throw ConfigError("synth class weights must not all be zero");
}

SynthScene synth_scene(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(Rng::derive(cfg.seed, index));
  const auto h = cfg.height, w = cfg.width;
  const double side = double(std::min(h, w));
  const double r_lo = std::max(3.0, 0.07 * side), r_hi = std::max(r_lo + 1.0, 0.16 * side);

  SynthScene scene;
  const auto wanted = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
  for (std::size_t attempt = 0; scene.ellipses.size() < wanted && attempt < 400; ++attempt) {
    Ellipse e;
    e.ry = rng.uniform(r_lo, r_hi);
    e.rx = std::clamp(e.ry * rng.uniform(0.75, 1.3), r_lo, r_hi);
    e.angle = rng.uniform(0.0, std::numbers::pi);
    const double reach = std::max(e.rx, e.ry);
    e.cy = rng.uniform(reach + 1, double(h) - reach - 1);
    e.cx = rng.uniform(reach + 1, double(w) - reach - 1);
    e.cls = draw_class(cfg, rng);
    const bool clear = std::all_of(scene.ellipses.begin(), scene.ellipses.end(), [&](const Ellipse& o) {
      return std::hypot(o.cy - e.cy, o.cx - e.cx) > reach + std::max(o.rx, o.ry) + 2.0;
    });
    if (clear) scene.ellipses.push_back(e);
  }

  auto& s = scene.sample;
  char stem[32];
  std::snprintf(stem, sizeof stem, "synth_%05zu", index);
  s.stem = stem;
  s.image = NDArray<float>(Shape{h, w, 3});
  s.mask = LabelGrid(h, w, std::uint8_t{0});
  const double fy = rng.uniform(0.15, 0.45), fx = rng.uniform(0.15, 0.45), phase = rng.uniform(0.0, 6.3);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      std::uint8_t cls = 0;
      const Ellipse* hit = nullptr;
      for (const auto& e : scene.ellipses)
        if (e.contains_pixel(r, c)) {
          cls = e.cls;
          hit = &e;
        }
      s.mask.at(r, c) = cls;
      double shade, noise = 0.02 * rng.normal();
      if (hit) {
        const double dy = (double(r) + 0.5 - hit->cy) / hit->ry, dx = (double(c) + 0.5 - hit->cx) / hit->rx;
        shade = 1.0 - 0.3 * std::min(1.0, dy * dy + dx * dx);
      } else {
        shade = 1.0 + 0.25 * std::sin(fy * double(r) + phase) * std::cos(fx * double(c));
        noise *= 2.0;
      }
      for (std::size_t k = 0; k < 3; ++k)
        s.image[(r * w + c) * 3 + k] = from_byte(to_byte(float(kPalette[cls][k] * shade + noise)));
    }
  return scene;
}

std::vector<SynthScene> synth_scenes(const SynthConfig& cfg) {
  std::vector<SynthScene> out;
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(synth_scene(cfg, i));
  return out;
}

DatasetManifest synth_generate(const std::filesystem::path& root, const SynthConfig& cfg) {
  cfg.validate();
  std::vector<LabeledSample> samples;
  for (std::size_t i = 0; i < cfg.count; ++i) samples.push_back(synth_scene(cfg, i).sample);
  save_dataset(root, samples, ClassMap::tomato());
  return DatasetManifest::scan(root);
}

}  // namespace ripeseg
