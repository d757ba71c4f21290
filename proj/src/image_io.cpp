#include "ripeseg/data/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <png.h>

namespace ripeseg {

namespace {

struct PngReader {
  png_image img;

  explicit PngReader(const std::filesystem::path& path) {
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
      throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  ~PngReader() { png_image_free(&img); }

  std::vector<std::uint8_t> finish(png_uint_32 format, const std::filesystem::path& path) {
    img.format = format;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
      throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    return buf;
  }
};

void write_png(const std::filesystem::path& path, std::size_t h, std::size_t w, png_uint_32 format,
               const std::vector<std::uint8_t>& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

}  // namespace

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

NDArray<float> read_image(const std::filesystem::path& path) {
  PngReader r(path);
  const std::size_t h = r.img.height, w = r.img.width;
  const auto buf = r.finish(PNG_FORMAT_RGB, path);
  NDArray<float> out(Shape{h, w, 3});
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = from_byte(buf[i]);
  return out;
}

LabelGrid read_mask(const std::filesystem::path& path) {
  PngReader r(path);
  if (r.img.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP))
    throw ManifestError("mask " + path.string() + " is not a single-channel 8-bit index image");
  const std::size_t h = r.img.height, w = r.img.width;
  // Alpha, if present, is dropped; index values pass through untouched.
  auto buf = r.finish(PNG_FORMAT_GRAY, path);
  return LabelGrid(h, w, std::move(buf));
}

void write_image(const std::filesystem::path& path, const NDArray<float>& image) {
  const auto& s = image.shape();
  if (s.rank() != 3 || (s[2] != 3 && s[2] != 1)) throw ShapeError("write_image expects HxWx3 or HxWx1, got " + s.str());
  std::vector<std::uint8_t> buf(image.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(image[i]);
  write_png(path, s[0], s[1], s[2] == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, buf);
}

void write_mask(const std::filesystem::path& path, const LabelGrid& mask) {
  write_png(path, mask.height, mask.width, PNG_FORMAT_GRAY, mask.values);
}

void write_rgba(const std::filesystem::path& path, std::size_t height, std::size_t width,
                const std::vector<std::uint8_t>& rgba) {
  if (rgba.size() != height * width * 4) throw ShapeError("write_rgba: buffer does not match dims");
  write_png(path, height, width, PNG_FORMAT_RGBA, rgba);
}

}  // namespace ripeseg
