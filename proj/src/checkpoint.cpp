#include "ripeseg/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace ripeseg {

namespace {

constexpr char kMagic[4] = {'K', 'U', 'T', 'S'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n)
      throw CheckpointError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what);
  }
  template <class U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), b.data(), static_cast<uInt>(b.size())));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointEntry> entries) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw CheckpointError("parameter name too long: " + e.name.substr(0, 32));
    if (e.shape.rank() > 0xff) throw CheckpointError("parameter rank too large: " + e.name);
    if (e.data.size() != e.shape.numel()) throw CheckpointError("parameter " + e.name + " data does not match shape");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(e.shape.rank()));
    for (auto d : e.shape.dims()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : e.data) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  w.le<std::uint32_t>(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic at offset 0");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " at offset 4 (supported: " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto count = r.le<std::uint32_t>("parameter count");
  std::vector<CheckpointEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.le<std::uint16_t>("name length");
    const auto name = r.take(len, "name");
    e.name.assign(name.begin(), name.end());
    const auto rank = r.le<std::uint8_t>("rank");
    std::vector<std::size_t> dims;
    for (std::uint8_t k = 0; k < rank; ++k) dims.push_back(r.le<std::uint32_t>("dims"));
    try {
      e.shape = Shape(std::move(dims));
    } catch (const ShapeError&) {
      throw CheckpointError("invalid shape for " + e.name + " before offset " + std::to_string(r.offset()));
    }
    const auto n = e.shape.numel();
    if (n > bytes.size()) r.need(bytes.size() + 1, "parameter data");
    r.need(n * 4, "parameter data");
    e.data.resize(n);
    for (auto& v : e.data) v = std::bit_cast<float>(r.le<std::uint32_t>("parameter data"));
    out.push_back(std::move(e));
  }
  const auto body_end = r.offset();
  const auto stored = r.le<std::uint32_t>("crc32");
  if (r.offset() != bytes.size())
    throw CheckpointError("trailing bytes after crc at offset " + std::to_string(r.offset()));
  if (stored != crc32_of(bytes.first(body_end)))
    throw CheckpointError("checkpoint crc mismatch at offset " + std::to_string(body_end));
  return out;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  const auto bytes = encode_checkpoint(entries);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ripeseg
