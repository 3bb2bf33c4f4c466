#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitmat/errors.hpp"
#include "vitmat/image.hpp"
#include "vitmat/vit.hpp"

namespace vitmat {

// Layout, all integers little-endian:
//   "VITC" | u16 version | u32 json length | json (config + class names)
//   per array, sorted by name: u16 name length | name | u8 rank | u32 dims... | f32 payload
//   u32 CRC32 over the per-array section
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ViTConfig config;
  std::vector<std::string> class_names;  // may be empty
  ViTParams<float> params;
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteCursor {
 public:
  ByteCursor(const std::vector<std::uint8_t>& b, std::string path) : b_(b), path_(std::move(path)) {}

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw TruncationError(path_ + ": file ends inside " + what);
    const auto* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint16_t u16(const char* what) {
    const auto* p = take(2, what);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    const auto* p = take(4, what);
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline float f32_from_le(const std::uint8_t* p) {
  const std::uint32_t bits =
      std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

/// Writes params (converted to 32-bit floats) with their config.
template <typename T>
void save_checkpoint(const ViTParams<T>& params, const ViTConfig& cfg, const std::filesystem::path& path,
                     const std::vector<std::string>& class_names = {}) {
  validate_params(params, cfg);
  if (!class_names.empty() && class_names.size() != cfg.num_classes)
    throw ClassCountMismatchError(cfg.num_classes, class_names.size(), "class names saved with checkpoint");
  nlohmann::json meta = {{"config", cfg}, {"class_names", class_names}};
  const std::string js = meta.dump();

  std::vector<std::uint8_t> out = {'V', 'I', 'T', 'C'};
  detail::put_u16(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(js.size()));
  out.insert(out.end(), js.begin(), js.end());
  const std::size_t section = out.size();
  for (const auto& [name, t] : params.arrays) {
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (const auto& v : t.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32(out, bits);
    }
  }
  detail::put_u32(out, detail::crc32_of(out.data() + section, out.size() - section));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for checkpoint '" + path.string() + "'");
}

/// Reads and fully validates a checkpoint; nothing is returned unless the
/// structure, checksum and every shape check out.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::string p = path.string();
  detail::ByteCursor cur(bytes, p);

  if (bytes.size() < 4) throw TruncationError(p + ": file ends inside magic");
  if (std::memcmp(bytes.data(), "VITC", 4) != 0) throw CorruptHeaderError(p + ": bad magic (not a checkpoint)");
  cur.take(4, "magic");
  const auto version = cur.u16("version");
  if (version != kCheckpointVersion)
    throw CorruptHeaderError(p + ": unsupported checkpoint version " + std::to_string(version));
  const auto js_len = cur.u32("config length");
  const auto* js = cur.take(js_len, "config block");

  Checkpoint ck;
  try {
    const auto meta = nlohmann::json::parse(js, js + js_len);
    ck.config = meta.at("config").get<ViTConfig>();
    ck.class_names = meta.value("class_names", std::vector<std::string>{});
    ck.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeaderError(p + ": unreadable config block: " + e.what());
  } catch (const ConfigError& e) {
    throw CorruptHeaderError(p + ": invalid config block: " + e.what());
  }

  // Walk the records once for structure so truncation is reported as such
  // before the checksum is consulted.
  const auto expected = expected_shapes(ck.config);
  struct Record {
    std::string name;
    Shape shape;
    const std::uint8_t* payload;
  };
  std::vector<Record> records;
  const std::size_t section = cur.pos();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    Record r;
    const auto name_len = cur.u16("array name length");
    const auto* name = cur.take(name_len, "array name");
    r.name.assign(name, name + name_len);
    const auto* rank = cur.take(1, "array rank");
    for (std::uint8_t d = 0; d < *rank; ++d) r.shape.push_back(cur.u32("array dims"));
    if (r.shape.empty()) throw CorruptHeaderError(p + ": array '" + r.name + "' has rank 0");
    const std::size_t n = shape_numel(r.shape);
    if (n > cur.remaining() / 4) throw TruncationError(p + ": file ends inside array '" + r.name + "'");
    r.payload = cur.take(n * 4, "array payload");
    records.push_back(std::move(r));
  }
  const std::size_t section_end = cur.pos();
  const auto stored_crc = cur.u32("checksum");
  if (cur.remaining() != 0) throw CorruptHeaderError(p + ": unexpected trailing bytes after checksum");
  if (detail::crc32_of(bytes.data() + section, section_end - section) != stored_crc)
    throw ChecksumError(p + ": checksum mismatch in array section");

  for (auto& r : records) {
    const auto it = expected.find(r.name);
    if (it == expected.end())
      throw ShapeMismatchError(p + ": array '" + r.name + "' is not part of the stored config");
    if (it->second != r.shape)
      throw ShapeMismatchError(p + ": array '" + r.name + "' has shape " + shape_str(r.shape) + ", config implies " +
                               shape_str(it->second));
    Tensor<float> t(r.shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = detail::f32_from_le(r.payload + 4 * i);
    if (!ck.params.arrays.emplace(r.name, std::move(t)).second)
      throw ShapeMismatchError(p + ": array '" + r.name + "' appears twice");
  }
  if (!ck.class_names.empty() && ck.class_names.size() != ck.config.num_classes)
    throw CorruptHeaderError(p + ": class name list does not match num_classes");
  return ck;
}

/// As load_checkpoint, and additionally requires a head with `expected_classes` outputs.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, std::size_t expected_classes) {
  auto ck = load_checkpoint(path);
  if (ck.config.num_classes != expected_classes)
    throw ClassCountMismatchError(expected_classes, ck.config.num_classes, "checkpoint '" + path.string() + "'");
  return ck;
}

}  // namespace vitmat
