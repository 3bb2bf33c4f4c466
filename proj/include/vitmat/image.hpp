#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "vitmat/errors.hpp"

namespace vitmat {

/// 8-bit RGB image, row-major, channels interleaved.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  Image() = default;
  Image(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w * 3, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool empty() const { return height == 0 || width == 0; }

  bool operator==(const Image&) const = default;
};

namespace detail {

class NetpbmReader {
 public:
  NetpbmReader(std::vector<std::uint8_t> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::string magic() {
    if (bytes_.size() < 2) fail("file too short");
    pos_ = 2;
    return std::string(bytes_.begin(), bytes_.begin() + 2);
  }

  std::size_t header_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("malformed header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1u << 24)) fail("header value too large");
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("malformed header");
    ++pos_;
  }

  const std::uint8_t* raster(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated raster");
    return bytes_.data() + pos_;
  }

  std::size_t position() const { return pos_; }

  [[noreturn]] void fail(const std::string& why) const { throw IoError(path_ + ": " + why); }

 private:
  void skip_space_and_comments() {
    for (;;) {
      while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
      if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        return;
      }
    }
  }

  std::vector<std::uint8_t> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Reads binary PPM (P6) or PGM (P5, promoted to 3 equal channels), maxval 255.
inline Image read_netpbm(const std::filesystem::path& path) {
  detail::NetpbmReader r(detail::read_file_bytes(path), path.string());
  const std::string magic = r.magic();
  if (magic != "P6" && magic != "P5") r.fail("unsupported format '" + magic + "' (expected P6 or P5)");
  const std::size_t w = r.header_int();
  const std::size_t h = r.header_int();
  const std::size_t maxval = r.header_int();
  if (w == 0 || h == 0) r.fail("zero-sized image");
  if (maxval != 255) r.fail("only maxval 255 is supported, got " + std::to_string(maxval));
  r.end_header();
  Image img(h, w);
  if (magic == "P6") {
    const auto* src = r.raster(h * w * 3);
    std::copy(src, src + h * w * 3, img.pixels.begin());
  } else {
    const auto* src = r.raster(h * w);
    for (std::size_t i = 0; i < h * w; ++i) img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = src[i];
  }
  return img;
}

struct NetpbmHeader {
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Parses and validates the header without decoding the raster; also checks
/// that the file is long enough to hold the raster.
inline NetpbmHeader probe_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> head(4096);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const std::size_t file_size = std::filesystem::file_size(path);
  detail::NetpbmReader r(std::move(head), path.string());
  NetpbmHeader h;
  h.magic = r.magic();
  if (h.magic != "P6" && h.magic != "P5") r.fail("unsupported format '" + h.magic + "' (expected P6 or P5)");
  h.width = r.header_int();
  h.height = r.header_int();
  const std::size_t maxval = r.header_int();
  if (h.width == 0 || h.height == 0) r.fail("zero-sized image");
  if (maxval != 255) r.fail("only maxval 255 is supported, got " + std::to_string(maxval));
  r.end_header();
  const std::size_t channels = h.magic == "P6" ? 3 : 1;
  if (file_size - r.position() < h.width * h.height * channels) r.fail("truncated raster");
  return h;
}

/// Writes "P6\n<w> <h>\n255\n" followed by the raw raster.
inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Single-channel P5 writer (used for confusion heatmaps).
inline void write_pgm(const std::vector<std::uint8_t>& gray, std::size_t height, std::size_t width,
                      const std::filesystem::path& path) {
  if (gray.size() != height * width) throw InputError("write_pgm: raster size does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// True for extensions the reader handles (.ppm, .pgm, .pnm; case-insensitive).
inline bool is_netpbm_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

}  // namespace vitmat
