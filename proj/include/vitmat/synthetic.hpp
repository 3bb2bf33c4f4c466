#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "vitmat/errors.hpp"
#include "vitmat/image.hpp"
#include "vitmat/rng.hpp"

namespace vitmat {

/// Procedural texture classes used for smoke tests and the end-to-end check.
enum class Texture { stripes, checker, noise, gradient };

inline constexpr std::array<Texture, 4> kTextures = {Texture::stripes, Texture::checker, Texture::noise,
                                                     Texture::gradient};

inline std::string texture_name(Texture t) {
  switch (t) {
    case Texture::stripes: return "stripes";
    case Texture::checker: return "checker";
    case Texture::noise: return "noise";
    case Texture::gradient: return "gradient";
  }
  return "?";
}

namespace detail {

using Rgb = std::array<double, 3>;

// A gray level in [lo, hi] with a small random tint per channel.
inline Rgb tinted_gray(Rng& rng, double lo, double hi) {
  const double g = rng.uniform(lo, hi);
  return {g + rng.uniform(-12, 12), g + rng.uniform(-12, 12), g + rng.uniform(-12, 12)};
}

// One dark and one light tone, in random order.
inline std::pair<Rgb, Rgb> contrasting_pair(Rng& rng) {
  const Rgb dark = tinted_gray(rng, 10, 80), light = tinted_gray(rng, 175, 245);
  if (rng.bernoulli(0.5)) return {dark, light};
  return {light, dark};
}

inline void put(Image& img, std::size_t y, std::size_t x, const Rgb& c) {
  for (std::size_t k = 0; k < 3; ++k) img.at(y, x, k) = static_cast<std::uint8_t>(std::lround(std::clamp(c[k], 0.0, 255.0)));
}

}  // namespace detail

/// One size x size texture. Colors, phase and orientation are drawn from rng;
/// colors are a dark and a light tinted gray. Structure scales are fixed so
/// each class looks the same at the 8 px patch scale.
/// stripes: 4 px bands (period 8), horizontal or vertical;
/// checker: 2 px cells; noise: i.i.d. pixels around a mid gray;
/// gradient: linear ramp between the two tones along a random direction.
inline Image make_texture(Texture kind, std::size_t size, Rng& rng) {
  if (size == 0) throw InputError("make_texture: size must be >= 1");
  Image img(size, size);
  switch (kind) {
    case Texture::stripes: {
      const auto [a, b] = detail::contrasting_pair(rng);
      const std::size_t period = 8;
      const auto orient = rng.uniform_int(2);
      const auto phase = static_cast<std::size_t>(rng.uniform_int(period));
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const std::size_t u = orient == 0 ? y : x;
          detail::put(img, y, x, ((u + phase) % period) < period / 2 ? a : b);
        }
      break;
    }
    case Texture::checker: {
      const auto [a, b] = detail::contrasting_pair(rng);
      const std::size_t cell = 2;
      const auto oy = static_cast<std::size_t>(rng.uniform_int(cell));
      const auto ox = static_cast<std::size_t>(rng.uniform_int(cell));
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          detail::put(img, y, x, (((y + oy) / cell + (x + ox) / cell) % 2) ? a : b);
      break;
    }
    case Texture::noise: {
      const auto base = detail::tinted_gray(rng, 100, 155);
      const double spread = rng.uniform(70, 110);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          detail::Rgb c;
          for (std::size_t k = 0; k < 3; ++k) c[k] = base[k] + rng.uniform(-spread, spread);
          detail::put(img, y, x, c);
        }
      break;
    }
    case Texture::gradient: {
      const auto [a, b] = detail::contrasting_pair(rng);
      const double angle = rng.uniform(0, 2 * std::numbers::pi);
      const double cx = std::cos(angle), cy = std::sin(angle);
      const double half = (size - 1) / 2.0;
      const double reach = half * (std::abs(cx) + std::abs(cy)) + 1e-9;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double t = 0.5 + 0.5 * ((x - half) * cx + (y - half) * cy) / reach;
          detail::Rgb c;
          for (std::size_t k = 0; k < 3; ++k) c[k] = a[k] + (b[k] - a[k]) * t;
          detail::put(img, y, x, c);
        }
      break;
    }
  }
  return img;
}

struct SyntheticSample {
  Image image;
  Texture kind;
  std::size_t index;  // position within its class
};

/// counts[i] images of kTextures[i]; image j of class i uses substream (i << 32) | j.
inline std::vector<SyntheticSample> make_texture_set(const std::vector<std::size_t>& counts, std::size_t size,
                                                     std::uint64_t seed) {
  if (counts.size() > kTextures.size()) throw InputError("make_texture_set: at most 4 texture classes");
  const Rng root(seed);
  std::vector<SyntheticSample> out;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t j = 0; j < counts[c]; ++j) {
      Rng rng = root.substream((std::uint64_t(c) << 32) | j);
      out.push_back({make_texture(kTextures[c], size, rng), kTextures[c], j});
    }
  return out;
}

/// Writes root/<texture>/<texture>_NNNN.ppm for every sample.
inline void write_texture_set(const std::filesystem::path& root, const std::vector<std::size_t>& counts,
                              std::size_t size, std::uint64_t seed) {
  for (const auto& s : make_texture_set(counts, size, seed)) {
    const auto dir = root / texture_name(s.kind);
    std::filesystem::create_directories(dir);
    char file[64];
    std::snprintf(file, sizeof file, "%s_%04zu.ppm", texture_name(s.kind).c_str(), s.index);
    write_ppm(s.image, dir / file);
  }
}

}  // namespace vitmat
