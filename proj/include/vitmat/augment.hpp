#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitmat/errors.hpp"
#include "vitmat/image.hpp"
#include "vitmat/rng.hpp"
#include "vitmat/tensor.hpp"

namespace vitmat {

namespace detail {

inline std::uint8_t to_u8(double v) {
  // std::lround rounds halves away from zero
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
}

inline void require_nonempty(const Image& img, const char* op) {
  if (img.empty()) throw InputError(std::string(op) + ": empty image");
  if (img.pixels.size() != img.height * img.width * 3)
    throw InputError(std::string(op) + ": pixel buffer does not match " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + "x3");
}

// Rounds halves toward zero; used by the RandAugment magnitude table.
inline long round_half_down(double x) { return static_cast<long>(std::ceil(x - 0.5)); }

}  // namespace detail

/// Bilinear resize with half-pixel centers: output index d samples source
/// coordinate (d + 0.5) * in / out - 0.5, clamped to [0, in - 1].
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  detail::require_nonempty(img, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw InputError("resize_bilinear: output dimensions must be >= 1");
  if (out_h == img.height && out_w == img.width) return img;

  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
      const double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(img.height, out_h);
  const auto tx = taps(img.width, out_w);

  Image out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto [y0, y1, fy] = ty[y];
        const auto [x0, x1, fx] = tx[x];
        const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
        const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = detail::to_u8(top * (1.0 - fy) + bot * fy);
      }
  return out;
}

inline Image flip_lr(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

inline Image flip_ud(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    std::copy_n(img.pixels.begin() + y * img.width * 3, img.width * 3,
                out.pixels.begin() + (img.height - 1 - y) * img.width * 3);
  return out;
}

/// Shifts content right by dx and down by dy; vacated pixels are 0.
inline Image translate(const Image& img, long dx, long dy) {
  detail::require_nonempty(img, "translate");
  const long limit = static_cast<long>(std::min(img.height, img.width));
  if (std::labs(dx) >= limit || std::labs(dy) >= limit)
    throw InputError("translate: shift (" + std::to_string(dx) + ", " + std::to_string(dy) + ") must be below " +
                     std::to_string(limit) + " px");
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  Image out(img.height, img.width);
  for (long y = 0; y < h; ++y) {
    const long sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (long x = 0; x < w; ++x) {
      const long sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

/// Crop of the zero-padded image at window offset (oy, ox) in padded coordinates.
inline Image crop_padded(const Image& img, std::size_t pad, std::size_t out_h, std::size_t out_w, std::size_t oy,
                         std::size_t ox) {
  detail::require_nonempty(img, "random_crop");
  const std::size_t ph = img.height + 2 * pad, pw = img.width + 2 * pad;
  if (out_h == 0 || out_w == 0 || out_h > ph || out_w > pw)
    throw InputError("random_crop: window " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " does not fit padded image " + std::to_string(ph) + "x" + std::to_string(pw));
  if (oy + out_h > ph || ox + out_w > pw) throw InputError("random_crop: offset out of range");
  Image out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t py = oy + y;
    if (py < pad || py >= pad + img.height) continue;
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t px = ox + x;
      if (px < pad || px >= pad + img.width) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(py - pad, px - pad, c);
    }
  }
  return out;
}

/// Zero-pads by `pad` on every side, then takes a uniformly chosen out_h x out_w
/// window. Draws the row offset first, then the column offset.
inline Image random_crop(const Image& img, std::size_t pad, std::size_t out_h, std::size_t out_w, Rng& rng) {
  detail::require_nonempty(img, "random_crop");
  const std::size_t ph = img.height + 2 * pad, pw = img.width + 2 * pad;
  if (out_h == 0 || out_w == 0 || out_h > ph || out_w > pw)
    throw InputError("random_crop: window " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " does not fit padded image " + std::to_string(ph) + "x" + std::to_string(pw));
  const auto oy = static_cast<std::size_t>(rng.uniform_int(ph - out_h + 1));
  const auto ox = static_cast<std::size_t>(rng.uniform_int(pw - out_w + 1));
  return crop_padded(img, pad, out_h, out_w, oy, ox);
}

/// Per-channel histogram equalization. With N pixels and cdf the cumulative
/// histogram, lut[v] = round((cdf[v] - cdf_min) / (N - cdf_min) * 255), where
/// cdf_min is the count of the darkest level present. A channel holding a
/// single level is left unchanged.
inline Image equalize(const Image& img) {
  detail::require_nonempty(img, "equalize");
  Image out = img;
  const std::size_t n = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < n; ++i) ++hist[img.pixels[3 * i + c]];
    std::array<std::size_t, 256> cdf{};
    std::size_t run = 0, cdf_min = 0;
    for (std::size_t v = 0; v < 256; ++v) {
      run += hist[v];
      cdf[v] = run;
      if (cdf_min == 0 && hist[v] > 0) cdf_min = hist[v];
    }
    if (cdf_min == n) continue;
    std::array<std::uint8_t, 256> lut{};
    for (std::size_t v = 0; v < 256; ++v)
      lut[v] = cdf[v] < cdf_min ? 0 : detail::to_u8(double(cdf[v] - cdf_min) * 255.0 / double(n - cdf_min));
    for (std::size_t i = 0; i < n; ++i) out.pixels[3 * i + c] = lut[img.pixels[3 * i + c]];
  }
  return out;
}

/// Per-channel affine stretch of [min, max] onto [0, 255]; flat channels unchanged.
inline Image autocontrast(const Image& img) {
  detail::require_nonempty(img, "autocontrast");
  Image out = img;
  const std::size_t n = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c) {
    std::uint8_t lo = 255, hi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, img.pixels[3 * i + c]);
      hi = std::max(hi, img.pixels[3 * i + c]);
    }
    if (hi == lo) continue;
    const double span = hi - lo;
    for (std::size_t i = 0; i < n; ++i) out.pixels[3 * i + c] = detail::to_u8((img.pixels[3 * i + c] - lo) * 255.0 / span);
  }
  return out;
}

/// Keeps the top `bits` bits of every value.
inline Image posterize(const Image& img, int bits) {
  if (bits < 1 || bits > 8) throw InputError("posterize: bits must be in [1, 8], got " + std::to_string(bits));
  const auto mask = static_cast<std::uint8_t>(0xFFu << (8 - bits));
  Image out = img;
  for (auto& v : out.pixels) v &= mask;
  return out;
}

/// v -> 255 - v wherever v >= threshold. Thresholds above 255 clamp to 255.
inline Image solarize(const Image& img, int threshold) {
  if (threshold < 0)
    throw InputError("solarize: threshold must be >= 0, got " + std::to_string(threshold));
  threshold = std::min(threshold, 255);
  Image out = img;
  for (auto& v : out.pixels)
    if (v >= threshold) v = static_cast<std::uint8_t>(255 - v);
  return out;
}

/// round(clamp(v * factor)).
inline Image brightness(const Image& img, double factor) {
  if (!(factor >= 0.0)) throw InputError("brightness: factor must be >= 0");
  if (factor == 1.0) return img;
  Image out = img;
  for (auto& v : out.pixels) v = detail::to_u8(v * factor);
  return out;
}

/// Blend between a smoothed copy and the original: out = orig * f + smooth * (1 - f).
/// The smoothing kernel is [[1,1,1],[1,5,1],[1,1,1]] / 13, rounded to 8 bits;
/// border pixels of the smoothed copy equal the original.
inline Image sharpness(const Image& img, double factor) {
  if (!(factor >= 0.0)) throw InputError("sharpness: factor must be >= 0");
  if (factor == 1.0) return img;
  detail::require_nonempty(img, "sharpness");
  Image smooth = img;
  for (std::size_t y = 1; y + 1 < img.height; ++y)
    for (std::size_t x = 1; x + 1 < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        int acc = 4 * img.at(y, x, c);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += img.at(y + dy, x + dx, c);
        smooth.at(y, x, c) = detail::to_u8(acc / 13.0);
      }
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = detail::to_u8(img.pixels[i] * factor + smooth.pixels[i] * (1.0 - factor));
  return out;
}

// ---- RandAugment ----------------------------------------------------------

enum class RandOp { equalize, autocontrast, posterize, solarize, brightness, sharpness };

inline constexpr std::array<RandOp, 6> kRandOps = {RandOp::equalize,  RandOp::autocontrast, RandOp::posterize,
                                                   RandOp::solarize,  RandOp::brightness,   RandOp::sharpness};

inline std::string to_string(RandOp op) {
  switch (op) {
    case RandOp::equalize: return "equalize";
    case RandOp::autocontrast: return "autocontrast";
    case RandOp::posterize: return "posterize";
    case RandOp::solarize: return "solarize";
    case RandOp::brightness: return "brightness";
    case RandOp::sharpness: return "sharpness";
  }
  return "?";
}

/// One sampled application; `sign` matters only for brightness and sharpness.
struct RandStep {
  RandOp op;
  int sign = 1;
};

inline void check_magnitude(int m) {
  if (m < 0 || m > 30) throw InputError("randaugment: magnitude must be in [0, 30], got " + std::to_string(m));
}

/// Magnitude table on the 0-30 scale. Halves round toward zero, which gives
/// 7 bits and threshold 196 at m = 7.
inline int posterize_bits_for(int m) { return 8 - static_cast<int>(detail::round_half_down(4.0 * m / 30.0)); }
inline int solarize_threshold_for(int m) {
  return 255 - static_cast<int>(detail::round_half_down(255.0 * m / 30.0));
}
inline double enhance_factor_for(int m, int sign) { return 1.0 + 0.9 * (m / 30.0) * sign; }

inline Image apply_rand_step(const Image& img, RandStep step, int m) {
  switch (step.op) {
    case RandOp::equalize: return equalize(img);
    case RandOp::autocontrast: return autocontrast(img);
    case RandOp::posterize: return posterize(img, posterize_bits_for(m));
    case RandOp::solarize: return solarize(img, solarize_threshold_for(m));
    case RandOp::brightness: return brightness(img, enhance_factor_for(m, step.sign));
    case RandOp::sharpness: return sharpness(img, enhance_factor_for(m, step.sign));
  }
  return img;
}

/// Draws n ops uniformly with replacement; brightness/sharpness also draw a sign.
inline std::vector<RandStep> sample_rand_steps(int n, Rng& rng) {
  if (n < 0) throw InputError("randaugment: n must be >= 0");
  std::vector<RandStep> steps;
  for (int i = 0; i < n; ++i) {
    RandStep s{kRandOps[rng.uniform_int(kRandOps.size())]};
    if (s.op == RandOp::brightness || s.op == RandOp::sharpness) s.sign = rng.bernoulli(0.5) ? 1 : -1;
    steps.push_back(s);
  }
  return steps;
}

inline Image apply_rand_steps(Image img, const std::vector<RandStep>& steps, int m) {
  check_magnitude(m);
  for (const auto& s : steps) img = apply_rand_step(img, s, m);
  return img;
}

inline Image randaugment(const Image& img, int n, int m, Rng& rng) {
  check_magnitude(m);
  return apply_rand_steps(img, sample_rand_steps(n, rng), m);
}

// ---- Policy and pipeline -------------------------------------------------

struct AugPolicy {
  std::size_t image_size = 224;
  bool fliplr = true;
  bool flipud = true;
  bool translate = true;
  bool random_crop = true;
  bool randaugment = true;
  double fliplr_prob = 0.5;
  double flipud_prob = 0.5;
  long translate_max = 16;
  std::size_t crop_pad = 16;
  int randaug_n = 2;
  int randaug_m = 7;
  std::array<double, 3> mean = {0.5, 0.5, 0.5};
  std::array<double, 3> std = {0.5, 0.5, 0.5};

  void validate() const {
    if (image_size == 0) throw ConfigError("augment: image_size must be >= 1");
    if (!(fliplr_prob >= 0 && fliplr_prob <= 1) || !(flipud_prob >= 0 && flipud_prob <= 1))
      throw ConfigError("augment: flip probabilities must be in [0, 1]");
    if (translate_max < 0 || translate_max >= static_cast<long>(image_size))
      throw ConfigError("augment: translate_max must be in [0, image_size)");
    if (randaug_n < 0) throw ConfigError("augment: randaug_n must be >= 0");
    if (randaug_m < 0 || randaug_m > 30) throw ConfigError("augment: randaug_m must be in [0, 30]");
    for (double s : std)
      if (!(s > 0)) throw ConfigError("augment: normalization std must be positive");
  }

  /// Resize and normalize only.
  static AugPolicy none(std::size_t size = 224) {
    AugPolicy p;
    p.image_size = size;
    p.fliplr = p.flipud = p.translate = p.random_crop = p.randaugment = false;
    return p;
  }

  bool operator==(const AugPolicy&) const = default;
};

inline void to_json(nlohmann::json& j, const AugPolicy& p) {
  j = nlohmann::json{{"image_size", p.image_size},   {"fliplr", p.fliplr},
                     {"flipud", p.flipud},           {"translate", p.translate},
                     {"random_crop", p.random_crop}, {"randaugment", p.randaugment},
                     {"fliplr_prob", p.fliplr_prob}, {"flipud_prob", p.flipud_prob},
                     {"translate_max", p.translate_max}, {"crop_pad", p.crop_pad},
                     {"randaug_n", p.randaug_n},     {"randaug_m", p.randaug_m},
                     {"mean", p.mean},               {"std", p.std}};
}

inline void from_json(const nlohmann::json& j, AugPolicy& p) {
  const AugPolicy d;
  p.image_size = j.value("image_size", d.image_size);
  p.fliplr = j.value("fliplr", d.fliplr);
  p.flipud = j.value("flipud", d.flipud);
  p.translate = j.value("translate", d.translate);
  p.random_crop = j.value("random_crop", d.random_crop);
  p.randaugment = j.value("randaugment", d.randaugment);
  p.fliplr_prob = j.value("fliplr_prob", d.fliplr_prob);
  p.flipud_prob = j.value("flipud_prob", d.flipud_prob);
  p.translate_max = j.value("translate_max", d.translate_max);
  p.crop_pad = j.value("crop_pad", d.crop_pad);
  p.randaug_n = j.value("randaug_n", d.randaug_n);
  p.randaug_m = j.value("randaug_m", d.randaug_m);
  p.mean = j.value("mean", d.mean);
  p.std = j.value("std", d.std);
}

/// resize -> flips -> translate -> random_crop -> randaugment. Every stage
/// draws from `rng` in that order, whether or not its outcome changes pixels.
inline Image augment_train(const Image& img, const AugPolicy& policy, Rng& rng) {
  const std::size_t s = policy.image_size;
  Image out = resize_bilinear(img, s, s);
  if (policy.fliplr && rng.bernoulli(policy.fliplr_prob)) out = flip_lr(out);
  if (policy.flipud && rng.bernoulli(policy.flipud_prob)) out = flip_ud(out);
  if (policy.translate && policy.translate_max > 0) {
    const long dx = rng.uniform_int(-policy.translate_max, policy.translate_max);
    const long dy = rng.uniform_int(-policy.translate_max, policy.translate_max);
    out = translate(out, dx, dy);
  }
  if (policy.random_crop) out = random_crop(out, policy.crop_pad, s, s, rng);
  if (policy.randaugment) out = randaugment(out, policy.randaug_n, policy.randaug_m, rng);
  return out;
}

/// v -> (v / 255 - mean_c) / std_c, returned as an H x W x 3 tensor.
template <typename T = float>
Tensor<T> normalize(const Image& img, const std::array<double, 3>& mean = {0.5, 0.5, 0.5},
                    const std::array<double, 3>& std = {0.5, 0.5, 0.5}) {
  detail::require_nonempty(img, "normalize");
  Tensor<T> out({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::size_t c = i % 3;
    out[i] = static_cast<T>((img.pixels[i] / 255.0 - mean[c]) / std[c]);
  }
  return out;
}

template <typename T>
Tensor<T> normalize(const Image& img, const AugPolicy& policy) {
  return normalize<T>(img, policy.mean, policy.std);
}

/// Inverse of normalize, rounded and clamped to 8 bits.
template <typename T>
Image denormalize(const Tensor<T>& t, const std::array<double, 3>& mean = {0.5, 0.5, 0.5},
                  const std::array<double, 3>& std = {0.5, 0.5, 0.5}) {
  if (t.rank() != 3 || t.dim(2) != 3) throw DimensionError("denormalize: expected HxWx3, got " + shape_str(t.shape()));
  Image img(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::size_t c = i % 3;
    img.pixels[i] = detail::to_u8((static_cast<double>(t[i]) * std[c] + mean[c]) * 255.0);
  }
  return img;
}

/// Element 0 is the resized original; element i >= 1 is augment_train drawn
/// from rng.substream(i), so the list depends only on the rng seed.
inline std::vector<Image> tta_variants(const Image& img, const AugPolicy& policy, const Rng& rng, std::size_t count) {
  if (count == 0) throw InputError("tta_variants: count must be >= 1");
  std::vector<Image> out;
  out.reserve(count);
  out.push_back(resize_bilinear(img, policy.image_size, policy.image_size));
  for (std::size_t i = 1; i < count; ++i) {
    Rng sub = rng.substream(i);
    out.push_back(augment_train(img, policy, sub));
  }
  return out;
}

}  // namespace vitmat
