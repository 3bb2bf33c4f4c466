#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace vitmat {

/// SplitMix64 (Steele, Lea & Flood 2014) as a counter-based generator.
///
/// Output i (0-based) is mix64(seed + (i + 1) * 0x9E3779B97F4A7C15), so the
/// stream is fully determined by (seed, counter) and identical on every
/// platform. Reference vectors:
///   seed 0       -> 16294208416658607535, 7960286522194355700, 487617019471545679
///   seed 1234567 -> 6457827717110365317, 3203168211198807973, 9817491932198370423
///
/// uniform() takes the top 53 bits: (x >> 11) * 2^-53, so it lies in [0, 1).
/// normal() is Box-Muller on two consecutive uniforms, cosine branch only:
///   z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
///
/// Substreams: substream(id) returns a generator seeded with
///   mix64(seed ^ mix64(id + 0x9E3779B97F4A7C15))
/// and does not advance the parent. Per-image augmentation and per-class
/// shuffles each take their own substream so results do not depend on
/// iteration order.
class Rng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() noexcept {
    state_ += kGolden;
    ++counter_;
    return mix64(state_);
  }

  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection. n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Normal(mean, stddev) resampled until within mean +- 2 stddev.
  double truncated_normal(double mean, double stddev) noexcept {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= 2.0) return mean + stddev * z;
    }
  }

  Rng substream(std::uint64_t id) const noexcept { return Rng(mix64(seed_ ^ mix64(id + kGolden))); }

  template <typename It>
  void shuffle(It first, It last) noexcept {
    const auto n = static_cast<std::uint64_t>(last - first);
    if (n < 2) return;
    for (std::uint64_t i = n - 1; i > 0; --i) {
      const std::uint64_t j = uniform_int(i + 1);
      using std::swap;
      swap(first[i], first[j]);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  std::uint64_t counter_ = 0;
};

}  // namespace vitmat
