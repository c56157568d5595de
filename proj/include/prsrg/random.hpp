#pragma once

// Counter-based splittable random source.
//
// A stream is identified by a 64-bit key. The i-th output of a stream is
// mix64(key + i * golden), so a stream's values depend only on its key and
// position and never on scheduling. `split(tag, index)` derives a child key
// from the parent key, which is how the solver hands out independent streams:
//
//   master(seed)
//     .split(Stream::Outer, t)          one stream per outer iteration
//       .split(Stream::Anchor, s)       large-batch draw for epoch s
//       .split(Stream::MiniBatch, t)    mini-batch draw at inner step t
//       .split(Stream::Break, t)        uniform-break draw at inner step t
//
// Two runs that are handed the same key therefore consume identical batch and
// break draws at each step index, which is what the coupled-sequence
// experiments need.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace prsrg {

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class Stream : std::uint64_t {
  Outer = 1,
  Anchor,
  MiniBatch,
  Break,
  Check,
  Perturb,
  Epoch,
  Trial,
  Estimate,
  Lanczos,
  Cell,
  Sample,
};

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept
      : key_(mix64(seed ^ 0x5f3759df9e3779b9ULL)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    return mix64(key_ + (++counter_) * kGolden);
  }

  Rng split(std::uint64_t stream) const noexcept {
    Rng child;
    child.key_ = mix64(mix64(key_ ^ 0xa0761d6478bd642fULL) + stream * kGolden);
    return child;
  }

  Rng split(Stream tag, std::uint64_t index) const noexcept {
    return split(static_cast<std::uint64_t>(tag)).split(index);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; one output per two uniforms so that the
  /// stream position stays a function of the number of draws.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n), unbiased (Lemire's multiply-shift with
  /// rejection). Requires n > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace prsrg
