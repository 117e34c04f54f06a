#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

namespace isep {

/// SplitMix64: 64-bit counter-based generator.
///
/// All randomness in the project flows through this engine so that datasets,
/// training runs and evaluations replay byte-for-byte under a fixed seed,
/// independent of any standard-library distribution implementation.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Standard normal via Box-Muller; consumes exactly two raw draws per call.
  double normal() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return next_double() < p; }

  /// Uniform index in [0, n). Lemire multiply-shift reduction.
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Uniform point in the disk of given center/radius (polar map, no rejection).
  void in_disk(double cx, double cy, double radius, double& x, double& y) {
    const double r = radius * std::sqrt(next_double());
    const double theta = 6.283185307179586476925286766559 * next_double();
    x = cx + r * std::cos(theta);
    y = cy + r * std::sin(theta);
  }

  /// Decorrelated sub-stream for (seed, stream). Used to give the dataset,
  /// initialization, training loop and evaluation their own streams.
  static SplitMix64 derive(std::uint64_t seed, std::uint64_t stream) {
    return SplitMix64(mix(seed + 0xA0761D6478BD642FULL * (stream + 1)));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

// Stream ids used by the trainer; kept here so tools and tests agree.
namespace stream {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kTrain = 3;
inline constexpr std::uint64_t kEval = 4;
}  // namespace stream

}  // namespace isep
