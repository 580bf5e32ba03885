#pragma once

#include <cstdint>
#include <span>

namespace rcsl_lab {

// SplitMix64 mixing function.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Counter-based generator: the whole stream is a function of the seed, so
// construction is a single assignment and streams never overlap by accident.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Index drawn from `probs` (assumed to sum to ~1); the last positive entry
  // absorbs any floating-point slack.
  int categorical(std::span<const double> probs) {
    const double u = next_unit();
    double acc = 0.0;
    int last_positive = 0;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = i;
      acc += probs[i];
      if (u < acc) return i;
    }
    return last_positive;
  }

 private:
  std::uint64_t state_;
};

// Seed for the i-th stream of a master seed. This is the scheme used for
// per-trajectory generators: derive_stream_seed(master, i) is stable across
// runs and independent of how many other streams get drawn.
inline std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

}  // namespace rcsl_lab
