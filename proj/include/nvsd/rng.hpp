#pragma once

#include <cmath>
#include <cstdint>

namespace nvsd {

// Counter-based deterministic RNG. Every draw is a pure function of
// (seed, stream, counter), so independent streams never perturb each
// other and all platforms reproduce identical values.
//
// word(seed, stream, counter) = mix64(mix64(mix64(seed) ^ stream) ^ counter)
// with mix64 the splitmix64 finalizer.

// Stream ids used across the project. Toggling a feature that consumes
// one stream must not shift the draws of any other.
enum class RngStream : std::uint64_t {
  SceneSampling = 1,
  ViewSampling = 2,
  ParamInit = 3,
  NoiseDraw = 4,
  TimestepDraw = 5,
  TextDropout = 6,
  ImageDropout = 7,
  BatchSampling = 8,
  SamplerNoise = 9,
  EvalSampling = 10,
};

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream), counter_(0) {}
  SeededRng(std::uint64_t seed, RngStream stream)
      : SeededRng(seed, static_cast<std::uint64_t>(stream)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  // Derive a child stream; e.g. one per sample index.
  SeededRng fork(std::uint64_t substream) const {
    return SeededRng(mix64(mix64(seed_) ^ stream_), substream);
  }

  std::uint64_t next_u64() {
    return mix64(mix64(mix64(seed_) ^ stream_) ^ counter_++);
  }

  // Uniform in [0, 1) with 24 bits of mantissa, exactly representable in fp32.
  float next_float() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  // Uniform in [lo, hi).
  float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t threshold = (0ull - n) % n;
    while (true) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller. One value per call; consumes two draws.
  float next_gaussian() {
    float u1 = static_cast<float>((next_u64() >> 40) + 1) * (1.0f / 16777216.0f);
    float u2 = next_float();
    float r = std::sqrt(-2.0f * std::log(u1));
    return r * std::cos(6.2831853071795864769f * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_;
};

}  // namespace nvsd
