#pragma once

#include <cstdint>

namespace bks {

// Counter-based generator: the n-th draw is a pure function of (key, n),
// so streams can be split without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed)) {}

  // Independent child stream.
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64() {
    return mix(key_ + (counter_++) * kGolden);
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi);

  std::uint64_t counter() const {
    return counter_;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  Rng(std::uint64_t key, std::uint64_t /*raw*/) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace bks
