#include "bks/rng.hpp"

namespace bks {

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix(key_ ^ mix(stream + kGolden)), 0);
}

double Rng::uniform(double lo, double hi) {
  // 53 random mantissa bits → [0, 1).
  const double unit =
      static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

} // namespace bks
