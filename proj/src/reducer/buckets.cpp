#include "bks/buckets.hpp"

#include "bks/errors.hpp"

namespace bks {

std::vector<Bucket> build_buckets(
    std::span<const std::size_t> param_numels,
    std::size_t cap_bytes) {
  BKS_CHECK(
      !param_numels.empty(), UsageError, "cannot bucket an empty parameter list");
  std::vector<Bucket> buckets;
  std::size_t bytes = 0;
  for (std::size_t k = param_numels.size(); k-- > 0;) {
    const std::size_t numel = param_numels[k];
    const std::size_t param_bytes = numel * sizeof(double);
    const bool fits = !buckets.empty() && bytes <= cap_bytes &&
        param_bytes <= cap_bytes - bytes;
    if (!fits) {
      buckets.emplace_back();
      buckets.back().index = buckets.size() - 1;
      bytes = 0;
    }
    auto& bucket = buckets.back();
    bucket.slots.push_back({k, bucket.buffer.size(), numel});
    bucket.buffer.resize(bucket.buffer.size() + numel, 0.0);
    bytes += param_bytes;
  }
  for (auto& bucket : buckets) {
    bucket.pending = bucket.slots.size();
  }
  return buckets;
}

} // namespace bks
