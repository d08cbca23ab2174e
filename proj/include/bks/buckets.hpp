#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "bks/process_group.hpp"

namespace bks {

// 25 MiB.
inline constexpr std::size_t kDefaultBucketCapBytes = 26214400;
inline constexpr std::size_t kUnlimitedBucketCap =
    std::numeric_limits<std::size_t>::max();

struct BucketSlot {
  std::size_t param_index = 0;
  std::size_t offset = 0; // elements into the bucket buffer
  std::size_t length = 0;

  bool operator==(const BucketSlot&) const = default;
};

struct Bucket {
  std::size_t index = 0;
  std::vector<double> buffer;
  std::vector<BucketSlot> slots;
  // Gradients not yet written this iteration; ready once zero.
  std::size_t pending = 0;
  bool ready = false;
  WorkPtr work;
};

// Greedy packing in reverse registration order: a parameter goes into the
// current bucket unless that would push it past `cap_bytes`, in which case
// it opens the next bucket. An empty bucket always accepts, so a parameter
// larger than the cap sits alone and cap 0 yields one bucket per parameter.
std::vector<Bucket> build_buckets(
    std::span<const std::size_t> param_numels,
    std::size_t cap_bytes);

} // namespace bks
