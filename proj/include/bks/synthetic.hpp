#pragma once

#include <cstdint>

#include "bks/rng.hpp"
#include "bks/tensor.hpp"

namespace bks {

struct Batch {
  Tensor inputs;
  Tensor targets;
};

// Inputs uniform in [-1, 1); targets are a fixed random linear map of the
// inputs plus uniform noise. Batch contents depend only on (seed, iteration).
class SyntheticRegression {
 public:
  SyntheticRegression(
      std::size_t in_dim,
      std::size_t out_dim,
      std::uint64_t seed,
      double noise = 0.01);

  Batch batch(std::uint64_t iteration, std::size_t rows) const;

  const Tensor& teacher() const {
    return teacher_;
  }

 private:
  std::size_t in_dim_;
  std::size_t out_dim_;
  double noise_;
  Rng stream_;
  Tensor teacher_;
};

// Rows [rank·n/world, (rank+1)·n/world) of `batch`; world must divide n.
Batch shard(const Batch& batch, int rank, int world);

// Row-wise concatenation.
Batch concat(const Batch& a, const Batch& b);

} // namespace bks
