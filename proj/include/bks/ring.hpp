#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "bks/wire.hpp"

namespace bks {

// [begin, end) of each rank's chunk. Chunks tile [0, n) contiguously and
// differ in length by at most one; earlier chunks take the remainder.
std::vector<std::pair<std::size_t, std::size_t>> ring_chunk_bounds(
    std::size_t n,
    int world);

// Point-to-point transport between a rank and its ring neighbours.
class RingLink {
 public:
  virtual ~RingLink() = default;

  virtual int rank() const = 0;
  virtual int world() const = 0;
  int successor() const {
    return (rank() + 1) % world();
  }
  int predecessor() const {
    return (rank() + world() - 1) % world();
  }

  virtual void send(
      const wire::FrameHeader& header,
      std::span<const std::byte> payload) = 0;
  virtual void recv(
      wire::FrameHeader& header,
      std::vector<std::byte>& payload) = 0;
  // Send to the successor and receive from the predecessor concurrently.
  virtual void exchange(
      const wire::FrameHeader& out_header,
      std::span<const std::byte> out_payload,
      wire::FrameHeader& in_header,
      std::vector<std::byte>& in_payload) = 0;

  // Unblocks a pending receive so the owner can shut down.
  virtual void interrupt() = 0;
};

struct RingOp {
  std::uint32_t group_id = 0;
  std::uint64_t op_seq = 0;
};

// Reduce-scatter then all-gather, 2(world-1) exchanges.
void ring_allreduce_sum(RingLink& link, RingOp op, std::span<double> data);
void ring_allreduce_max_u8(
    RingLink& link,
    RingOp op,
    std::span<std::uint8_t> data);
// Chain from src around the ring.
void ring_broadcast(
    RingLink& link,
    RingOp op,
    std::span<double> data,
    int src_rank);

} // namespace bks
