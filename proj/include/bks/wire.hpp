#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bks::wire {

// Every frame starts with this 30-byte little-endian header:
//   magic "BKS1" | group_id u32 | op_seq u64 | op_kind u8 | phase u8 |
//   chunk_index u32 | payload_len_bytes u64
inline constexpr std::size_t kHeaderSize = 30;
inline constexpr std::array<char, 4> kMagic = {'B', 'K', 'S', '1'};

enum class OpKind : std::uint8_t {
  broadcast = 0,
  allreduce_sum = 1,
  allreduce_max_u8 = 2,
  rendezvous = 255,
};

enum class Phase : std::uint8_t {
  reduce_scatter = 0,
  all_gather = 1,
};

const char* op_kind_name(OpKind kind);

struct FrameHeader {
  std::uint32_t group_id = 0;
  std::uint64_t op_seq = 0;
  OpKind op_kind = OpKind::broadcast;
  Phase phase = Phase::reduce_scatter;
  std::uint32_t chunk_index = 0;
  std::uint64_t payload_len = 0;

  bool operator==(const FrameHeader&) const = default;
};

using HeaderBytes = std::array<std::byte, kHeaderSize>;

HeaderBytes encode_header(const FrameHeader& header);
// Throws ProtocolError on bad magic or unknown op kind / phase.
FrameHeader decode_header(std::span<const std::byte, kHeaderSize> bytes);

std::string describe(const FrameHeader& header);

// Rendezvous payload entry: rank u32 | addr_len u16 | utf8 address.
struct RosterEntry {
  std::uint32_t rank = 0;
  std::string address;

  bool operator==(const RosterEntry&) const = default;
};

std::vector<std::byte> encode_roster(std::span<const RosterEntry> entries);
std::vector<RosterEntry> decode_roster(std::span<const std::byte> payload);

} // namespace bks::wire
