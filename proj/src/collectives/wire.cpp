#include "bks/wire.hpp"

#include <cstring>

#include "bks/errors.hpp"

namespace bks::wire {

namespace {

template <typename T>
void put_le(std::byte* dst, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<std::byte>((value >> (8 * i)) & 0xFF);
  }
}

template <typename T>
T get_le(const std::byte* src) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(std::to_integer<std::uint8_t>(src[i])) << (8 * i);
  }
  return value;
}

} // namespace

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::broadcast:
      return "broadcast";
    case OpKind::allreduce_sum:
      return "allreduce_sum";
    case OpKind::allreduce_max_u8:
      return "allreduce_max_u8";
    case OpKind::rendezvous:
      return "rendezvous";
  }
  return "unknown";
}

HeaderBytes encode_header(const FrameHeader& h) {
  HeaderBytes out{};
  std::memcpy(out.data(), kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out.data() + 4, h.group_id);
  put_le<std::uint64_t>(out.data() + 8, h.op_seq);
  out[16] = static_cast<std::byte>(h.op_kind);
  out[17] = static_cast<std::byte>(h.phase);
  put_le<std::uint32_t>(out.data() + 18, h.chunk_index);
  put_le<std::uint64_t>(out.data() + 22, h.payload_len);
  return out;
}

FrameHeader decode_header(std::span<const std::byte, kHeaderSize> bytes) {
  BKS_CHECK(
      std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) == 0,
      ProtocolError,
      "bad frame magic");
  FrameHeader h;
  h.group_id = get_le<std::uint32_t>(bytes.data() + 4);
  h.op_seq = get_le<std::uint64_t>(bytes.data() + 8);
  const auto kind = std::to_integer<std::uint8_t>(bytes[16]);
  BKS_CHECK(
      kind <= 2 || kind == 255, ProtocolError, "unknown op_kind ", int(kind));
  h.op_kind = static_cast<OpKind>(kind);
  const auto phase = std::to_integer<std::uint8_t>(bytes[17]);
  BKS_CHECK(phase <= 1, ProtocolError, "unknown phase ", int(phase));
  h.phase = static_cast<Phase>(phase);
  h.chunk_index = get_le<std::uint32_t>(bytes.data() + 18);
  h.payload_len = get_le<std::uint64_t>(bytes.data() + 22);
  return h;
}

std::string describe(const FrameHeader& h) {
  return detail::str(
      "{group=",
      h.group_id,
      " seq=",
      h.op_seq,
      " kind=",
      op_kind_name(h.op_kind),
      " phase=",
      int(h.phase),
      " chunk=",
      h.chunk_index,
      " bytes=",
      h.payload_len,
      "}");
}

std::vector<std::byte> encode_roster(std::span<const RosterEntry> entries) {
  std::vector<std::byte> out;
  for (const auto& e : entries) {
    BKS_CHECK(
        e.address.size() <= 0xFFFF,
        UsageError,
        "rendezvous address too long");
    const auto base = out.size();
    out.resize(base + 6 + e.address.size());
    put_le<std::uint32_t>(out.data() + base, e.rank);
    put_le<std::uint16_t>(
        out.data() + base + 4, static_cast<std::uint16_t>(e.address.size()));
    std::memcpy(out.data() + base + 6, e.address.data(), e.address.size());
  }
  return out;
}

std::vector<RosterEntry> decode_roster(std::span<const std::byte> payload) {
  std::vector<RosterEntry> out;
  std::size_t pos = 0;
  while (pos < payload.size()) {
    BKS_CHECK(
        payload.size() - pos >= 6, ProtocolError, "truncated rendezvous entry");
    RosterEntry e;
    e.rank = get_le<std::uint32_t>(payload.data() + pos);
    const auto len = get_le<std::uint16_t>(payload.data() + pos + 4);
    pos += 6;
    BKS_CHECK(
        payload.size() - pos >= len,
        ProtocolError,
        "truncated rendezvous address");
    e.address.assign(
        reinterpret_cast<const char*>(payload.data() + pos), len);
    pos += len;
    out.push_back(std::move(e));
  }
  return out;
}

} // namespace bks::wire
