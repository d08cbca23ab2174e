#include "bks/ring.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "bks/errors.hpp"

namespace bks {

static_assert(
    std::endian::native == std::endian::little,
    "wire payloads are little-endian fp64; add byte swapping for this host");

namespace {

using wire::FrameHeader;
using wire::OpKind;
using wire::Phase;

void expect_frame(
    const FrameHeader& got,
    const FrameHeader& want,
    int peer) {
  if (got.group_id != want.group_id || got.op_seq != want.op_seq) {
    throw ProtocolError(detail::str(
        "collective order mismatch from rank ",
        peer,
        ": expected ",
        wire::describe(want),
        ", got ",
        wire::describe(got),
        " (ranks issued collectives in different orders?)"));
  }
  if (got.op_kind != want.op_kind) {
    throw ProtocolError(detail::str(
        "collective kind mismatch from rank ",
        peer,
        ": local ",
        wire::op_kind_name(want.op_kind),
        ", peer ",
        wire::op_kind_name(got.op_kind),
        " at op_seq ",
        want.op_seq));
  }
  if (got.payload_len != want.payload_len && want.phase == got.phase &&
      want.chunk_index == got.chunk_index) {
    throw ProtocolError(detail::str(
        "collective size mismatch from rank ",
        peer,
        ": expected ",
        want.payload_len,
        " bytes, got ",
        got.payload_len,
        " at op_seq ",
        want.op_seq));
  }
  if (got != want) {
    throw ProtocolError(detail::str(
        "unexpected frame from rank ",
        peer,
        ": expected ",
        wire::describe(want),
        ", got ",
        wire::describe(got)));
  }
}

template <typename T>
std::span<const std::byte> as_bytes(std::span<const T> s) {
  return std::as_bytes(s);
}

struct SumOp {
  void operator()(double& acc, double v) const {
    acc += v;
  }
};

struct MaxOp {
  void operator()(std::uint8_t& acc, std::uint8_t v) const {
    acc = std::max(acc, v);
  }
};

template <typename T, typename Reduce>
void ring_allreduce(
    RingLink& link,
    RingOp op,
    OpKind kind,
    std::span<T> data,
    Reduce reduce) {
  const int world = link.world();
  if (world == 1) {
    return;
  }
  const int rank = link.rank();
  const auto chunks = ring_chunk_bounds(data.size(), world);
  const auto mod = [world](int v) { return ((v % world) + world) % world; };

  auto header_for = [&](Phase phase, int chunk) {
    const auto [b, e] = chunks[static_cast<std::size_t>(chunk)];
    FrameHeader h;
    h.group_id = op.group_id;
    h.op_seq = op.op_seq;
    h.op_kind = kind;
    h.phase = phase;
    h.chunk_index = static_cast<std::uint32_t>(chunk);
    h.payload_len = (e - b) * sizeof(T);
    return h;
  };
  auto chunk_span = [&](int chunk) {
    const auto [b, e] = chunks[static_cast<std::size_t>(chunk)];
    return data.subspan(b, e - b);
  };

  FrameHeader in_header;
  // Reused across ops: each group drives its ring from one worker thread,
  // and fresh multi-megabyte buffers cost a page fault per page.
  thread_local std::vector<std::byte> in_payload;

  // Reduce-scatter: after world-1 steps rank r owns the full reduction of
  // chunk r+1.
  for (int step = 0; step < world - 1; ++step) {
    const int send_chunk = mod(rank - step);
    const int recv_chunk = mod(rank - step - 1);
    auto out = chunk_span(send_chunk);
    link.exchange(
        header_for(Phase::reduce_scatter, send_chunk),
        as_bytes(std::span<const T>(out)),
        in_header,
        in_payload);
    expect_frame(
        in_header,
        header_for(Phase::reduce_scatter, recv_chunk),
        link.predecessor());
    auto dst = chunk_span(recv_chunk);
    const T* src = reinterpret_cast<const T*>(in_payload.data());
    for (std::size_t i = 0; i < dst.size(); ++i) {
      T v;
      std::memcpy(&v, src + i, sizeof(T));
      reduce(dst[i], v);
    }
  }

  // All-gather: circulate the reduced chunks.
  for (int step = 0; step < world - 1; ++step) {
    const int send_chunk = mod(rank + 1 - step);
    const int recv_chunk = mod(rank - step);
    auto out = chunk_span(send_chunk);
    link.exchange(
        header_for(Phase::all_gather, send_chunk),
        as_bytes(std::span<const T>(out)),
        in_header,
        in_payload);
    expect_frame(
        in_header,
        header_for(Phase::all_gather, recv_chunk),
        link.predecessor());
    auto dst = chunk_span(recv_chunk);
    if (!dst.empty()) {
      std::memcpy(dst.data(), in_payload.data(), dst.size_bytes());
    }
  }
}

} // namespace

std::vector<std::pair<std::size_t, std::size_t>> ring_chunk_bounds(
    std::size_t n,
    int world) {
  BKS_CHECK(world >= 1, UsageError, "world must be >= 1, got ", world);
  const auto w = static_cast<std::size_t>(world);
  const std::size_t base = n / w;
  const std::size_t extra = n % w;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(w);
  std::size_t begin = 0;
  for (std::size_t i = 0; i < w; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

void ring_allreduce_sum(RingLink& link, RingOp op, std::span<double> data) {
  ring_allreduce(link, op, OpKind::allreduce_sum, data, SumOp{});
}

void ring_allreduce_max_u8(
    RingLink& link,
    RingOp op,
    std::span<std::uint8_t> data) {
  ring_allreduce(link, op, OpKind::allreduce_max_u8, data, MaxOp{});
}

void ring_broadcast(
    RingLink& link,
    RingOp op,
    std::span<double> data,
    int src_rank) {
  const int world = link.world();
  BKS_CHECK(
      src_rank >= 0 && src_rank < world,
      UsageError,
      "broadcast source rank ",
      src_rank,
      " out of range for world ",
      world);
  if (world == 1) {
    return;
  }
  const int position = (link.rank() - src_rank + world) % world;
  FrameHeader h;
  h.group_id = op.group_id;
  h.op_seq = op.op_seq;
  h.op_kind = OpKind::broadcast;
  h.payload_len = data.size_bytes();

  if (position != 0) {
    FrameHeader in_header;
    std::vector<std::byte> in_payload;
    link.recv(in_header, in_payload);
    if (in_header.op_kind == OpKind::broadcast &&
        in_header.op_seq == op.op_seq &&
        in_header.payload_len != h.payload_len) {
      throw ProtocolError(detail::str(
          "broadcast size mismatch: rank ",
          link.rank(),
          " holds ",
          data.size(),
          " elements, rank ",
          src_rank,
          " sent ",
          in_header.payload_len / sizeof(double)));
    }
    expect_frame(in_header, h, link.predecessor());
    if (!data.empty()) {
      std::memcpy(data.data(), in_payload.data(), data.size_bytes());
    }
  }
  if (position != world - 1) {
    link.send(h, std::as_bytes(std::span<const double>(data)));
  }
}

} // namespace bks
