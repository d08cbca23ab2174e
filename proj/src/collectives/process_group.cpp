#include "bks/process_group.hpp"

#include <array>

#include "bks/errors.hpp"
#include "loopback.hpp"
#include "ring_process_group.hpp"
#include "tcp_socket.hpp"
#include "tcp_transport.hpp"

namespace bks {

double loopback_cost(const LatencyModel& model, std::size_t nbytes) {
  double cost = model.alpha_seconds;
  if (model.bytes_per_second > 0.0) {
    cost += static_cast<double>(nbytes) / model.bytes_per_second;
  }
  return cost;
}

ProcessGroupPtr rendezvous(const GroupConfig& config) {
  BKS_CHECK(
      config.world >= 1, UsageError, "world must be >= 1, got ", config.world);
  BKS_CHECK(
      config.rank >= 0 && config.rank < config.world,
      UsageError,
      "rank ",
      config.rank,
      " out of range for world ",
      config.world);
  if (config.latency_model) {
    BKS_CHECK(
        config.latency_model->alpha_seconds >= 0.0 &&
            config.latency_model->bytes_per_second >= 0.0,
        UsageError,
        "latency model terms must be non-negative");
  }

  std::unique_ptr<RingLink> link;
  if (config.world == 1) {
    link = std::make_unique<SelfLink>();
  } else if (config.transport == Transport::loopback) {
    auto hub = config.hub ? config.hub : LoopbackHub::process_default();
    link = loopback_join(
        *hub, config.group_id, config.rank, config.world, config.timeout);
  } else {
    link = tcp_rendezvous(config);
  }
  const auto latency = config.transport == Transport::loopback
      ? config.latency_model
      : std::nullopt;
  return std::make_shared<RingProcessGroup>(
      config.group_id, std::move(link), latency);
}

ProcessGroupPtr rendezvous_round_robin(const GroupConfig& config, int count) {
  BKS_CHECK(count >= 1, UsageError, "round-robin count must be >= 1");
  std::vector<ProcessGroupPtr> groups;
  for (int i = 0; i < count; ++i) {
    GroupConfig inner = config;
    inner.group_id = config.group_id + static_cast<std::uint32_t>(i);
    if (config.transport == Transport::tcp && config.world > 1) {
      auto hp = tcp::parse_host_port(config.master_addr);
      hp.port = static_cast<std::uint16_t>(hp.port + i);
      inner.master_addr = tcp::format_host_port(hp);
    }
    groups.push_back(rendezvous(inner));
  }
  return round_robin_group(std::move(groups));
}

namespace {

constexpr std::size_t kMaxBroadcastDims = 8;
constexpr std::size_t kShapeRecord = 1 + kMaxBroadcastDims;

Shape shape_from_record(std::span<const double> rec) {
  Shape s;
  const auto ndim = static_cast<std::size_t>(rec[0]);
  for (std::size_t i = 0; i < ndim && i < kMaxBroadcastDims; ++i) {
    s.push_back(static_cast<std::int64_t>(rec[1 + i]));
  }
  return s;
}

} // namespace

void broadcast_tensor(ProcessGroup& group, Tensor& tensor, int src_rank) {
  BKS_CHECK(
      tensor.dim() <= kMaxBroadcastDims,
      UsageError,
      "broadcast_tensor supports at most ",
      kMaxBroadcastDims,
      " dims");
  const auto world = static_cast<std::size_t>(group.world());
  if (world > 1) {
    // Every rank publishes its shape in its own slot of a shared table.
    std::vector<double> table(world * kShapeRecord, 0.0);
    auto* mine = table.data() + static_cast<std::size_t>(group.rank()) * kShapeRecord;
    mine[0] = static_cast<double>(tensor.dim());
    for (std::size_t i = 0; i < tensor.dim(); ++i) {
      mine[1 + i] = static_cast<double>(tensor.shape()[i]);
    }
    group.allreduce_sum(table)->wait();
    const auto src_shape = shape_from_record(std::span<const double>(
        table.data() + static_cast<std::size_t>(src_rank) * kShapeRecord,
        kShapeRecord));
    for (std::size_t r = 0; r < world; ++r) {
      const auto other = shape_from_record(std::span<const double>(
          table.data() + r * kShapeRecord, kShapeRecord));
      BKS_CHECK(
          other == src_shape,
          ProtocolError,
          "broadcast shape mismatch: rank ",
          src_rank,
          " has ",
          shape_str(src_shape),
          ", rank ",
          r,
          " has ",
          shape_str(other));
    }
  }
  group.broadcast(tensor.mutable_data(), src_rank)->wait();
}

} // namespace bks
