#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bks/tensor.hpp"

namespace bks {

inline constexpr std::chrono::milliseconds kDefaultTimeout{30000};

// Simulated link cost for the loopback transport: alpha + bytes / beta.
struct LatencyModel {
  double alpha_seconds = 0.0;
  double bytes_per_second = 0.0;
};

double loopback_cost(const LatencyModel& model, std::size_t nbytes);

enum class Transport { loopback, tcp };

class LoopbackHub;

struct GroupConfig {
  int rank = 0;
  int world = 1;
  std::uint32_t group_id = 0;
  Transport transport = Transport::loopback;
  // host:port of rank 0's rendezvous listener (tcp only).
  std::string master_addr;
  // Loopback only; applied per collective before its handle completes.
  std::optional<LatencyModel> latency_model;
  // Bounds rendezvous and every blocking receive.
  std::chrono::milliseconds timeout = kDefaultTimeout;
  // Loopback only; null selects the process-wide hub.
  std::shared_ptr<LoopbackHub> hub;
};

enum class WorkState { pending, done, failed };

// Completion handle for one asynchronous collective. The result is written
// in place into the caller's buffer, which must stay alive until wait()
// returns.
class Work {
 public:
  explicit Work(std::uint64_t op_seq) : op_seq_(op_seq) {}

  // Blocks until completion; rethrows the failure if the op failed.
  void wait();
  bool completed() const;
  WorkState state() const;
  std::uint64_t op_seq() const {
    return op_seq_;
  }

  void mark_done();
  void mark_failed(std::exception_ptr error);

 private:
  const std::uint64_t op_seq_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  WorkState state_ = WorkState::pending;
  std::exception_ptr error_;
};

using WorkPtr = std::shared_ptr<Work>;

// Test rigs only: pin the op sequence number written to the wire instead
// of taking the group's next counter value.
struct OpOptions {
  std::optional<std::uint64_t> op_seq;
};

// Ordered collective endpoint. Every rank must issue matching collectives
// in matching order. Driven by a single issuing thread.
class ProcessGroup {
 public:
  virtual ~ProcessGroup() = default;

  virtual int rank() const = 0;
  virtual int world() const = 0;

  virtual WorkPtr broadcast(
      std::span<double> data,
      int src_rank,
      OpOptions options = {}) = 0;
  virtual WorkPtr allreduce_sum(
      std::span<double> data,
      OpOptions options = {}) = 0;
  virtual WorkPtr allreduce_max_u8(
      std::span<std::uint8_t> data,
      OpOptions options = {}) = 0;
};

using ProcessGroupPtr = std::shared_ptr<ProcessGroup>;

// Blocks until all `world` ranks of the group have joined.
ProcessGroupPtr rendezvous(const GroupConfig& config);

// Dispatches collective k to groups[k % N].
ProcessGroupPtr round_robin_group(std::vector<ProcessGroupPtr> groups);

// Rendezvous `count` groups with consecutive group ids starting at
// config.group_id and wrap them round-robin. For tcp, group i listens on
// the master port + i.
ProcessGroupPtr rendezvous_round_robin(const GroupConfig& config, int count);

// Broadcast that first compares shapes across ranks; a mismatch raises
// ProtocolError on every rank naming both shapes.
void broadcast_tensor(ProcessGroup& group, Tensor& tensor, int src_rank);

// In-process mailbox registry for the loopback transport.
class LoopbackHub {
 public:
  struct Impl;

  static std::shared_ptr<LoopbackHub> create();
  static std::shared_ptr<LoopbackHub> process_default();

  // Fails every blocked and future receive on this hub.
  void abort(const std::string& reason);

  const std::shared_ptr<Impl>& impl() const {
    return impl_;
  }

 private:
  LoopbackHub();
  std::shared_ptr<Impl> impl_;
};

} // namespace bks
