#pragma once

#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <thread>

#include "bks/process_group.hpp"
#include "bks/ring.hpp"

namespace bks {

// Process group over a ring link. One progress worker executes collectives
// in issue order; handles complete in that order.
class RingProcessGroup final : public ProcessGroup {
 public:
  RingProcessGroup(
      std::uint32_t group_id,
      std::unique_ptr<RingLink> link,
      std::optional<LatencyModel> latency_model);
  ~RingProcessGroup() override;

  int rank() const override {
    return rank_;
  }
  int world() const override {
    return world_;
  }

  WorkPtr broadcast(std::span<double> data, int src_rank, OpOptions options)
      override;
  WorkPtr allreduce_sum(std::span<double> data, OpOptions options) override;
  WorkPtr allreduce_max_u8(std::span<std::uint8_t> data, OpOptions options)
      override;

 private:
  struct PendingOp {
    WorkPtr work;
    std::uint64_t op_seq;
    std::size_t nbytes;
    std::function<void(RingLink&, RingOp)> run;
  };

  WorkPtr enqueue(
      OpOptions options,
      std::size_t nbytes,
      std::function<void(RingLink&, RingOp)> run);
  void worker_loop();

  const std::uint32_t group_id_;
  const int rank_;
  const int world_;
  std::unique_ptr<RingLink> link_;
  const std::optional<LatencyModel> latency_model_;

  std::uint64_t next_op_seq_ = 0;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<PendingOp> queue_;
  bool stopping_ = false;
  // Set after the first failure; later ops fail with the same error.
  std::exception_ptr broken_;
  std::thread worker_;
};

// Ring link for a world of one: no peers, nothing to send.
class SelfLink final : public RingLink {
 public:
  int rank() const override {
    return 0;
  }
  int world() const override {
    return 1;
  }
  void send(const wire::FrameHeader&, std::span<const std::byte>) override;
  void recv(wire::FrameHeader&, std::vector<std::byte>&) override;
  void exchange(
      const wire::FrameHeader&,
      std::span<const std::byte>,
      wire::FrameHeader&,
      std::vector<std::byte>&) override;
  void interrupt() override {}
};

} // namespace bks
