#include "ring_process_group.hpp"

#include <chrono>

#include "bks/errors.hpp"

namespace bks {

RingProcessGroup::RingProcessGroup(
    std::uint32_t group_id,
    std::unique_ptr<RingLink> link,
    std::optional<LatencyModel> latency_model)
    : group_id_(group_id),
      rank_(link->rank()),
      world_(link->world()),
      link_(std::move(link)),
      latency_model_(latency_model) {
  worker_ = std::thread([this] { worker_loop(); });
}

RingProcessGroup::~RingProcessGroup() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  link_->interrupt();
  worker_.join();
}

WorkPtr RingProcessGroup::enqueue(
    OpOptions options,
    std::size_t nbytes,
    std::function<void(RingLink&, RingOp)> run) {
  const auto seq = options.op_seq.value_or(next_op_seq_);
  next_op_seq_ = std::max(next_op_seq_, seq) + 1;
  auto work = std::make_shared<Work>(seq);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    BKS_CHECK(!stopping_, UsageError, "process group is shutting down");
    queue_.push_back({work, seq, nbytes, std::move(run)});
  }
  cv_.notify_all();
  return work;
}

WorkPtr RingProcessGroup::broadcast(
    std::span<double> data,
    int src_rank,
    OpOptions options) {
  BKS_CHECK(
      src_rank >= 0 && src_rank < world_,
      UsageError,
      "broadcast source rank ",
      src_rank,
      " out of range for world ",
      world_);
  return enqueue(options, data.size_bytes(), [data, src_rank](auto& link, auto op) {
    ring_broadcast(link, op, data, src_rank);
  });
}

WorkPtr RingProcessGroup::allreduce_sum(
    std::span<double> data,
    OpOptions options) {
  return enqueue(options, data.size_bytes(), [data](auto& link, auto op) {
    ring_allreduce_sum(link, op, data);
  });
}

WorkPtr RingProcessGroup::allreduce_max_u8(
    std::span<std::uint8_t> data,
    OpOptions options) {
  return enqueue(options, data.size_bytes(), [data](auto& link, auto op) {
    ring_allreduce_max_u8(link, op, data);
  });
}

void RingProcessGroup::worker_loop() {
  while (true) {
    PendingOp op;
    {
      std::unique_lock<std::mutex> lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) {
        return;
      }
      if (stopping_) {
        // Fail whatever was never started.
        for (auto& pending : queue_) {
          pending.work->mark_failed(std::make_exception_ptr(
              UsageError("process group destroyed with collectives pending")));
        }
        queue_.clear();
        return;
      }
      op = std::move(queue_.front());
      queue_.pop_front();
    }

    if (broken_) {
      op.work->mark_failed(broken_);
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      op.run(*link_, RingOp{group_id_, op.op_seq});
    } catch (...) {
      broken_ = std::current_exception();
      op.work->mark_failed(broken_);
      continue;
    }
    if (latency_model_ && world_ > 1) {
      const auto cost = std::chrono::duration<double>(
          loopback_cost(*latency_model_, op.nbytes));
      std::this_thread::sleep_until(
          start +
          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
              cost));
    }
    op.work->mark_done();
  }
}

void SelfLink::send(const wire::FrameHeader&, std::span<const std::byte>) {
  BKS_INTERNAL_ASSERT(false, "send on a world-of-one link");
}

void SelfLink::recv(wire::FrameHeader&, std::vector<std::byte>&) {
  BKS_INTERNAL_ASSERT(false, "recv on a world-of-one link");
}

void SelfLink::exchange(
    const wire::FrameHeader&,
    std::span<const std::byte>,
    wire::FrameHeader&,
    std::vector<std::byte>&) {
  BKS_INTERNAL_ASSERT(false, "exchange on a world-of-one link");
}

} // namespace bks
