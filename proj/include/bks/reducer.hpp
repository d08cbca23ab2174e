#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "bks/autograd.hpp"
#include "bks/buckets.hpp"
#include "bks/module.hpp"
#include "bks/process_group.hpp"

namespace bks {

struct ReducerConfig {
  std::size_t bucket_cap_bytes = kDefaultBucketCapBytes;
  bool find_unused_parameters = false;
  ProcessGroupPtr process_group;
  // When false, buckets are held until backward has finished and then
  // launched together: the no-overlap baseline.
  bool overlap = true;
};

enum class ReducerEventKind { hook, launch, finalize };

struct ReducerEvent {
  ReducerEventKind kind;
  // param_index for hooks, bucket index for launches.
  std::size_t index;
  std::chrono::steady_clock::time_point time;
};

struct IterationStats {
  bool synchronized = false;
  std::vector<std::size_t> launch_order;
  // Blocked in finalize on bucket and bitmap reductions.
  double finalize_wait_s = 0.0;
  // Inside hooks issuing collectives.
  double hook_blocking_s = 0.0;
  std::size_t globally_unused = 0;

  double exposed_comm_s() const {
    return finalize_wait_s + hook_blocking_s;
  }
};

// Wraps a module for data-parallel training. Construction broadcasts rank
// 0's parameters and buffers, buckets parameters in reverse registration
// order, and installs one post-accumulation hook per parameter. During
// backward the hooks copy averaged gradients into buckets and launch each
// bucket's allreduce, strictly in bucket order, as soon as it fills; the
// end-of-backward step waits for the reductions and writes the averages
// back to param.grad.
class DistributedDataParallel {
 public:
  DistributedDataParallel(Module& module, ReducerConfig config);
  ~DistributedDataParallel();
  DistributedDataParallel(const DistributedDataParallel&) = delete;
  DistributedDataParallel& operator=(const DistributedDataParallel&) = delete;

  Var forward(const Var& input);

  // Scope in which backward passes accumulate locally without
  // communicating. The first backward after the scope synchronises the
  // accumulated gradients.
  class NoSyncGuard {
   public:
    NoSyncGuard(NoSyncGuard&& other) noexcept;
    NoSyncGuard(const NoSyncGuard&) = delete;
    NoSyncGuard& operator=(const NoSyncGuard&) = delete;
    NoSyncGuard& operator=(NoSyncGuard&&) = delete;
    ~NoSyncGuard();

   private:
    friend class DistributedDataParallel;
    explicit NoSyncGuard(DistributedDataParallel* owner) : owner_(owner) {}
    DistributedDataParallel* owner_;
  };

  [[nodiscard]] NoSyncGuard no_sync();
  bool sync_enabled() const {
    return sync_enabled_;
  }

  Module& module() {
    return module_;
  }
  ProcessGroup& process_group() {
    return *config_.process_group;
  }
  const ReducerConfig& config() const {
    return config_;
  }
  const std::vector<Bucket>& buckets() const {
    return buckets_;
  }
  // One byte per parameter: used locally since the last synchronising pass.
  std::span<const std::uint8_t> local_used_map() const {
    return local_used_;
  }
  const IterationStats& last_stats() const {
    return stats_;
  }

  // Test instrumentation; called on the training thread.
  void set_observer(std::function<void(const ReducerEvent&)> observer) {
    observer_ = std::move(observer);
  }

 private:
  struct Locator {
    std::size_t bucket;
    std::size_t slot;
  };

  void prepare_for_backward(const Var& output);
  void autograd_hook(std::size_t param_index);
  void mark_ready(std::size_t param_index, bool from_hook);
  void launch_ready_buckets();
  void finalize_backward();
  void reset_iteration_state();
  void emit(ReducerEventKind kind, std::size_t index);

  Module& module_;
  ReducerConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Bucket> buckets_;
  std::vector<Locator> locators_;
  PostAccumulateHookPtr hook_;

  bool sync_enabled_ = true;
  // Captured at forward: whether the coming backward synchronises.
  bool pass_syncs_ = false;
  bool expect_hooks_ = false;
  bool finalize_queued_ = false;
  std::size_t next_bucket_ = 0;
  std::vector<std::uint8_t> marked_;
  std::vector<std::uint8_t> local_used_;
  std::vector<std::uint8_t> global_used_;
  IterationStats stats_;
  std::function<void(const ReducerEvent&)> observer_;
};

} // namespace bks
