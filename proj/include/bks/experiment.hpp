#pragma once

#include <functional>
#include <vector>

#include "bks/csv.hpp"
#include "bks/process_group.hpp"
#include "bks/reducer.hpp"
#include "bks/run_config.hpp"

namespace bks {

struct RunResult {
  int rank = 0;
  std::vector<IterationRecord> records;
  // Parallel to records.
  std::vector<bool> synchronized;
  // Parameter values after the last iteration, in registration order.
  std::vector<Tensor> final_params;
};

// Hooks for test rigs, called on the training thread of each rank.
struct RunHooks {
  std::function<void(DistributedDataParallel&)> on_construct;
  // After the optimizer step of every iteration.
  std::function<void(std::uint64_t iteration, DistributedDataParallel&)> on_iteration;
};

// Forms the process group described by `config` (plus the round-robin
// wrapper) and checks that all ranks agree on the config hash.
ProcessGroupPtr connect(
    const RunConfig& config,
    std::shared_ptr<LoopbackHub> hub = nullptr);

// Aborts on every rank with UsageError if any rank's hash differs from
// rank 0's.
void check_config_agreement(ProcessGroup& group, std::uint64_t hash);

// Trains one rank to completion on an already connected group.
RunResult train(
    const RunConfig& config,
    ProcessGroupPtr group,
    const RunHooks& hooks = {});

// connect + train.
RunResult run_experiment(
    const RunConfig& config,
    std::shared_ptr<LoopbackHub> hub = nullptr,
    const RunHooks& hooks = {});

// Runs all ranks of `config.world` as threads of this process: a private
// hub for loopback, real sockets for tcp. The first failure aborts the
// hub and is rethrown after every thread has exited. Results are indexed
// by rank.
std::vector<RunResult> run_world(const RunConfig& config, const RunHooks& hooks = {});

// Runs fn(rank) on `world` threads and rethrows the first exception.
void run_threads(int world, const std::function<void(int rank)>& fn);

} // namespace bks
