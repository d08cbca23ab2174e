#include "bks/experiment.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <mutex>
#include <optional>
#include <thread>

#include "bks/errors.hpp"
#include "bks/mlp.hpp"
#include "bks/ops.hpp"
#include "bks/sgd.hpp"
#include "bks/synthetic.hpp"
#include "bks/zoo.hpp"

namespace bks {

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

} // namespace

void check_config_agreement(ProcessGroup& group, std::uint64_t hash) {
  // Two 32-bit halves so each travels exactly as a double.
  std::array<double, 2> theirs{
      static_cast<double>(hash >> 32), static_cast<double>(hash & 0xffffffffu)};
  group.broadcast(theirs, 0)->wait();
  const std::uint64_t rank0_hash =
      (static_cast<std::uint64_t>(theirs[0]) << 32) |
      static_cast<std::uint64_t>(theirs[1]);
  std::array<std::uint8_t, 1> mismatch{rank0_hash != hash ? std::uint8_t{1} : std::uint8_t{0}};
  const bool mine = mismatch[0] != 0;
  group.allreduce_max_u8(mismatch)->wait();
  if (mine) {
    throw UsageError(detail::str(
        "config hash ",
        std::hex,
        hash,
        " on rank ",
        std::dec,
        group.rank(),
        " differs from rank 0's ",
        std::hex,
        rank0_hash,
        "; launch every rank with the same settings"));
  }
  BKS_CHECK(
      mismatch[0] == 0,
      UsageError,
      "another rank was launched with a different config; aborting before "
      "training");
}

ProcessGroupPtr connect(const RunConfig& config, std::shared_ptr<LoopbackHub> hub) {
  validate(config);
  GroupConfig gc;
  gc.rank = config.rank;
  gc.world = config.world;
  gc.transport = config.transport;
  gc.master_addr = config.master_addr;
  gc.latency_model = latency_model(config);
  gc.timeout = config.timeout;
  gc.hub = std::move(hub);
  auto group = config.round_robin > 1
      ? rendezvous_round_robin(gc, config.round_robin)
      : rendezvous(gc);
  check_config_agreement(*group, config_hash(config));
  return group;
}

RunResult train(const RunConfig& config, ProcessGroupPtr group, const RunHooks& hooks) {
  validate(config);
  const auto& entry = zoo_model(config.model);
  const int rank = group->rank();
  const int world = group->world();
  const std::size_t rows = config.batch_rows ? config.batch_rows : entry.batch_rows;

  auto model = build_mlp(entry.spec, config.seed, rank);
  DistributedDataParallel ddp(
      *model,
      ReducerConfig{config.bucket_cap_bytes, config.find_unused, group, config.overlap});
  Sgd sgd(model->parameters(), SgdConfig{config.lr, config.momentum});
  const SyntheticRegression data(
      entry.spec.widths.front(), entry.spec.widths.back(), config.seed);
  if (hooks.on_construct) {
    hooks.on_construct(ddp);
  }

  RunResult result;
  result.rank = rank;
  result.records.reserve(config.iterations);
  for (std::uint64_t it = 0; it < config.iterations; ++it) {
    model->set_iteration(it);
    const bool sync = it % config.skip_sync_every == 0;
    const Batch batch = shard(data.batch(it, rows), rank, world);

    const auto t0 = Clock::now();
    std::optional<DistributedDataParallel::NoSyncGuard> guard;
    if (!sync) {
      guard.emplace(ddp.no_sync());
    }
    const Var out = ddp.forward(Var(batch.inputs));
    const Var loss = mse_loss(out, Var(batch.targets));
    const auto t1 = Clock::now();
    backward(loss);
    const auto t2 = Clock::now();
    guard.reset();
    if (sync) {
      sgd.step();
    }
    const auto t3 = Clock::now();

    const double value = loss.value().item();
    BKS_CHECK(
        std::isfinite(value),
        Error,
        "rank ",
        rank,
        ": loss became ",
        value,
        " at iteration ",
        it);
    IterationRecord r;
    r.iteration = it;
    r.forward_s = seconds(t0, t1);
    const double backward_s = seconds(t1, t2);
    r.backward_comm_exposed_s =
        sync ? std::min(ddp.last_stats().exposed_comm_s(), backward_s) : 0.0;
    r.backward_compute_s = backward_s - r.backward_comm_exposed_s;
    r.optimizer_s = seconds(t2, t3);
    r.total_s = seconds(t0, t3);
    r.loss = value;
    result.records.push_back(r);
    result.synchronized.push_back(sync);
    if (hooks.on_iteration) {
      hooks.on_iteration(it, ddp);
    }
  }
  for (Parameter* p : model->parameters()) {
    result.final_params.push_back(p->value());
  }
  return result;
}

RunResult run_experiment(
    const RunConfig& config,
    std::shared_ptr<LoopbackHub> hub,
    const RunHooks& hooks) {
  auto group = connect(config, std::move(hub));
  return train(config, std::move(group), hooks);
}

void run_threads(int world, const std::function<void(int rank)>& fn) {
  std::mutex mutex;
  std::exception_ptr first;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(world));
  for (int r = 0; r < world; ++r) {
    threads.emplace_back([&, r] {
      try {
        fn(r);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!first) {
          first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  if (first) {
    std::rethrow_exception(first);
  }
}

std::vector<RunResult> run_world(const RunConfig& config, const RunHooks& hooks) {
  std::vector<RunResult> results(static_cast<std::size_t>(config.world));
  auto hub = LoopbackHub::create();
  std::mutex mutex;
  std::exception_ptr root_cause;
  try {
    run_threads(config.world, [&](int rank) {
      RunConfig mine = config;
      mine.rank = rank;
      try {
        results[static_cast<std::size_t>(rank)] = run_experiment(mine, hub, hooks);
      } catch (const std::exception& e) {
        {
          // Record before aborting so the peers' induced failures cannot
          // mask the original one.
          std::lock_guard lock(mutex);
          if (!root_cause) {
            root_cause = std::current_exception();
          }
        }
        hub->abort(detail::str("rank ", rank, " failed: ", e.what()));
        throw;
      }
    });
  } catch (...) {
    std::lock_guard lock(mutex);
    if (root_cause) {
      std::rethrow_exception(root_cause);
    }
    throw;
  }
  return results;
}

} // namespace bks
