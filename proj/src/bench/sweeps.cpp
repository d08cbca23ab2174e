#include "bks/sweeps.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <limits>
#include <mutex>

#include "bks/buckets.hpp"
#include "bks/errors.hpp"
#include "bks/experiment.hpp"

namespace bks {

namespace {

std::string cap_label(std::size_t cap) {
  return cap == kUnlimitedBucketCap ? std::string("inf") : std::to_string(cap);
}

} // namespace

std::vector<BucketSweepRow> sweep_bucket_sizes(
    const RunConfig& base,
    const std::vector<std::size_t>& caps) {
  BKS_CHECK(!caps.empty(), UsageError, "bucket sweep needs at least one cap");
  std::vector<BucketSweepRow> rows;
  for (std::size_t cap : caps) {
    RunConfig config = base;
    config.bucket_cap_bytes = cap;
    std::size_t buckets = 0;
    RunHooks hooks;
    hooks.on_construct = [&](DistributedDataParallel& ddp) {
      if (ddp.process_group().rank() == 0) {
        buckets = ddp.buckets().size();
      }
    };
    const auto results = run_world(config, hooks);
    const auto& records = results.front().records;
    BucketSweepRow row;
    row.cap_bytes = cap;
    row.buckets = buckets;
    row.latency = summarize(records);
    double exposed = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
      if (r.iteration >= kWarmupIterations) {
        exposed += r.backward_comm_exposed_s;
        ++n;
      }
    }
    row.mean_exposed_comm_s = n ? exposed / static_cast<double>(n) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

void write_bucket_sweep(const std::string& path, const std::vector<BucketSweepRow>& rows) {
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    table.push_back(
        {cap_label(r.cap_bytes),
         std::to_string(r.buckets),
         std::to_string(r.latency.samples),
         format_double(r.latency.mean_s),
         format_double(r.latency.p50_s),
         format_double(r.latency.p95_s),
         format_double(r.mean_exposed_comm_s)});
  }
  write_table(
      path,
      {"bucket_cap_bytes", "buckets", "samples", "mean_s", "p50_s", "p95_s",
       "mean_exposed_comm_s"},
      table);
}

std::vector<MicrobenchRow> allreduce_microbench(
    const RunConfig& base,
    std::size_t total_elements,
    const std::vector<std::size_t>& per_op_sizes,
    int repeats) {
  BKS_CHECK(total_elements > 0, UsageError, "microbench needs elements");
  BKS_CHECK(repeats >= 1, UsageError, "repeats must be >= 1");
  for (auto size : per_op_sizes) {
    BKS_CHECK(size > 0, UsageError, "per-op size must be positive");
  }
  std::vector<MicrobenchRow> rows(per_op_sizes.size());
  auto hub = LoopbackHub::create();
  run_threads(base.world, [&](int rank) {
    RunConfig config = base;
    config.rank = rank;
    auto group = connect(config, hub);
    std::array<double, 1> token{0.0};
    for (std::size_t s = 0; s < per_op_sizes.size(); ++s) {
      const std::size_t per_op = std::min(per_op_sizes[s], total_elements);
      const std::size_t ops = (total_elements + per_op - 1) / per_op;
      std::vector<std::vector<double>> buffers(ops);
      for (std::size_t i = 0; i < ops; ++i) {
        const std::size_t len = std::min(per_op, total_elements - i * per_op);
        buffers[i].assign(len, static_cast<double>(rank + 1));
      }
      double best = std::numeric_limits<double>::infinity();
      for (int rep = 0; rep < repeats; ++rep) {
        // Line the ranks up so each timing starts together.
        group->allreduce_sum(token)->wait();
        const auto start = std::chrono::steady_clock::now();
        std::vector<WorkPtr> works;
        works.reserve(ops);
        for (auto& b : buffers) {
          works.push_back(group->allreduce_sum(b));
        }
        for (auto& w : works) {
          w->wait();
        }
        best = std::min(
            best,
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count());
      }
      if (rank == 0) {
        rows[s] = MicrobenchRow{per_op, ops, best};
      }
    }
  });
  return rows;
}

void write_microbench(const std::string& path, const std::vector<MicrobenchRow>& rows) {
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    table.push_back(
        {std::to_string(r.per_op_elements), std::to_string(r.ops), format_double(r.total_s)});
  }
  write_table(path, {"per_op_elements", "ops", "total_s"}, table);
}

std::vector<double> moving_average(const std::vector<double>& values, std::size_t window) {
  BKS_CHECK(window >= 1, UsageError, "window must be >= 1");
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= window) {
      sum -= values[i - window];
    }
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

std::vector<ConvergenceRow> convergence_experiment(
    const RunConfig& base,
    const std::vector<std::uint64_t>& n_values) {
  BKS_CHECK(!n_values.empty(), UsageError, "convergence needs n values");
  std::vector<ConvergenceRow> rows;
  for (auto n : n_values) {
    RunConfig config = base;
    config.skip_sync_every = n;
    const auto results = run_world(config);
    std::vector<double> loss(config.iterations, 0.0);
    for (const auto& r : results) {
      for (std::size_t i = 0; i < r.records.size(); ++i) {
        loss[i] += r.records[i].loss / static_cast<double>(results.size());
      }
    }
    const auto smoothed = moving_average(loss, kSmoothingWindow);
    for (std::size_t i = 0; i < loss.size(); ++i) {
      rows.push_back({n, i, loss[i], smoothed[i]});
    }
  }
  return rows;
}

void write_convergence(const std::string& path, const std::vector<ConvergenceRow>& rows) {
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    table.push_back(
        {std::to_string(r.n),
         std::to_string(r.iteration),
         format_double(r.loss),
         format_double(r.smoothed_loss)});
  }
  write_table(path, {"n", "iteration", "loss", "smoothed_loss"}, table);
}

} // namespace bks
