#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bks/csv.hpp"
#include "bks/run_config.hpp"

namespace bks {

struct BucketSweepRow {
  std::size_t cap_bytes = 0;
  std::size_t buckets = 0;
  LatencySummary latency;
  double mean_exposed_comm_s = 0.0;
};

// One in-process world per cap; summaries are taken from rank 0.
std::vector<BucketSweepRow> sweep_bucket_sizes(
    const RunConfig& base,
    const std::vector<std::size_t>& caps);
void write_bucket_sweep(const std::string& path, const std::vector<BucketSweepRow>& rows);

struct MicrobenchRow {
  std::size_t per_op_elements = 0;
  std::size_t ops = 0;
  double total_s = 0.0;
};

// Reduces `total_elements` split into ops of each per-op size, launching
// all ops before waiting on any. Best of `repeats` per size.
std::vector<MicrobenchRow> allreduce_microbench(
    const RunConfig& base,
    std::size_t total_elements,
    const std::vector<std::size_t>& per_op_sizes,
    int repeats = 3);
void write_microbench(const std::string& path, const std::vector<MicrobenchRow>& rows);

struct ConvergenceRow {
  std::uint64_t n = 0;
  std::uint64_t iteration = 0;
  // Mean over ranks of the local loss, i.e. the global-batch loss.
  double loss = 0.0;
  double smoothed_loss = 0.0;
};

inline constexpr std::size_t kSmoothingWindow = 25;

std::vector<ConvergenceRow> convergence_experiment(
    const RunConfig& base,
    const std::vector<std::uint64_t>& n_values);
void write_convergence(const std::string& path, const std::vector<ConvergenceRow>& rows);

// Trailing moving average; the first entries average what is available.
std::vector<double> moving_average(const std::vector<double>& values, std::size_t window);

} // namespace bks
