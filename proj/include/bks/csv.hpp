#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace bks {

// One row of the per-iteration CSV. All times in seconds.
struct IterationRecord {
  std::uint64_t iteration = 0;
  double forward_s = 0.0;
  double backward_compute_s = 0.0;
  double backward_comm_exposed_s = 0.0;
  double optimizer_s = 0.0;
  double total_s = 0.0;
  double loss = 0.0;

  bool operator==(const IterationRecord&) const = default;
};

inline constexpr const char* kRecordHeader =
    "iteration,forward_s,backward_compute_s,backward_comm_exposed_s,"
    "optimizer_s,total_s,loss";

// Leading iterations left out of every summary.
inline constexpr std::uint64_t kWarmupIterations = 5;

// Doubles are printed with 17 significant digits so rows parse back
// exactly.
void write_records(std::ostream& out, const std::vector<IterationRecord>& records);
void write_records(const std::string& path, const std::vector<IterationRecord>& records);
// Throws UsageError on a bad header or malformed row.
std::vector<IterationRecord> read_records(std::istream& in);
std::vector<IterationRecord> read_records(const std::string& path);

struct LatencySummary {
  std::size_t samples = 0;
  double mean_s = 0.0;
  double p50_s = 0.0;
  double p95_s = 0.0;
};

// Over total_s, skipping warm-up iterations.
LatencySummary summarize(const std::vector<IterationRecord>& records);

// Nearest-rank percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> values, double q);

// Generic writer for the sweep outputs: header row then data rows.
void write_table(
    const std::string& path,
    const std::vector<std::string>& header,
    const std::vector<std::vector<std::string>>& rows);
std::string format_double(double value);

} // namespace bks
