#pragma once

#include <cstdint>
#include <string>

#include "bks/buckets.hpp"
#include "bks/process_group.hpp"

namespace bks {

struct RunConfig {
  int rank = 0;
  int world = 1;
  Transport transport = Transport::loopback;
  std::string master_addr = "127.0.0.1:29500";
  std::string model = "tiny";
  std::uint64_t iterations = 100;
  // 0 means one bucket per parameter.
  std::size_t bucket_cap_bytes = kDefaultBucketCapBytes;
  bool find_unused = false;
  // Synchronise on iterations divisible by n; accumulate under no_sync
  // otherwise.
  std::uint64_t skip_sync_every = 1;
  int round_robin = 1;
  double alpha_ms = 0.0;
  // 0 disables the bandwidth term.
  double beta_bps = 0.0;
  std::uint64_t seed = 0;
  std::string out;
  bool overlap = true;
  double lr = 0.01;
  double momentum = 0.0;
  // Global rows per iteration; 0 takes the model's default.
  std::size_t batch_rows = 0;
  std::chrono::milliseconds timeout = kDefaultTimeout;
};

// Throws UsageError naming the first bad field.
void validate(const RunConfig& config);

// Fingerprint of every field that must agree across ranks (all but rank
// and output path).
std::uint64_t config_hash(const RunConfig& config);

std::string transport_name(Transport transport);
// Throws UsageError for anything but "loopback" or "tcp".
Transport parse_transport(const std::string& name);

// Loopback cost model, if alpha or beta is set.
std::optional<LatencyModel> latency_model(const RunConfig& config);

} // namespace bks
