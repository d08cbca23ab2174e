#include "bks/run_config.hpp"

#include <sstream>

#include "bks/errors.hpp"
#include "bks/zoo.hpp"

namespace bks {

void validate(const RunConfig& c) {
  BKS_CHECK(c.world >= 1, UsageError, "world must be >= 1, got ", c.world);
  BKS_CHECK(
      c.rank >= 0 && c.rank < c.world,
      UsageError,
      "rank ",
      c.rank,
      " out of range for world ",
      c.world);
  BKS_CHECK(c.iterations >= 1, UsageError, "iterations must be >= 1");
  BKS_CHECK(
      c.bucket_cap_bytes == 0 || c.bucket_cap_bytes >= sizeof(double),
      UsageError,
      "bucket cap must be 0 or at least ",
      sizeof(double),
      " bytes, got ",
      c.bucket_cap_bytes);
  BKS_CHECK(c.skip_sync_every >= 1, UsageError, "skip-sync-every must be >= 1");
  BKS_CHECK(c.round_robin >= 1, UsageError, "round-robin must be >= 1");
  BKS_CHECK(c.alpha_ms >= 0.0, UsageError, "alpha-ms must be >= 0");
  BKS_CHECK(c.beta_bps >= 0.0, UsageError, "beta-bps must be >= 0");
  BKS_CHECK(c.lr > 0.0, UsageError, "lr must be positive, got ", c.lr);
  BKS_CHECK(
      c.momentum >= 0.0 && c.momentum < 1.0,
      UsageError,
      "momentum must be in [0, 1), got ",
      c.momentum);
  if (c.transport == Transport::tcp && c.world > 1) {
    BKS_CHECK(!c.master_addr.empty(), UsageError, "tcp needs --master-addr");
  }
  const auto& entry = zoo_model(c.model);
  const std::size_t rows = c.batch_rows ? c.batch_rows : entry.batch_rows;
  BKS_CHECK(
      rows % static_cast<std::size_t>(c.world) == 0,
      UsageError,
      "batch of ",
      rows,
      " rows does not split evenly over ",
      c.world,
      " ranks");
}

std::uint64_t config_hash(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << c.world << '|' << transport_name(c.transport) << '|' << c.master_addr
     << '|' << c.model << '|' << c.iterations << '|' << c.bucket_cap_bytes
     << '|' << c.find_unused << '|' << c.skip_sync_every << '|'
     << c.round_robin << '|' << c.alpha_ms << '|' << c.beta_bps << '|'
     << c.seed << '|' << c.overlap << '|' << c.lr << '|' << c.momentum << '|'
     << c.batch_rows;
  // FNV-1a
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string transport_name(Transport transport) {
  return transport == Transport::tcp ? "tcp" : "loopback";
}

Transport parse_transport(const std::string& name) {
  if (name == "loopback") {
    return Transport::loopback;
  }
  if (name == "tcp") {
    return Transport::tcp;
  }
  throw UsageError(
      detail::str("unknown transport '", name, "' (expected loopback or tcp)"));
}

std::optional<LatencyModel> latency_model(const RunConfig& c) {
  if (c.alpha_ms <= 0.0 && c.beta_bps <= 0.0) {
    return std::nullopt;
  }
  return LatencyModel{c.alpha_ms / 1000.0, c.beta_bps};
}

} // namespace bks
