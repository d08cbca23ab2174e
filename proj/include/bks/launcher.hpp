#pragma once

#include <string>
#include <vector>

namespace bks {

struct ChildStatus {
  int rank = 0;
  int exit_code = 0;
  // Set when the child died from a signal.
  int term_signal = 0;
};

struct LaunchReport {
  bool ok = true;
  std::vector<ChildStatus> children;
  std::string message;
};

// Spawns `world` copies of `program`, appending "--rank r" to `args`.
// When a child fails the survivors are terminated and the report names
// the failed rank.
LaunchReport launch_local_world(
    const std::string& program,
    const std::vector<std::string>& args,
    int world);

} // namespace bks
