#pragma once

#include <string>
#include <vector>

#include "bks/mlp.hpp"

namespace bks {

struct ZooEntry {
  std::string name;
  MlpSpec spec;
  // Global batch rows per iteration, split evenly across ranks.
  std::size_t batch_rows;
};

// tiny      [16,32,8]
// gated     rank 0 skips branch0 on odd iterations; branch1 is never used
// buffered  running-mean input buffer
// inverted  registration order equals gradient-ready order
// wide      bench model for overlap and bucket-size sweeps
// deep      eight equal square layers, for round-robin runs
const std::vector<ZooEntry>& model_zoo();
// Throws UsageError for unknown names.
const ZooEntry& zoo_model(const std::string& name);

} // namespace bks
