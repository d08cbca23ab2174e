#pragma once

#include <memory>

#include "bks/process_group.hpp"
#include "bks/ring.hpp"

namespace bks {

// Rank 0 listens on master_addr; peers send (rank, ring address); rank 0
// replies with the roster; then every rank dials its successor.
std::unique_ptr<RingLink> tcp_rendezvous(const GroupConfig& config);

} // namespace bks
