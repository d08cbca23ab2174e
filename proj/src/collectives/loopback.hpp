#pragma once

#include <chrono>
#include <memory>

#include "bks/process_group.hpp"
#include "bks/ring.hpp"

namespace bks {

// Blocks until all ranks of `group_id` have joined `hub`, then returns a
// ring link backed by in-memory mailboxes.
std::unique_ptr<RingLink> loopback_join(
    LoopbackHub& hub,
    std::uint32_t group_id,
    int rank,
    int world,
    std::chrono::milliseconds timeout);

} // namespace bks
