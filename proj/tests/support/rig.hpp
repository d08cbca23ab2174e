#pragma once

#include <functional>
#include <future>
#include <optional>
#include <vector>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "bks/experiment.hpp"
#include "bks/process_group.hpp"

namespace bks::testing {

// Forms `world` loopback groups on a private hub, one per thread.
inline std::vector<ProcessGroupPtr> loopback_world(
    int world,
    std::optional<LatencyModel> latency = std::nullopt,
    std::shared_ptr<LoopbackHub> hub = LoopbackHub::create(),
    std::uint32_t group_id = 0,
    int round_robin = 0,
    std::chrono::milliseconds timeout = kDefaultTimeout) {
  std::vector<ProcessGroupPtr> groups(static_cast<std::size_t>(world));
  run_threads(world, [&](int rank) {
    GroupConfig c;
    c.rank = rank;
    c.world = world;
    c.group_id = group_id;
    c.timeout = timeout;
    c.latency_model = latency;
    c.hub = hub;
    groups[static_cast<std::size_t>(rank)] =
        round_robin > 0 ? rendezvous_round_robin(c, round_robin) : rendezvous(c);
  });
  return groups;
}

// A localhost port that was free a moment ago.
inline int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

inline std::vector<ProcessGroupPtr> tcp_world(int world, int port, int round_robin = 0) {
  std::vector<ProcessGroupPtr> groups(static_cast<std::size_t>(world));
  run_threads(world, [&](int rank) {
    GroupConfig c;
    c.rank = rank;
    c.world = world;
    c.transport = Transport::tcp;
    c.master_addr = "127.0.0.1:" + std::to_string(port);
    c.timeout = std::chrono::milliseconds(10000);
    groups[static_cast<std::size_t>(rank)] =
        round_robin > 0 ? rendezvous_round_robin(c, round_robin) : rendezvous(c);
  });
  return groups;
}

// Runs fn on a thread and reports whether it finished within `limit`.
// A hung thread is detached; callers must arrange for it to unblock.
inline bool finishes_within(std::chrono::milliseconds limit, std::function<void()> fn) {
  auto task = std::make_shared<std::packaged_task<void()>>(std::move(fn));
  auto fut = task->get_future();
  std::thread([task] { (*task)(); }).detach();
  if (fut.wait_for(limit) != std::future_status::ready) {
    return false;
  }
  fut.get();
  return true;
}

} // namespace bks::testing
