#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bks/wire.hpp"

namespace bks::tcp {

using Clock = std::chrono::steady_clock;

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& other) noexcept;
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const {
    return fd_;
  }
  bool valid() const {
    return fd_ >= 0;
  }
  void close();
  // Wakes any thread blocked on this socket.
  void shutdown();

 private:
  int fd_ = -1;
};

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};

HostPort parse_host_port(const std::string& text);
std::string format_host_port(const HostPort& hp);

// Port 0 binds an ephemeral port.
Socket listen_on(const std::string& host, std::uint16_t port, int backlog);
std::uint16_t local_port(const Socket& s);
std::string local_ip(const Socket& s);
// Numeric IPv4 for a host name.
std::string resolve_ipv4(const std::string& host);

// Throws RendezvousError past the deadline.
Socket accept_until(const Socket& listener, Clock::time_point deadline);
// Retries refused connections until the deadline.
Socket connect_until(const HostPort& target, Clock::time_point deadline);

void set_nonblocking(const Socket& s);
void set_nodelay(const Socket& s);

// Framed I/O on non-blocking sockets. `idle_timeout` bounds the time
// without progress; errors name `peer`.
struct FrameOut {
  const Socket* socket = nullptr;
  wire::FrameHeader header;
  std::span<const std::byte> payload;
  int peer = -1;
};

struct FrameIn {
  const Socket* socket = nullptr;
  wire::FrameHeader* header = nullptr;
  std::vector<std::byte>* payload = nullptr;
  int peer = -1;
};

void transfer(
    FrameOut* out,
    FrameIn* in,
    std::chrono::milliseconds idle_timeout);

inline void send_frame(FrameOut out, std::chrono::milliseconds timeout) {
  transfer(&out, nullptr, timeout);
}
inline void recv_frame(FrameIn in, std::chrono::milliseconds timeout) {
  transfer(nullptr, &in, timeout);
}

} // namespace bks::tcp
