#include "tcp_socket.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "bks/errors.hpp"

namespace bks::tcp {

namespace {

// Upper bound on a single frame payload; anything larger is a corrupt
// header rather than a real tensor at this scale.
constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 36;

std::string errno_str() {
  return std::strerror(errno);
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const auto ip = resolve_ipv4(host);
  BKS_CHECK(
      ::inet_pton(AF_INET, ip.c_str(), &addr.sin_addr) == 1,
      UsageError,
      "bad IPv4 address ",
      ip);
  return addr;
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
      deadline - Clock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

} // namespace

Socket::~Socket() {
  close();
}

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) {
  other.fd_ = -1;
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
  }
}

HostPort parse_host_port(const std::string& text) {
  const auto colon = text.rfind(':');
  BKS_CHECK(
      colon != std::string::npos && colon > 0 && colon + 1 < text.size(),
      UsageError,
      "expected HOST:PORT, got '",
      text,
      "'");
  HostPort hp;
  hp.host = text.substr(0, colon);
  const auto port = std::stoul(text.substr(colon + 1));
  BKS_CHECK(port <= 65535, UsageError, "port out of range in '", text, "'");
  hp.port = static_cast<std::uint16_t>(port);
  return hp;
}

std::string format_host_port(const HostPort& hp) {
  return hp.host + ":" + std::to_string(hp.port);
}

std::string resolve_ipv4(const std::string& host) {
  in_addr probe{};
  if (::inet_pton(AF_INET, host.c_str(), &probe) == 1) {
    return host;
  }
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res);
  BKS_CHECK(
      rc == 0 && res != nullptr,
      UsageError,
      "cannot resolve host '",
      host,
      "': ",
      ::gai_strerror(rc));
  char buf[INET_ADDRSTRLEN] = {};
  const auto* sin = reinterpret_cast<const sockaddr_in*>(res->ai_addr);
  ::inet_ntop(AF_INET, &sin->sin_addr, buf, sizeof(buf));
  ::freeaddrinfo(res);
  return buf;
}

Socket listen_on(const std::string& host, std::uint16_t port, int backlog) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) {
    throw TransportError(detail::str("socket(): ", errno_str()), -1);
  }
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  auto addr = make_addr(host, port);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw RendezvousError(detail::str(
        "cannot bind ", host, ":", port, ": ", errno_str()));
  }
  BKS_CHECK(
      ::listen(s.fd(), backlog) == 0,
      RendezvousError,
      "listen(): ",
      errno_str());
  return s;
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

std::string local_ip(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof(buf));
  return buf;
}

Socket accept_until(const Socket& listener, Clock::time_point deadline) {
  while (true) {
    pollfd pfd{listener.fd(), POLLIN, 0};
    const int ms = remaining_ms(deadline);
    if (ms == 0) {
      throw RendezvousError("timed out waiting for peers to connect");
    }
    const int rc = ::poll(&pfd, 1, ms);
    if (rc < 0 && errno == EINTR) {
      continue;
    }
    BKS_CHECK(rc >= 0, RendezvousError, "poll(): ", errno_str());
    if (rc == 0) {
      throw RendezvousError("timed out waiting for peers to connect");
    }
    Socket s(::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC));
    if (s.valid()) {
      set_nodelay(s);
      return s;
    }
    if (errno != EINTR && errno != EAGAIN && errno != ECONNABORTED) {
      throw RendezvousError(detail::str("accept(): ", errno_str()));
    }
  }
}

Socket connect_until(const HostPort& target, Clock::time_point deadline) {
  const auto addr = make_addr(target.host, target.port);
  while (true) {
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) {
    throw TransportError(detail::str("socket(): ", errno_str()), -1);
  }
    if (::connect(
            s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) ==
        0) {
      set_nodelay(s);
      return s;
    }
    if (errno != ECONNREFUSED && errno != EINTR && errno != ETIMEDOUT &&
        errno != ECONNRESET) {
      throw RendezvousError(detail::str(
          "connect to ", format_host_port(target), ": ", errno_str()));
    }
    if (Clock::now() >= deadline) {
      throw RendezvousError(detail::str(
          "timed out connecting to ", format_host_port(target)));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void set_nonblocking(const Socket& s) {
  const int flags = ::fcntl(s.fd(), F_GETFL, 0);
  ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
}

void set_nodelay(const Socket& s) {
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

void transfer(
    FrameOut* out,
    FrameIn* in,
    std::chrono::milliseconds idle_timeout) {
  wire::HeaderBytes out_header{};
  std::size_t out_sent = 0;
  std::size_t out_total = 0;
  if (out) {
    out_header = wire::encode_header(out->header);
    out_total = wire::kHeaderSize + out->payload.size();
  }

  wire::HeaderBytes in_header{};
  std::size_t in_got = 0;
  bool in_header_done = false;
  std::size_t in_total = wire::kHeaderSize;

  auto deadline = Clock::now() + idle_timeout;
  auto out_done = [&] { return !out || out_sent == out_total; };
  auto in_done = [&] { return !in || (in_header_done && in_got == in_total); };

  while (!out_done() || !in_done()) {
    pollfd fds[2];
    nfds_t n = 0;
    int out_slot = -1;
    int in_slot = -1;
    if (!out_done()) {
      fds[n] = {out->socket->fd(), POLLOUT, 0};
      out_slot = static_cast<int>(n++);
    }
    if (!in_done()) {
      fds[n] = {in->socket->fd(), POLLIN, 0};
      in_slot = static_cast<int>(n++);
    }
    const int ms = remaining_ms(deadline);
    const int rc = ms == 0 ? 0 : ::poll(fds, n, ms);
    if (rc < 0 && errno == EINTR) {
      continue;
    }
    if (rc < 0) {
      throw TransportError(detail::str("poll(): ", errno_str()), -1);
    }
    if (rc == 0) {
      const int peer = !in_done() ? in->peer : out->peer;
      throw TransportError(
          detail::str(
              "no progress for ",
              idle_timeout.count(),
              " ms talking to rank ",
              peer),
          peer);
    }

    bool progressed = false;
    if (out_slot >= 0 && fds[out_slot].revents != 0) {
      while (out_sent < out_total) {
        const std::byte* src;
        std::size_t len;
        if (out_sent < wire::kHeaderSize) {
          src = out_header.data() + out_sent;
          len = wire::kHeaderSize - out_sent;
        } else {
          src = out->payload.data() + (out_sent - wire::kHeaderSize);
          len = out_total - out_sent;
        }
        const ssize_t k = ::send(out->socket->fd(), src, len, MSG_NOSIGNAL);
        if (k > 0) {
          out_sent += static_cast<std::size_t>(k);
          progressed = true;
          continue;
        }
        if (k < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
          break;
        }
        if (k < 0 && errno == EINTR) {
          continue;
        }
        throw TransportError(
            detail::str("send to rank ", out->peer, " failed: ", errno_str()),
            out->peer);
      }
    }
    if (in_slot >= 0 && fds[in_slot].revents != 0) {
      while (!in_done()) {
        std::byte* dst;
        std::size_t len;
        if (!in_header_done) {
          dst = in_header.data() + in_got;
          len = wire::kHeaderSize - in_got;
        } else {
          dst = in->payload->data() + (in_got - wire::kHeaderSize);
          len = in_total - in_got;
        }
        const ssize_t k = ::recv(in->socket->fd(), dst, len, 0);
        if (k > 0) {
          in_got += static_cast<std::size_t>(k);
          progressed = true;
          if (!in_header_done && in_got == wire::kHeaderSize) {
            *in->header = wire::decode_header(in_header);
            BKS_CHECK(
                in->header->payload_len <= kMaxPayloadBytes,
                ProtocolError,
                "frame from rank ",
                in->peer,
                " claims ",
                in->header->payload_len,
                " payload bytes");
            in_header_done = true;
            in_total = wire::kHeaderSize + in->header->payload_len;
            in->payload->resize(in->header->payload_len);
          }
          continue;
        }
        if (k == 0) {
          throw TransportError(
              detail::str("rank ", in->peer, " closed the connection"),
              in->peer);
        }
        if (errno == EAGAIN || errno == EWOULDBLOCK) {
          break;
        }
        if (errno == EINTR) {
          continue;
        }
        throw TransportError(
            detail::str("recv from rank ", in->peer, " failed: ", errno_str()),
            in->peer);
      }
    }
    if (progressed) {
      deadline = Clock::now() + idle_timeout;
    }
  }
}

} // namespace bks::tcp
