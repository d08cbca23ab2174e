#include "tcp_transport.hpp"

#include <map>

#include "bks/errors.hpp"
#include "tcp_socket.hpp"

namespace bks {

namespace {

using tcp::Clock;
using tcp::Socket;
using wire::FrameHeader;
using wire::OpKind;

FrameHeader rendezvous_header(std::uint32_t group_id, std::size_t payload) {
  FrameHeader h;
  h.group_id = group_id;
  h.op_kind = OpKind::rendezvous;
  h.payload_len = payload;
  return h;
}

void send_entries(
    const Socket& s,
    std::uint32_t group_id,
    std::span<const wire::RosterEntry> entries,
    int peer,
    std::chrono::milliseconds timeout) {
  const auto payload = wire::encode_roster(entries);
  tcp::send_frame(
      {&s, rendezvous_header(group_id, payload.size()), payload, peer},
      timeout);
}

std::vector<wire::RosterEntry> recv_entries(
    const Socket& s,
    std::uint32_t group_id,
    int peer,
    std::chrono::milliseconds timeout) {
  FrameHeader h;
  std::vector<std::byte> payload;
  try {
    tcp::recv_frame({&s, &h, &payload, peer}, timeout);
  } catch (const TransportError& e) {
    throw RendezvousError(detail::str("rendezvous failed: ", e.what()));
  }
  BKS_CHECK(
      h.op_kind == OpKind::rendezvous,
      ProtocolError,
      "expected rendezvous frame, got ",
      wire::describe(h));
  BKS_CHECK(
      h.group_id == group_id,
      ProtocolError,
      "rendezvous for group ",
      h.group_id,
      " arrived at group ",
      group_id);
  return wire::decode_roster(payload);
}

class TcpLink final : public RingLink {
 public:
  TcpLink(
      int rank,
      int world,
      Socket to_successor,
      Socket from_predecessor,
      std::chrono::milliseconds timeout)
      : rank_(rank),
        world_(world),
        out_(std::move(to_successor)),
        in_(std::move(from_predecessor)),
        timeout_(timeout) {}

  int rank() const override {
    return rank_;
  }
  int world() const override {
    return world_;
  }

  void send(const FrameHeader& header, std::span<const std::byte> payload)
      override {
    tcp::send_frame({&out_, header, payload, successor()}, timeout_);
  }

  void recv(FrameHeader& header, std::vector<std::byte>& payload) override {
    tcp::recv_frame({&in_, &header, &payload, predecessor()}, timeout_);
  }

  void exchange(
      const FrameHeader& out_header,
      std::span<const std::byte> out_payload,
      FrameHeader& in_header,
      std::vector<std::byte>& in_payload) override {
    tcp::FrameOut out{&out_, out_header, out_payload, successor()};
    tcp::FrameIn in{&in_, &in_header, &in_payload, predecessor()};
    tcp::transfer(&out, &in, timeout_);
  }

  void interrupt() override {
    in_.shutdown();
    out_.shutdown();
  }

 private:
  const int rank_;
  const int world_;
  Socket out_;
  Socket in_;
  const std::chrono::milliseconds timeout_;
};

} // namespace

std::unique_ptr<RingLink> tcp_rendezvous(const GroupConfig& config) {
  BKS_CHECK(
      !config.master_addr.empty(),
      UsageError,
      "tcp transport needs master_addr");
  const auto master = tcp::parse_host_port(config.master_addr);
  const auto deadline = Clock::now() + config.timeout;
  const auto timeout = config.timeout;
  const int rank = config.rank;
  const int world = config.world;
  const auto gid = config.group_id;

  std::vector<wire::RosterEntry> roster;
  Socket ring_listener;

  if (rank == 0) {
    Socket hub = tcp::listen_on("0.0.0.0", master.port, world + 4);
    const auto my_ip = tcp::resolve_ipv4(master.host);
    ring_listener = tcp::listen_on("0.0.0.0", 0, 4);
    std::map<std::uint32_t, wire::RosterEntry> joined;
    joined[0] = {0, my_ip + ":" + std::to_string(tcp::local_port(ring_listener))};
    std::map<std::uint32_t, Socket> peers;
    while (static_cast<int>(joined.size()) < world) {
      Socket conn;
      try {
        conn = tcp::accept_until(hub, deadline);
      } catch (const RendezvousError&) {
        throw RendezvousError(detail::str(
            "group ",
            gid,
            ": rendezvous timed out after ",
            timeout.count(),
            " ms with ",
            joined.size(),
            "/",
            world,
            " ranks joined"));
      }
      tcp::set_nonblocking(conn);
      auto hello = recv_entries(conn, gid, -1, timeout);
      BKS_CHECK(
          hello.size() == 1,
          ProtocolError,
          "rendezvous hello must carry one entry");
      const auto peer_rank = hello[0].rank;
      BKS_CHECK(
          peer_rank > 0 && static_cast<int>(peer_rank) < world,
          ProtocolError,
          "rendezvous: rank ",
          peer_rank,
          " out of range for world ",
          world);
      BKS_CHECK(
          !joined.contains(peer_rank),
          ProtocolError,
          "rendezvous: duplicate rank ",
          peer_rank);
      joined[peer_rank] = hello[0];
      peers[peer_rank] = std::move(conn);
    }
    for (auto& [r, entry] : joined) {
      roster.push_back(entry);
    }
    for (auto& [r, conn] : peers) {
      send_entries(conn, gid, roster, static_cast<int>(r), timeout);
    }
  } else {
    ring_listener = tcp::listen_on("0.0.0.0", 0, 4);
    Socket conn = tcp::connect_until(master, deadline);
    tcp::set_nonblocking(conn);
    const wire::RosterEntry me{
        static_cast<std::uint32_t>(rank),
        tcp::local_ip(conn) + ":" +
            std::to_string(tcp::local_port(ring_listener))};
    send_entries(conn, gid, std::span(&me, 1), 0, timeout);
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - Clock::now());
    roster = recv_entries(
        conn, gid, 0, std::max(remaining, std::chrono::milliseconds(1)));
    BKS_CHECK(
        static_cast<int>(roster.size()) == world,
        ProtocolError,
        "roster lists ",
        roster.size(),
        " ranks, expected ",
        world);
  }

  // Dial the successor, accept the predecessor, and check both identities.
  const int succ = (rank + 1) % world;
  const int pred = (rank + world - 1) % world;
  Socket out = tcp::connect_until(
      tcp::parse_host_port(roster[static_cast<std::size_t>(succ)].address),
      deadline);
  tcp::set_nonblocking(out);
  const wire::RosterEntry me{
      static_cast<std::uint32_t>(rank),
      roster[static_cast<std::size_t>(rank)].address};
  send_entries(out, gid, std::span(&me, 1), succ, timeout);

  Socket in = tcp::accept_until(ring_listener, deadline);
  tcp::set_nonblocking(in);
  const auto hello = recv_entries(in, gid, pred, timeout);
  BKS_CHECK(
      hello.size() == 1 && static_cast<int>(hello[0].rank) == pred,
      ProtocolError,
      "ring hello from unexpected rank");

  return std::make_unique<TcpLink>(
      rank, world, std::move(out), std::move(in), timeout);
}

} // namespace bks
