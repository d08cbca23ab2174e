#include <algorithm>
#include <chrono>
#include <numeric>
#include <thread>

#include <gtest/gtest.h>

#include "bks/errors.hpp"
#include "bks/process_group.hpp"
#include "bks/ring.hpp"
#include "bks/rng.hpp"
#include "bks/wire.hpp"
#include "collectives/loopback.hpp"
#include "support/oracles.hpp"
#include "support/rig.hpp"

namespace bks {
namespace {

using namespace std::chrono_literals;
using testing::loopback_world;

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) {
    x = rng.uniform(-1.0, 1.0);
  }
  return v;
}

TEST(Wire, HeaderLayoutIsBitExact) {
  wire::FrameHeader h;
  h.group_id = 0x04030201;
  h.op_seq = 0x0c0b0a0908070605ull;
  h.op_kind = wire::OpKind::allreduce_max_u8;
  h.phase = wire::Phase::all_gather;
  h.chunk_index = 0x100f0e0d;
  h.payload_len = 0x1817161514131211ull;
  const auto bytes = wire::encode_header(h);
  const std::uint8_t expected[wire::kHeaderSize] = {
      'B', 'K', 'S', '1', 0x01, 0x02, 0x03, 0x04, 0x05, 0x06,
      0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, 0x02, 0x01, 0x0d, 0x0e,
      0x0f, 0x10, 0x11, 0x12, 0x13, 0x14, 0x15, 0x16, 0x17, 0x18};
  for (std::size_t i = 0; i < wire::kHeaderSize; ++i) {
    EXPECT_EQ(static_cast<std::uint8_t>(bytes[i]), expected[i]) << "byte " << i;
  }
  EXPECT_EQ(wire::decode_header(bytes), h);
}

TEST(Wire, DecodeRejectsGarbage) {
  auto bytes = wire::encode_header({});
  bytes[0] = std::byte{'X'};
  EXPECT_THROW(wire::decode_header(bytes), ProtocolError);
  bytes = wire::encode_header({});
  bytes[16] = std::byte{7};
  EXPECT_THROW(wire::decode_header(bytes), ProtocolError);
  bytes = wire::encode_header({});
  bytes[17] = std::byte{2};
  EXPECT_THROW(wire::decode_header(bytes), ProtocolError);
}

TEST(Wire, RosterRoundTrip) {
  const std::vector<wire::RosterEntry> roster{{0, "127.0.0.1:4000"}, {1, "10.0.0.2:4001"}};
  const auto bytes = wire::encode_roster(roster);
  // rank u32 | addr_len u16 | address
  EXPECT_EQ(bytes.size(), 2 * 6 + 14 + 13);
  EXPECT_EQ(static_cast<std::uint8_t>(bytes[4]), 14);
  EXPECT_EQ(wire::decode_roster(bytes), roster);
  EXPECT_THROW(wire::decode_roster(std::span(bytes).first(bytes.size() - 1)), ProtocolError);
}

TEST(Ring, ChunkBoundsTile) {
  for (std::size_t n : {1u, 2u, 17u, 1000u, 65536u}) {
    for (int w = 1; w <= 8; ++w) {
      const auto b = ring_chunk_bounds(n, w);
      ASSERT_EQ(b.size(), static_cast<std::size_t>(w));
      EXPECT_EQ(b.front().first, 0u);
      EXPECT_EQ(b.back().second, n);
      std::size_t lo = n, hi = 0;
      for (int r = 0; r < w; ++r) {
        if (r > 0) {
          EXPECT_EQ(b[r].first, b[r - 1].second);
        }
        lo = std::min(lo, b[r].second - b[r].first);
        hi = std::max(hi, b[r].second - b[r].first);
      }
      EXPECT_LE(hi - lo, 1u);
    }
  }
  EXPECT_EQ(ring_chunk_bounds(17, 3), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 6}, {6, 12}, {12, 17}}));
}

// Counts exchanges on the way through.
class CountingLink : public RingLink {
 public:
  explicit CountingLink(std::unique_ptr<RingLink> inner) : inner_(std::move(inner)) {}
  int rank() const override { return inner_->rank(); }
  int world() const override { return inner_->world(); }
  void send(const wire::FrameHeader& h, std::span<const std::byte> p) override {
    ++sends;
    inner_->send(h, p);
  }
  void recv(wire::FrameHeader& h, std::vector<std::byte>& p) override {
    inner_->recv(h, p);
  }
  void exchange(const wire::FrameHeader& oh, std::span<const std::byte> op, wire::FrameHeader& ih,
                std::vector<std::byte>& ip) override {
    ++exchanges;
    inner_->exchange(oh, op, ih, ip);
  }
  void interrupt() override { inner_->interrupt(); }
  int exchanges = 0;
  int sends = 0;

 private:
  std::unique_ptr<RingLink> inner_;
};

TEST(Ring, AllreduceTakesTwoWorldMinusOneSteps) {
  for (int world : {2, 3, 5}) {
    auto hub = LoopbackHub::create();
    std::vector<int> counts(world);
    run_threads(world, [&](int rank) {
      CountingLink link(loopback_join(*hub, 0, rank, world, 5000ms));
      std::vector<double> data(17, 1.0);
      ring_allreduce_sum(link, RingOp{0, 0}, data);
      counts[rank] = link.exchanges + link.sends;
      for (double x : data) {
        EXPECT_EQ(x, world);
      }
    });
    for (int c : counts) {
      EXPECT_EQ(c, 2 * (world - 1));
    }
  }
}

TEST(Rendezvous, WorldOfOne) {
  GroupConfig c;
  const auto g = rendezvous(c);
  EXPECT_EQ(g->rank(), 0);
  EXPECT_EQ(g->world(), 1);
  std::vector<double> x{5, 5};
  g->allreduce_sum(x)->wait();
  EXPECT_EQ(x, (std::vector<double>{5, 5}));
  g->broadcast(x, 0)->wait();
  EXPECT_EQ(x, (std::vector<double>{5, 5}));
}

TEST(Rendezvous, LoopbackWorldOfFour) {
  const auto groups = loopback_world(4);
  for (int r = 0; r < 4; ++r) {
    EXPECT_EQ(groups[r]->rank(), r);
    EXPECT_EQ(groups[r]->world(), 4);
  }
}

TEST(Rendezvous, BadConfig) {
  GroupConfig c;
  c.world = 2;
  c.rank = 2;
  EXPECT_THROW(rendezvous(c), UsageError);
  c.world = 0;
  c.rank = 0;
  EXPECT_THROW(rendezvous(c), UsageError);
  EXPECT_EQ(kDefaultTimeout, 30000ms);
}

TEST(Rendezvous, LoopbackDuplicateRank) {
  auto hub = LoopbackHub::create();
  std::thread first([&] {
    GroupConfig c;
    c.world = 2;
    c.hub = hub;
    c.timeout = 2000ms;
    // Never completes: its partner is a duplicate.
    EXPECT_THROW(rendezvous(c), RendezvousError);
  });
  std::this_thread::sleep_for(100ms);
  GroupConfig dup;
  dup.world = 2;
  dup.hub = hub;
  dup.timeout = 2000ms;
  EXPECT_THROW(rendezvous(dup), ProtocolError);
  first.join();
}

TEST(Rendezvous, LoopbackTimeout) {
  GroupConfig c;
  c.world = 3;
  c.hub = LoopbackHub::create();
  c.timeout = 200ms;
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(rendezvous(c), RendezvousError);
  EXPECT_GE(std::chrono::steady_clock::now() - start, 200ms);
}

TEST(Broadcast, FromRankZero) {
  const auto groups = loopback_world(2);
  std::vector<std::vector<double>> data{{1, 2, 3}, {9, 9, 9}};
  run_threads(2, [&](int r) { groups[r]->broadcast(data[r], 0)->wait(); });
  EXPECT_EQ(data[0], (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(data[1], (std::vector<double>{1, 2, 3}));
}

TEST(Broadcast, RandomTensorAnySource) {
  Rng rng(7);
  const auto groups = loopback_world(4);
  for (int src = 0; src < 4; ++src) {
    std::vector<std::vector<double>> data(4);
    for (auto& d : data) {
      d = random_vector(rng, 1009);
    }
    const auto expected = data[src];
    run_threads(4, [&](int r) { groups[r]->broadcast(data[r], src)->wait(); });
    for (const auto& d : data) {
      EXPECT_EQ(d, expected);
    }
  }
}

TEST(Broadcast, ShapeMismatchNamesBothShapes) {
  const auto groups = loopback_world(2);
  std::vector<Tensor> t{Tensor::zeros({2, 3}), Tensor::zeros({3, 2})};
  std::vector<std::string> messages(2);
  run_threads(2, [&](int r) {
    try {
      broadcast_tensor(*groups[r], t[r], 0);
    } catch (const ProtocolError& e) {
      messages[r] = e.what();
    }
  });
  for (const auto& m : messages) {
    EXPECT_NE(m.find("[2,3]"), std::string::npos) << m;
    EXPECT_NE(m.find("[3,2]"), std::string::npos) << m;
  }
}

TEST(Allreduce, Examples) {
  const auto groups = loopback_world(2);
  std::vector<std::vector<double>> data{{1, 2}, {3, 4}};
  run_threads(2, [&](int r) { groups[r]->allreduce_sum(data[r])->wait(); });
  EXPECT_EQ(data[0], (std::vector<double>{4, 6}));
  EXPECT_EQ(data[1], (std::vector<double>{4, 6}));

  std::vector<std::vector<std::uint8_t>> bits{{1, 0, 0}, {0, 0, 1}};
  run_threads(2, [&](int r) { groups[r]->allreduce_max_u8(bits[r])->wait(); });
  EXPECT_EQ(bits[0], (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(bits[1], bits[0]);

  std::vector<std::vector<std::uint8_t>> zeros{{0, 0}, {0, 0}};
  run_threads(2, [&](int r) { groups[r]->allreduce_max_u8(zeros[r])->wait(); });
  EXPECT_EQ(zeros[0], (std::vector<std::uint8_t>{0, 0}));
}

TEST(Allreduce, MatchesLocalSumOracle) {
  Rng rng(17);
  for (int world = 1; world <= 8; ++world) {
    const auto groups = loopback_world(world);
    for (std::size_t n : {1u, 2u, 17u, 1000u, 65536u}) {
      std::vector<std::vector<double>> data(world);
      for (auto& d : data) {
        d = random_vector(rng, n);
      }
      const auto expected = testing::local_sum(data);
      run_threads(world, [&](int r) { groups[r]->allreduce_sum(data[r])->wait(); });
      for (int r = 0; r < world; ++r) {
        EXPECT_EQ(data[r], data[0]) << "ranks differ, world " << world << " n " << n;
      }
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_NEAR(data[0][i], expected[i], 1e-12) << "world " << world << " n " << n;
      }
    }
  }
}

TEST(Allreduce, IntegersAreExact) {
  const auto groups = loopback_world(5);
  std::vector<std::vector<double>> data(5, std::vector<double>(1000));
  for (int r = 0; r < 5; ++r) {
    std::iota(data[r].begin(), data[r].end(), 1e12 * r);
  }
  const auto expected = testing::local_sum(data);
  run_threads(5, [&](int r) { groups[r]->allreduce_sum(data[r])->wait(); });
  EXPECT_EQ(data[3], expected);
}

TEST(Allreduce, MaxMatchesOrOracle) {
  Rng rng(23);
  const auto groups = loopback_world(4);
  std::vector<std::vector<std::uint8_t>> bits(4, std::vector<std::uint8_t>(33));
  for (auto& b : bits) {
    for (auto& x : b) {
      x = rng.next_u64() & 1;
    }
  }
  const auto expected = testing::local_or(bits);
  run_threads(4, [&](int r) { groups[r]->allreduce_max_u8(bits[r])->wait(); });
  for (const auto& b : bits) {
    EXPECT_EQ(b, expected);
  }
}

TEST(Allreduce, LengthMismatchIsProtocolError) {
  // The rank that detects the mismatch stops; its partner times out.
  const auto groups = loopback_world(2, std::nullopt, LoopbackHub::create(), 0, 0, 1000ms);
  std::vector<std::vector<double>> data{std::vector<double>(5), std::vector<double>(6)};
  int failures = 0;
  std::mutex m;
  run_threads(2, [&](int r) {
    try {
      groups[r]->allreduce_sum(data[r])->wait();
    } catch (const ProtocolError&) {
      std::lock_guard lock(m);
      ++failures;
    } catch (const TransportError&) {
      // The partner may see the first rank bail out instead.
    }
  });
  EXPECT_GE(failures, 1);
}

TEST(Allreduce, OutOfOrderIssueIsCaught) {
  const auto groups = loopback_world(2);
  std::vector<std::string> errors(2);
  run_threads(2, [&](int r) {
    std::vector<double> a(8, 1.0), b(8, 2.0);
    // Rank 1 tags its ops as if issued in the opposite order.
    OpOptions first, second;
    if (r == 1) {
      first.op_seq = 1;
      second.op_seq = 0;
    }
    auto w1 = groups[r]->allreduce_sum(a, first);
    auto w2 = groups[r]->allreduce_sum(b, second);
    try {
      w1->wait();
      w2->wait();
    } catch (const ProtocolError& e) {
      errors[r] = e.what();
    } catch (const TransportError& e) {
      errors[r] = e.what();
    }
  });
  const bool any_protocol =
      errors[0].find("order mismatch") != std::string::npos ||
      errors[1].find("order mismatch") != std::string::npos;
  EXPECT_TRUE(any_protocol) << errors[0] << " | " << errors[1];
}

TEST(Work, CompletesInIssueOrder) {
  const auto groups = loopback_world(3);
  run_threads(3, [&](int r) {
    std::vector<std::vector<double>> bufs(20, std::vector<double>(100, r));
    std::vector<WorkPtr> works;
    for (auto& b : bufs) {
      works.push_back(groups[r]->allreduce_sum(b));
    }
    // Handles complete in issue order, so the last one implies the rest.
    works.back()->wait();
    for (const auto& w : works) {
      EXPECT_TRUE(w->completed());
    }
    for (std::size_t i = 0; i < works.size(); ++i) {
      EXPECT_EQ(works[i]->op_seq(), i);
      EXPECT_EQ(works[i]->state(), WorkState::done);
    }
  });
}

TEST(LoopbackCost, ClosedForm) {
  EXPECT_DOUBLE_EQ(loopback_cost({1e-3, 1e9}, 0), 1e-3);
  EXPECT_DOUBLE_EQ(loopback_cost({0.0, 1e9}, 1000000000), 1.0);
  EXPECT_DOUBLE_EQ(loopback_cost({2e-3, 0.0}, 12345), 2e-3);
  // 60M doubles in k equal ops: k·alpha + const, decreasing in op size.
  const LatencyModel m{1e-3, 1e10};
  const std::size_t total = 60'000'000;
  double previous = 1e300;
  for (std::size_t k : {60000u, 6000u, 600u, 60u, 6u, 1u}) {
    const double t = static_cast<double>(k) * loopback_cost(m, total / k * sizeof(double));
    EXPECT_LT(t, previous) << k;
    previous = t;
  }
}

TEST(LoopbackCost, AppliedPerCollective) {
  const auto groups = loopback_world(2, LatencyModel{0.05, 0.0});
  const auto start = std::chrono::steady_clock::now();
  run_threads(2, [&](int r) {
    std::vector<double> x(4, 1.0);
    groups[r]->allreduce_sum(x)->wait();
    groups[r]->allreduce_sum(x)->wait();
  });
  EXPECT_GE(std::chrono::steady_clock::now() - start, 100ms);
}

// Records the order in which ops reach it.
class RecordingGroup : public ProcessGroup {
 public:
  int rank() const override { return 0; }
  int world() const override { return 1; }
  WorkPtr broadcast(std::span<double>, int, OpOptions) override { return record(); }
  WorkPtr allreduce_sum(std::span<double>, OpOptions) override { return record(); }
  WorkPtr allreduce_max_u8(std::span<std::uint8_t>, OpOptions) override { return record(); }
  std::vector<int> ops;
  int* counter = nullptr;

 private:
  WorkPtr record() {
    ops.push_back((*counter)++);
    auto w = std::make_shared<Work>(ops.size() - 1);
    w->mark_done();
    return w;
  }
};

TEST(RoundRobin, DispatchesModuloN) {
  int counter = 0;
  std::vector<std::shared_ptr<RecordingGroup>> inner(3);
  std::vector<ProcessGroupPtr> as_groups;
  for (auto& g : inner) {
    g = std::make_shared<RecordingGroup>();
    g->counter = &counter;
    as_groups.push_back(g);
  }
  auto rr = round_robin_group(as_groups);
  std::vector<double> x(1);
  for (int i = 0; i < 6; ++i) {
    rr->allreduce_sum(x)->wait();
  }
  EXPECT_EQ(inner[0]->ops, (std::vector<int>{0, 3}));
  EXPECT_EQ(inner[1]->ops, (std::vector<int>{1, 4}));
  EXPECT_EQ(inner[2]->ops, (std::vector<int>{2, 5}));
  EXPECT_THROW(round_robin_group({}), UsageError);
}

TEST(RoundRobin, SingleInnerMatchesPlainGroup) {
  Rng rng(2);
  const auto groups = loopback_world(3, std::nullopt, LoopbackHub::create(), 0, 1);
  std::vector<std::vector<double>> data(3);
  for (auto& d : data) {
    d = random_vector(rng, 101);
  }
  const auto expected = testing::local_sum(data);
  run_threads(3, [&](int r) { groups[r]->allreduce_sum(data[r])->wait(); });
  for (std::size_t i = 0; i < 101; ++i) {
    EXPECT_NEAR(data[2][i], expected[i], 1e-12);
  }
}

TEST(RoundRobin, InnerGroupsOverlap) {
  const LatencyModel slow{0.1, 0.0};
  auto timed = [&](int n) {
    const auto groups = loopback_world(2, slow, LoopbackHub::create(), 0, n);
    const auto start = std::chrono::steady_clock::now();
    run_threads(2, [&](int r) {
      std::vector<std::vector<double>> bufs(3, std::vector<double>(64, 1.0));
      std::vector<WorkPtr> works;
      for (auto& b : bufs) {
        works.push_back(groups[r]->allreduce_sum(b));
      }
      for (auto& w : works) {
        w->wait();
      }
      for (auto& b : bufs) {
        EXPECT_EQ(b[0], 2.0);
      }
    });
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  const double one = timed(1);
  const double three = timed(3);
  EXPECT_GE(one, 0.3);
  EXPECT_LT(three, 0.6 * one);
}

TEST(Tcp, AllreduceAndBroadcast) {
  Rng rng(31);
  for (int world : {2, 3}) {
    const auto groups = testing::tcp_world(world, testing::free_port());
    std::vector<std::vector<double>> data(world);
    for (auto& d : data) {
      d = random_vector(rng, 1000);
    }
    const auto expected = testing::local_sum(data);
    run_threads(world, [&](int r) { groups[r]->allreduce_sum(data[r])->wait(); });
    for (int r = 0; r < world; ++r) {
      EXPECT_EQ(data[r], data[0]);
    }
    for (std::size_t i = 0; i < 1000; ++i) {
      ASSERT_NEAR(data[0][i], expected[i], 1e-12);
    }
    std::vector<std::vector<std::uint8_t>> bits(world, std::vector<std::uint8_t>(9, 0));
    bits[world - 1][4] = 1;
    run_threads(world, [&](int r) { groups[r]->allreduce_max_u8(bits[r])->wait(); });
    EXPECT_EQ(bits[0][4], 1);
    for (int r = 0; r < world; ++r) {
      data[r].assign(5, r);
    }
    run_threads(world, [&](int r) { groups[r]->broadcast(data[r], world - 1)->wait(); });
    EXPECT_EQ(data[0], std::vector<double>(5, world - 1));
  }
}

TEST(Tcp, MissingRankTimesOut) {
  const int port = testing::free_port();
  std::vector<std::string> errors(2);
  const auto start = std::chrono::steady_clock::now();
  run_threads(2, [&](int r) {
    GroupConfig c;
    c.rank = r;
    c.world = 3;
    c.transport = Transport::tcp;
    c.master_addr = "127.0.0.1:" + std::to_string(port);
    c.timeout = 1000ms;
    try {
      rendezvous(c);
    } catch (const RendezvousError& e) {
      errors[r] = e.what();
    }
  });
  EXPECT_FALSE(errors[0].empty());
  EXPECT_FALSE(errors[1].empty());
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(Tcp, DuplicateRankRejected) {
  const int port = testing::free_port();
  std::vector<int> protocol(3, 0);
  std::vector<int> ranks{0, 1, 1};
  run_threads(3, [&](int i) {
    GroupConfig c;
    c.rank = ranks[i];
    c.world = 3;
    c.transport = Transport::tcp;
    c.master_addr = "127.0.0.1:" + std::to_string(port);
    c.timeout = 2000ms;
    try {
      rendezvous(c);
    } catch (const ProtocolError&) {
      protocol[i] = 1;
    } catch (const Error&) {
    }
  });
  EXPECT_EQ(protocol[0], 1);
}

TEST(Tcp, PeerDisconnectNamesPeer) {
  auto groups = testing::tcp_world(2, testing::free_port());
  groups[1].reset();
  std::vector<double> x(10, 1.0);
  try {
    groups[0]->allreduce_sum(x)->wait();
    FAIL() << "expected a transport error";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.peer_rank(), 1) << e.what();
  }
}

TEST(Tcp, OutOfOrderIssueIsCaughtBySequenceCheck) {
  const auto groups = testing::tcp_world(2, testing::free_port());
  std::vector<std::string> errors(2);
  run_threads(2, [&](int r) {
    std::vector<double> a(8, 1.0), b(8, 2.0);
    OpOptions first, second;
    if (r == 1) {
      first.op_seq = 1;
      second.op_seq = 0;
    }
    auto w1 = groups[r]->allreduce_sum(a, first);
    auto w2 = groups[r]->allreduce_sum(b, second);
    try {
      w1->wait();
      w2->wait();
    } catch (const Error& e) {
      errors[r] = e.what();
    }
  });
  EXPECT_TRUE(
      errors[0].find("order mismatch") != std::string::npos ||
      errors[1].find("order mismatch") != std::string::npos)
      << errors[0] << " | " << errors[1];
}

} // namespace
} // namespace bks
