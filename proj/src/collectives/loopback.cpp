#include "loopback.hpp"

#include <atomic>
#include <cstring>
#include <deque>
#include <map>

#include "bks/errors.hpp"

namespace bks {

namespace {

using Clock = std::chrono::steady_clock;

struct Frame {
  wire::HeaderBytes header;
  std::vector<std::byte> payload;
};

struct Mailbox {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<Frame> frames;
  bool interrupted = false;
};

struct GroupState {
  explicit GroupState(int world_size)
      : world(world_size), joined(static_cast<std::size_t>(world_size)) {
    for (int i = 0; i < world_size; ++i) {
      mailboxes.push_back(std::make_unique<Mailbox>());
    }
  }

  const int world;
  std::vector<bool> joined;
  int joined_count = 0;
  std::vector<std::unique_ptr<Mailbox>> mailboxes;
};

} // namespace

struct LoopbackHub::Impl {
  std::mutex mutex;
  std::condition_variable cv;
  // Groups still forming, by group id; removed once complete so the id can
  // be reused.
  std::map<std::uint32_t, std::shared_ptr<GroupState>> forming;
  std::vector<std::weak_ptr<GroupState>> live;
  std::atomic<bool> aborted{false};
  std::string abort_reason;

  void abort(const std::string& reason) {
    std::vector<std::shared_ptr<GroupState>> groups;
    {
      std::lock_guard<std::mutex> lock(mutex);
      if (!aborted.exchange(true)) {
        abort_reason = reason;
      }
      for (auto& weak : live) {
        if (auto g = weak.lock()) {
          groups.push_back(std::move(g));
        }
      }
    }
    cv.notify_all();
    for (auto& g : groups) {
      for (auto& box : g->mailboxes) {
        std::lock_guard<std::mutex> lock(box->mutex);
        box->cv.notify_all();
      }
    }
  }

  std::string reason() {
    std::lock_guard<std::mutex> lock(mutex);
    return abort_reason;
  }
};

namespace {

class LoopbackLink final : public RingLink {
 public:
  LoopbackLink(
      std::shared_ptr<LoopbackHub::Impl> hub,
      std::shared_ptr<GroupState> group,
      int rank,
      std::chrono::milliseconds timeout)
      : hub_(std::move(hub)),
        group_(std::move(group)),
        rank_(rank),
        timeout_(timeout) {}

  int rank() const override {
    return rank_;
  }
  int world() const override {
    return group_->world;
  }

  void send(
      const wire::FrameHeader& header,
      std::span<const std::byte> payload) override {
    Frame frame{
        wire::encode_header(header),
        std::vector<std::byte>(payload.begin(), payload.end())};
    auto& box = *group_->mailboxes[static_cast<std::size_t>(successor())];
    {
      std::lock_guard<std::mutex> lock(box.mutex);
      box.frames.push_back(std::move(frame));
    }
    box.cv.notify_all();
  }

  void recv(wire::FrameHeader& header, std::vector<std::byte>& payload)
      override {
    auto& box = *group_->mailboxes[static_cast<std::size_t>(rank_)];
    std::unique_lock<std::mutex> lock(box.mutex);
    const auto deadline = Clock::now() + timeout_;
    const bool got = box.cv.wait_until(lock, deadline, [&] {
      return !box.frames.empty() || box.interrupted || hub_->aborted.load();
    });
    if (hub_->aborted.load()) {
      throw TransportError(
          detail::str("loopback hub aborted: ", hub_->reason()),
          predecessor());
    }
    if (box.interrupted) {
      throw TransportError("loopback link interrupted", predecessor());
    }
    if (!got) {
      throw TransportError(
          detail::str(
              "timed out after ",
              timeout_.count(),
              " ms waiting for rank ",
              predecessor()),
          predecessor());
    }
    Frame frame = std::move(box.frames.front());
    box.frames.pop_front();
    lock.unlock();
    header = wire::decode_header(frame.header);
    BKS_CHECK(
        header.payload_len == frame.payload.size(),
        ProtocolError,
        "frame length field disagrees with payload");
    payload = std::move(frame.payload);
  }

  void exchange(
      const wire::FrameHeader& out_header,
      std::span<const std::byte> out_payload,
      wire::FrameHeader& in_header,
      std::vector<std::byte>& in_payload) override {
    // Mailboxes are unbounded, so sending first cannot deadlock.
    send(out_header, out_payload);
    recv(in_header, in_payload);
  }

  void interrupt() override {
    auto& box = *group_->mailboxes[static_cast<std::size_t>(rank_)];
    {
      std::lock_guard<std::mutex> lock(box.mutex);
      box.interrupted = true;
    }
    box.cv.notify_all();
  }

 private:
  std::shared_ptr<LoopbackHub::Impl> hub_;
  std::shared_ptr<GroupState> group_;
  const int rank_;
  const std::chrono::milliseconds timeout_;
};

} // namespace

LoopbackHub::LoopbackHub() : impl_(std::make_shared<Impl>()) {}

std::shared_ptr<LoopbackHub> LoopbackHub::create() {
  return std::shared_ptr<LoopbackHub>(new LoopbackHub());
}

std::shared_ptr<LoopbackHub> LoopbackHub::process_default() {
  static auto hub = create();
  return hub;
}

void LoopbackHub::abort(const std::string& reason) {
  impl_->abort(reason);
}

std::unique_ptr<RingLink> loopback_join(
    LoopbackHub& hub,
    std::uint32_t group_id,
    int rank,
    int world,
    std::chrono::milliseconds timeout) {
  auto impl_ptr = hub.impl();
  auto& impl = *impl_ptr;
  std::unique_lock<std::mutex> lock(impl.mutex);
  BKS_CHECK(!impl.aborted.load(), RendezvousError, "loopback hub aborted");

  auto& slot = impl.forming[group_id];
  if (!slot) {
    slot = std::make_shared<GroupState>(world);
    std::erase_if(impl.live, [](const auto& w) { return w.expired(); });
    impl.live.push_back(slot);
  }
  auto group = slot;
  BKS_CHECK(
      group->world == world,
      ProtocolError,
      "group ",
      group_id,
      ": rank ",
      rank,
      " joined with world ",
      world,
      " but the group was formed with world ",
      group->world);
  BKS_CHECK(
      !group->joined[static_cast<std::size_t>(rank)],
      ProtocolError,
      "group ",
      group_id,
      ": duplicate rank ",
      rank);
  group->joined[static_cast<std::size_t>(rank)] = true;
  if (++group->joined_count == world) {
    impl.forming.erase(group_id);
    impl.cv.notify_all();
  } else {
    const bool complete = impl.cv.wait_for(lock, timeout, [&] {
      return group->joined_count == world || impl.aborted.load();
    });
    if (!complete || group->joined_count != world) {
      group->joined[static_cast<std::size_t>(rank)] = false;
      --group->joined_count;
      throw RendezvousError(detail::str(
          "group ",
          group_id,
          ": rank ",
          rank,
          " timed out after ",
          timeout.count(),
          " ms with ",
          group->joined_count + 1,
          "/",
          world,
          " ranks joined"));
    }
  }
  return std::make_unique<LoopbackLink>(
      std::move(impl_ptr),
      std::move(group),
      rank,
      timeout);
}

} // namespace bks
