#include "bks/errors.hpp"
#include "bks/process_group.hpp"

namespace bks {

namespace {

class RoundRobinProcessGroup final : public ProcessGroup {
 public:
  explicit RoundRobinProcessGroup(std::vector<ProcessGroupPtr> groups)
      : groups_(std::move(groups)) {}

  int rank() const override {
    return groups_.front()->rank();
  }
  int world() const override {
    return groups_.front()->world();
  }

  WorkPtr broadcast(std::span<double> data, int src_rank, OpOptions options)
      override {
    return next().broadcast(data, src_rank, options);
  }
  WorkPtr allreduce_sum(std::span<double> data, OpOptions options) override {
    return next().allreduce_sum(data, options);
  }
  WorkPtr allreduce_max_u8(std::span<std::uint8_t> data, OpOptions options)
      override {
    return next().allreduce_max_u8(data, options);
  }

 private:
  ProcessGroup& next() {
    return *groups_[issued_++ % groups_.size()];
  }

  std::vector<ProcessGroupPtr> groups_;
  std::size_t issued_ = 0;
};

} // namespace

ProcessGroupPtr round_robin_group(std::vector<ProcessGroupPtr> groups) {
  BKS_CHECK(
      !groups.empty(), UsageError, "round_robin_group needs at least one group");
  for (const auto& g : groups) {
    BKS_CHECK(g != nullptr, UsageError, "round_robin_group: null inner group");
    BKS_CHECK(
        g->rank() == groups.front()->rank() &&
            g->world() == groups.front()->world(),
        UsageError,
        "round_robin_group: inner groups disagree on (rank, world): (",
        groups.front()->rank(),
        ", ",
        groups.front()->world(),
        ") vs (",
        g->rank(),
        ", ",
        g->world(),
        ")");
  }
  return std::make_shared<RoundRobinProcessGroup>(std::move(groups));
}

} // namespace bks
