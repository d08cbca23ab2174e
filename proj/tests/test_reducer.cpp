#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "bks/buckets.hpp"
#include "bks/errors.hpp"
#include "bks/mlp.hpp"
#include "bks/ops.hpp"
#include "bks/reducer.hpp"
#include "bks/synthetic.hpp"
#include "bks/zoo.hpp"
#include "support/rig.hpp"
#include "support/scripted_module.hpp"

namespace bks {
namespace {

using testing::loopback_world;
using testing::random_tensor;
using testing::ScriptedModule;

std::vector<std::vector<std::size_t>> bucket_members(const std::vector<Bucket>& buckets) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& b : buckets) {
    std::vector<std::size_t> m;
    for (const auto& s : b.slots) {
      m.push_back(s.param_index);
    }
    out.push_back(m);
  }
  return out;
}

using Members = std::vector<std::vector<std::size_t>>;

TEST(Buckets, GreedyReversePacking) {
  const std::vector<std::size_t> ones{1, 1, 1};
  EXPECT_EQ(bucket_members(build_buckets(ones, 16)), (Members{{2, 1}, {0}}));
  const std::vector<std::size_t> fours{4, 4, 4, 4};
  EXPECT_EQ(bucket_members(build_buckets(fours, 64)), (Members{{3, 2}, {1, 0}}));
  EXPECT_EQ(bucket_members(build_buckets(fours, kUnlimitedBucketCap)), (Members{{3, 2, 1, 0}}));
  EXPECT_EQ(bucket_members(build_buckets(fours, 8)), (Members{{3}, {2}, {1}, {0}}));
  EXPECT_EQ(bucket_members(build_buckets(fours, 0)), (Members{{3}, {2}, {1}, {0}}));
}

TEST(Buckets, OversizedParameterSitsAlone) {
  const std::vector<std::size_t> big{13};
  const auto b = build_buckets(big, 16);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].buffer.size(), 13u);
  const std::vector<std::size_t> mixed{1, 13, 1};
  EXPECT_EQ(bucket_members(build_buckets(mixed, 16)), (Members{{2}, {1}, {0}}));
}

TEST(Buckets, SlotsTileAndRespectCap) {
  const std::vector<std::size_t> numels{5, 17, 1, 300, 2, 2, 64, 9};
  for (std::size_t cap : {0ul, 8ul, 64ul, 200ul, 1000ul, 4096ul, kUnlimitedBucketCap}) {
    const auto buckets = build_buckets(numels, cap);
    std::vector<int> seen(numels.size(), 0);
    std::size_t total = 0;
    for (std::size_t i = 0; i < buckets.size(); ++i) {
      const auto& b = buckets[i];
      EXPECT_EQ(b.index, i);
      EXPECT_EQ(b.pending, b.slots.size());
      std::size_t offset = 0;
      for (const auto& s : b.slots) {
        EXPECT_EQ(s.offset, offset);
        EXPECT_EQ(s.length, numels[s.param_index]);
        offset += s.length;
        ++seen[s.param_index];
      }
      EXPECT_EQ(b.buffer.size(), offset);
      if (b.slots.size() > 1) {
        EXPECT_LE(offset * sizeof(double), cap);
      }
      total += offset;
    }
    EXPECT_EQ(total, std::accumulate(numels.begin(), numels.end(), std::size_t{0}));
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  }
}

TEST(Ddp, ConstructBroadcastsRankZeroState) {
  const auto groups = loopback_world(2);
  std::vector<std::vector<Tensor>> values(2);
  run_threads(2, [&](int r) {
    auto model = build_mlp(zoo_model("buffered").spec, 100 + r, r);
    DistributedDataParallel ddp(*model, {kDefaultBucketCapBytes, false, groups[r]});
    for (auto* p : model->parameters()) {
      values[r].push_back(p->value());
    }
    for (auto* b : model->buffers()) {
      values[r].push_back(b->value());
    }
  });
  const auto reference = build_mlp(zoo_model("buffered").spec, 100, 0);
  ASSERT_EQ(values[0].size(), values[1].size());
  for (std::size_t i = 0; i < values[0].size(); ++i) {
    EXPECT_EQ(values[0][i], values[1][i]);
  }
  EXPECT_EQ(values[1][0], reference->parameters()[0]->value());
}

TEST(Ddp, ConstructRejectsBadConfigAndFreezesModule) {
  auto g = loopback_world(1)[0];
  ScriptedModule empty;
  EXPECT_THROW(DistributedDataParallel(empty, {kDefaultBucketCapBytes, false, g}), UsageError);
  ScriptedModule m;
  m.add("w", Tensor::matrix({{1}}));
  EXPECT_THROW(DistributedDataParallel(m, {4, false, g}), UsageError);
  EXPECT_THROW(DistributedDataParallel(m, {8, false, nullptr}), UsageError);
  DistributedDataParallel ddp(m, {8, false, g});
  EXPECT_THROW(m.add("late", Tensor::matrix({{1}})), UsageError);
}

TEST(Ddp, ShapeMismatchAcrossRanksIsProtocolError) {
  const auto groups = loopback_world(2);
  std::vector<int> caught(2, 0);
  run_threads(2, [&](int r) {
    ScriptedModule m;
    m.add("w", r == 0 ? Tensor::zeros({2, 3}) : Tensor::zeros({3, 2}));
    try {
      DistributedDataParallel ddp(m, {kDefaultBucketCapBytes, false, groups[r]});
    } catch (const ProtocolError&) {
      caught[r] = 1;
    }
  });
  EXPECT_EQ(caught, (std::vector<int>{1, 1}));
}

// Runs one forward/backward of the tiny MLP and returns the event trace.
std::vector<ReducerEvent> trace_one_iteration(const std::string& model_name, std::size_t cap, std::vector<Bucket>* buckets) {
  const auto& entry = zoo_model(model_name);
  auto model = build_mlp(entry.spec, 1, 0);
  DistributedDataParallel ddp(*model, {cap, false, loopback_world(1)[0]});
  std::vector<ReducerEvent> events;
  ddp.set_observer([&](const ReducerEvent& e) { events.push_back(e); });
  const SyntheticRegression data(entry.spec.widths.front(), entry.spec.widths.back(), 1);
  const auto batch = data.batch(0, 8);
  backward(mse_loss(ddp.forward(Var(batch.inputs)), Var(batch.targets)));
  if (buckets) {
    for (const auto& b : ddp.buckets()) {
      Bucket copy;
      copy.index = b.index;
      copy.slots = b.slots;
      buckets->push_back(copy);
    }
  }
  return events;
}

std::size_t position(const std::vector<ReducerEvent>& events, ReducerEventKind kind, std::size_t index) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].kind == kind && events[i].index == index) {
      return i;
    }
  }
  return events.size();
}

TEST(Ddp, FirstBucketLaunchesMidBackward) {
  // tiny: w0 512, b0 32, w1 256, b1 8 elements. b1 + w1 = 264 elements.
  std::vector<Bucket> buckets;
  const auto events = trace_one_iteration("tiny", 264 * 8, &buckets);
  ASSERT_EQ(bucket_members(buckets), (Members{{3, 2}, {1}, {0}}));
  // Bucket 0 goes out before the first layer's gradients exist.
  EXPECT_LT(position(events, ReducerEventKind::launch, 0), position(events, ReducerEventKind::hook, 1));
  EXPECT_LT(position(events, ReducerEventKind::launch, 0), position(events, ReducerEventKind::hook, 0));
  EXPECT_LT(position(events, ReducerEventKind::launch, 1), events.size());
}

TEST(Ddp, OutOfOrderReadinessStillLaunchesInOrder) {
  std::vector<Bucket> buckets;
  const auto events = trace_one_iteration("inverted", 0, &buckets);
  ASSERT_EQ(buckets.size(), 6u);
  std::vector<std::size_t> launches;
  for (const auto& e : events) {
    if (e.kind == ReducerEventKind::launch) {
      launches.push_back(e.index);
    }
  }
  EXPECT_EQ(launches, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  // The last bucket filled first but had to wait for bucket 0.
  const auto last_param = buckets.back().slots.front().param_index;
  EXPECT_LT(position(events, ReducerEventKind::hook, last_param), position(events, ReducerEventKind::launch, 0));
}

TEST(Ddp, AveragesGradients) {
  const auto groups = loopback_world(2);
  std::vector<Tensor> grads(2);
  run_threads(2, [&](int r) {
    ScriptedModule m;
    auto& w = m.add("w", Tensor::matrix({{1.0}}));
    m.fn = [&](const Var& x) { return matmul(x, w.var()); };
    DistributedDataParallel ddp(m, {kDefaultBucketCapBytes, false, groups[r]});
    // loss = g_r · w, so the local grad is g_r: g on rank 0, 3g on rank 1.
    const double g = 0.75;
    backward(ddp.forward(Var(Tensor::matrix({{r == 0 ? g : 3 * g}}))));
    grads[r] = *w.grad();
  });
  EXPECT_EQ(grads[0], Tensor::matrix({{1.5}}));
  EXPECT_EQ(grads[1], Tensor::matrix({{1.5}}));
}

TEST(Ddp, SyncDisabledAccumulatesLocally) {
  auto g = loopback_world(1)[0];
  ScriptedModule m;
  auto& w = m.add("w", Tensor::matrix({{1.0}}));
  m.fn = [&](const Var& x) { return matmul(x, w.var()); };
  DistributedDataParallel ddp(m, {kDefaultBucketCapBytes, false, g});
  int launches = 0;
  ddp.set_observer([&](const ReducerEvent& e) { launches += e.kind == ReducerEventKind::launch; });
  {
    auto guard = ddp.no_sync();
    EXPECT_FALSE(ddp.sync_enabled());
    EXPECT_THROW((void)ddp.no_sync(), UsageError);
    backward(ddp.forward(Var(Tensor::matrix({{2.0}}))));
    backward(ddp.forward(Var(Tensor::matrix({{3.0}}))));
    EXPECT_FALSE(ddp.last_stats().synchronized);
  }
  EXPECT_TRUE(ddp.sync_enabled());
  EXPECT_EQ(launches, 0);
  EXPECT_EQ(*w.grad(), Tensor::matrix({{5.0}}));
  backward(ddp.forward(Var(Tensor::matrix({{1.0}}))));
  EXPECT_EQ(launches, 1);
  EXPECT_TRUE(ddp.last_stats().synchronized);
  EXPECT_EQ(*w.grad(), Tensor::matrix({{6.0}}));
}

TEST(Ddp, EmptyNoSyncScopeChangesNothing) {
  const auto groups = loopback_world(2);
  std::vector<Tensor> grads(2);
  run_threads(2, [&](int r) {
    ScriptedModule m;
    auto& w = m.add("w", Tensor::matrix({{1.0}}));
    m.fn = [&](const Var& x) { return matmul(x, w.var()); };
    DistributedDataParallel ddp(m, {kDefaultBucketCapBytes, false, groups[r]});
    { auto guard = ddp.no_sync(); }
    backward(ddp.forward(Var(Tensor::matrix({{r + 1.0}}))));
    grads[r] = *w.grad();
  });
  EXPECT_EQ(grads[0], Tensor::matrix({{1.5}}));
  EXPECT_EQ(grads[1], grads[0]);
}

TEST(Ddp, SkippedParameterWithoutFindUnusedIsReported) {
  auto g = loopback_world(1)[0];
  auto model = build_mlp(zoo_model("gated").spec, 1, 0);
  DistributedDataParallel ddp(*model, {kDefaultBucketCapBytes, false, g});
  const SyntheticRegression data(8, 4, 1);
  const auto batch = data.batch(0, 4);
  try {
    backward(mse_loss(ddp.forward(Var(batch.inputs)), Var(batch.targets)));
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("find_unused_parameters"), std::string::npos) << e.what();
  }
}

TEST(Ddp, GloballyUnusedGradIsUntouched) {
  const auto groups = loopback_world(2);
  run_threads(2, [&](int r) {
    auto model = build_mlp(zoo_model("gated").spec, 1, r);
    DistributedDataParallel ddp(*model, {kDefaultBucketCapBytes, true, groups[r]});
    const auto dead = model->branch_parameters(1);
    for (auto* p : dead) {
      p->set_grad(Tensor::full(p->value().shape(), 7.0));
    }
    const SyntheticRegression data(8, 4, 1);
    const auto batch = shard(data.batch(0, 8), r, 2);
    backward(mse_loss(ddp.forward(Var(batch.inputs)), Var(batch.targets)));
    EXPECT_EQ(ddp.last_stats().globally_unused, dead.size());
    for (auto* p : dead) {
      EXPECT_EQ(*p->grad(), Tensor::full(p->value().shape(), 7.0));
    }
  });
}

TEST(Ddp, LocallyUnusedParameterGetsZeroContribution) {
  const auto groups = loopback_world(2);
  std::vector<std::vector<Tensor>> synced(2), local(2);
  run_threads(2, [&](int r) {
    auto model = build_mlp(zoo_model("gated").spec, 1, r);
    DistributedDataParallel ddp(*model, {kDefaultBucketCapBytes, true, groups[r]});
    // Iteration 1: rank 0 skips branch 0, rank 1 uses it.
    model->set_iteration(1);
    const SyntheticRegression data(8, 4, 5);
    const auto batch = shard(data.batch(1, 8), r, 2);
    // A local pass without the reducer gives this rank's own gradients.
    auto plain = build_mlp(zoo_model("gated").spec, 1, r);
    plain->set_iteration(1);
    backward(mse_loss(plain->forward(Var(batch.inputs)), Var(batch.targets)));
    for (auto* p : plain->branch_parameters(0)) {
      local[r].push_back(p->grad() ? *p->grad() : Tensor::zeros(p->value().shape()));
    }
    backward(mse_loss(ddp.forward(Var(batch.inputs)), Var(batch.targets)));
    for (auto* p : model->branch_parameters(0)) {
      ASSERT_TRUE(p->grad()) << "rank " << r;
      synced[r].push_back(*p->grad());
    }
  });
  for (std::size_t i = 0; i < synced[0].size(); ++i) {
    EXPECT_EQ(synced[0][i], synced[1][i]);
    // Rank 0 contributed zeros: the average is half of rank 1's gradient.
    for (std::size_t k = 0; k < synced[0][i].numel(); ++k) {
      EXPECT_NEAR(synced[0][i][k], 0.5 * local[1][i][k], 1e-15);
      EXPECT_EQ(local[0][i][k], 0.0);
    }
  }
}

TEST(Ddp, ParameterUsedOnlyUnderNoSyncIsStillSynchronised) {
  const auto groups = loopback_world(2);
  std::vector<Tensor> grads(2);
  run_threads(2, [&](int r) {
    ScriptedModule m;
    auto& a = m.add("a", Tensor::matrix({{1.0}}));
    auto& side = m.add("side", Tensor::matrix({{1.0}}));
    bool use_side = true;
    m.fn = [&](const Var& x) {
      const auto main = matmul(x, a.var());
      return use_side ? add(main, matmul(x, side.var())) : main;
    };
    DistributedDataParallel ddp(m, {kDefaultBucketCapBytes, true, groups[r]});
    {
      auto guard = ddp.no_sync();
      backward(ddp.forward(Var(Tensor::matrix({{r + 1.0}}))));
    }
    use_side = false;
    backward(ddp.forward(Var(Tensor::matrix({{10.0}}))));
    grads[r] = *side.grad();
  });
  // side accumulated 1 on rank 0 and 2 on rank 1 inside the scope.
  EXPECT_EQ(grads[0], Tensor::matrix({{1.5}}));
  EXPECT_EQ(grads[1], grads[0]);
}

TEST(Ddp, BuffersFollowRankZeroAtSyncingForward) {
  const auto groups = loopback_world(2);
  std::vector<double> seen(2), seen_no_sync(2);
  run_threads(2, [&](int r) {
    ScriptedModule m;
    auto& w = m.add("w", Tensor::matrix({{1.0}}));
    auto& buf = m.add_buffer("buf", Tensor::matrix({{3.0}}));
    m.fn = [&](const Var& x) { return matmul(add(x, buf.var()), w.var()); };
    DistributedDataParallel ddp(m, {kDefaultBucketCapBytes, false, groups[r]});
    buf.set_value(Tensor::matrix({{r == 0 ? 4.0 : -9.0}}));
    {
      auto guard = ddp.no_sync();
      backward(ddp.forward(Var(Tensor::matrix({{0.0}}))));
      seen_no_sync[r] = buf.value()[0];
    }
    backward(ddp.forward(Var(Tensor::matrix({{0.0}}))));
    seen[r] = buf.value()[0];
  });
  EXPECT_EQ(seen_no_sync, (std::vector<double>{4.0, -9.0}));
  EXPECT_EQ(seen, (std::vector<double>{4.0, 4.0}));
}

TEST(Ddp, RegistrationOrderIsBucketOrderReversed) {
  auto g = loopback_world(1)[0];
  auto model = build_mlp(zoo_model("tiny").spec, 1, 0);
  DistributedDataParallel ddp(*model, {kUnlimitedBucketCap, false, g});
  ASSERT_EQ(ddp.buckets().size(), 1u);
  EXPECT_EQ(bucket_members(ddp.buckets()), (Members{{3, 2, 1, 0}}));
  EXPECT_EQ(ddp.local_used_map().size(), 4u);
}

} // namespace
} // namespace bks
