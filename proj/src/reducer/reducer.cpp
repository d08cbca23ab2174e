#include "bks/reducer.hpp"

#include <algorithm>
#include <sstream>

#include "bks/errors.hpp"

namespace bks {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

} // namespace

DistributedDataParallel::DistributedDataParallel(
    Module& module,
    ReducerConfig config)
    : module_(module), config_(std::move(config)) {
  BKS_CHECK(
      config_.process_group != nullptr,
      UsageError,
      "ReducerConfig.process_group is required");
  BKS_CHECK(
      config_.bucket_cap_bytes == 0 ||
          config_.bucket_cap_bytes >= sizeof(double),
      UsageError,
      "bucket cap must be 0 (one bucket per parameter) or at least ",
      sizeof(double),
      " bytes");
  params_ = module_.parameters();
  BKS_CHECK(!params_.empty(), UsageError, "module has no parameters");
  module_.freeze();

  auto& pg = *config_.process_group;
  for (Parameter* p : params_) {
    Tensor value = p->value();
    broadcast_tensor(pg, value, 0);
    p->set_value(std::move(value));
  }
  for (Parameter* b : module_.buffers()) {
    Tensor value = b->value();
    broadcast_tensor(pg, value, 0);
    b->set_value(std::move(value));
  }

  std::vector<std::size_t> numels;
  numels.reserve(params_.size());
  for (Parameter* p : params_) {
    numels.push_back(p->value().numel());
  }
  buckets_ = build_buckets(numels, config_.bucket_cap_bytes);
  locators_.resize(params_.size());
  for (const auto& bucket : buckets_) {
    for (std::size_t s = 0; s < bucket.slots.size(); ++s) {
      locators_[bucket.slots[s].param_index] = {bucket.index, s};
    }
  }

  marked_.assign(params_.size(), 0);
  local_used_.assign(params_.size(), 0);
  global_used_.assign(params_.size(), 0);

  hook_ = std::make_shared<const PostAccumulateHook>(
      [this](std::size_t param_index) { autograd_hook(param_index); });
  for (Parameter* p : params_) {
    p->register_post_accumulate_hook(hook_);
  }
}

DistributedDataParallel::~DistributedDataParallel() {
  for (Parameter* p : params_) {
    p->remove_post_accumulate_hook(hook_);
  }
}

DistributedDataParallel::NoSyncGuard::NoSyncGuard(NoSyncGuard&& other) noexcept
    : owner_(other.owner_) {
  other.owner_ = nullptr;
}

DistributedDataParallel::NoSyncGuard::~NoSyncGuard() {
  if (owner_) {
    owner_->sync_enabled_ = true;
  }
}

DistributedDataParallel::NoSyncGuard DistributedDataParallel::no_sync() {
  BKS_CHECK(sync_enabled_, UsageError, "no_sync scopes cannot be nested");
  sync_enabled_ = false;
  return NoSyncGuard(this);
}

Var DistributedDataParallel::forward(const Var& input) {
  BKS_CHECK(
      !in_backward(), UsageError, "forward called from inside backward");
  pass_syncs_ = sync_enabled_;
  if (pass_syncs_) {
    for (Parameter* b : module_.buffers()) {
      Tensor value = b->value();
      broadcast_tensor(*config_.process_group, value, 0);
      b->set_value(std::move(value));
    }
  }
  Var out = module_.forward(input);
  prepare_for_backward(out);
  return out;
}

void DistributedDataParallel::reset_iteration_state() {
  for (auto& bucket : buckets_) {
    bucket.pending = bucket.slots.size();
    bucket.ready = false;
    bucket.work.reset();
  }
  std::fill(marked_.begin(), marked_.end(), 0);
  next_bucket_ = 0;
  finalize_queued_ = false;
}

void DistributedDataParallel::prepare_for_backward(const Var& output) {
  const auto reachable =
      traverse_reachable_params(std::span<const Var>(&output, 1));
  for (auto index : reachable) {
    if (index < local_used_.size()) {
      local_used_[index] = 1;
    }
  }
  reset_iteration_state();
  expect_hooks_ = true;
  stats_ = IterationStats{};
  stats_.synchronized = pass_syncs_;
  if (!pass_syncs_ || !config_.find_unused_parameters) {
    return;
  }
  // Parameters outside this graph will never fire a hook; count them in
  // now so their buckets can still become ready.
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!reachable.contains(i)) {
      mark_ready(i, false);
    }
  }
}

void DistributedDataParallel::emit(ReducerEventKind kind, std::size_t index) {
  if (observer_) {
    observer_(ReducerEvent{kind, index, Clock::now()});
  }
}

void DistributedDataParallel::autograd_hook(std::size_t param_index) {
  BKS_INTERNAL_ASSERT(
      param_index < params_.size(),
      "hook fired for unknown param_index ",
      param_index);
  if (!expect_hooks_) {
    return;
  }
  local_used_[param_index] = 1;
  emit(ReducerEventKind::hook, param_index);
  if (!pass_syncs_) {
    return;
  }
  if (!finalize_queued_) {
    finalize_queued_ = true;
    queue_backward_callback([this] { finalize_backward(); });
  }
  mark_ready(param_index, true);
  if (config_.overlap) {
    launch_ready_buckets();
  }
}

void DistributedDataParallel::mark_ready(std::size_t param_index, bool from_hook) {
  BKS_INTERNAL_ASSERT(
      !marked_[param_index],
      "parameter ",
      param_index,
      " marked ready twice in one iteration");
  const auto loc = locators_[param_index];
  auto& bucket = buckets_[loc.bucket];
  const auto& slot = bucket.slots[loc.slot];
  Parameter& param = *params_[param_index];
  double* dst = bucket.buffer.data() + slot.offset;

  // A parameter skipped in this graph still contributes what it
  // accumulated under no_sync; otherwise it contributes zeros.
  const bool has_contribution =
      param.grad().has_value() && (from_hook || local_used_[param_index]);
  if (has_contribution) {
    const double inv_world = 1.0 / static_cast<double>(config_.process_group->world());
    auto src = param.grad()->data();
    for (std::size_t i = 0; i < slot.length; ++i) {
      dst[i] = src[i] * inv_world;
    }
  } else {
    std::fill(dst, dst + slot.length, 0.0);
  }

  marked_[param_index] = 1;
  BKS_INTERNAL_ASSERT(bucket.pending > 0, "bucket ", bucket.index, " underflow");
  if (--bucket.pending == 0) {
    bucket.ready = true;
  }
}

void DistributedDataParallel::launch_ready_buckets() {
  const auto start = Clock::now();
  bool launched = false;
  auto& pg = *config_.process_group;
  while (next_bucket_ < buckets_.size() && buckets_[next_bucket_].ready) {
    auto& bucket = buckets_[next_bucket_];
    bucket.work = pg.allreduce_sum(bucket.buffer);
    stats_.launch_order.push_back(bucket.index);
    emit(ReducerEventKind::launch, bucket.index);
    ++next_bucket_;
    launched = true;
  }
  if (launched) {
    stats_.hook_blocking_s += seconds_since(start);
  }
}

void DistributedDataParallel::finalize_backward() {
  expect_hooks_ = false;
  const auto start = Clock::now();
  if (!config_.overlap) {
    launch_ready_buckets();
  }
  if (next_bucket_ < buckets_.size()) {
    std::ostringstream missing;
    for (std::size_t b = next_bucket_; b < buckets_.size(); ++b) {
      for (const auto& slot : buckets_[b].slots) {
        if (!marked_[slot.param_index]) {
          missing << ' ' << slot.param_index;
        }
      }
    }
    throw UsageError(detail::str(
        "backward finished but bucket ",
        next_bucket_,
        " of ",
        buckets_.size(),
        " never became ready; parameters without a gradient:",
        missing.str(),
        ". Construct with find_unused_parameters=true when forward can skip "
        "parameters"));
  }

  for (auto& bucket : buckets_) {
    try {
      bucket.work->wait();
    } catch (const TransportError& e) {
      throw ReductionError(
          detail::str(
              "allreduce of bucket ", bucket.index, " failed: ", e.what()),
          bucket.index,
          e.peer_rank());
    }
  }

  if (config_.find_unused_parameters) {
    global_used_ = local_used_;
    try {
      config_.process_group->allreduce_max_u8(global_used_)->wait();
    } catch (const TransportError& e) {
      throw ReductionError(
          detail::str("unused-parameter bitmap reduction failed: ", e.what()),
          buckets_.size(),
          e.peer_rank());
    }
  }
  stats_.finalize_wait_s = seconds_since(start);

  for (const auto& bucket : buckets_) {
    for (const auto& slot : bucket.slots) {
      if (config_.find_unused_parameters && !global_used_[slot.param_index]) {
        // No rank used it: leave grad exactly as it was.
        ++stats_.globally_unused;
        continue;
      }
      Parameter& param = *params_[slot.param_index];
      const double* src = bucket.buffer.data() + slot.offset;
      param.set_grad(Tensor::computed(
          param.value().shape(), std::vector<double>(src, src + slot.length)));
    }
  }

  std::fill(local_used_.begin(), local_used_.end(), 0);
  emit(ReducerEventKind::finalize, buckets_.size());
}

} // namespace bks
