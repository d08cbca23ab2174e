#include "bks/process_group.hpp"

namespace bks {

void Work::wait() {
  std::unique_lock<std::mutex> lock(mutex_);
  cv_.wait(lock, [&] { return state_ != WorkState::pending; });
  if (state_ == WorkState::failed) {
    std::rethrow_exception(error_);
  }
}

bool Work::completed() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return state_ != WorkState::pending;
}

WorkState Work::state() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return state_;
}

void Work::mark_done() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    state_ = WorkState::done;
  }
  cv_.notify_all();
}

void Work::mark_failed(std::exception_ptr error) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    state_ = WorkState::failed;
    error_ = std::move(error);
  }
  cv_.notify_all();
}

} // namespace bks
