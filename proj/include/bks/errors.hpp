#pragma once

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace bks {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not agree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An API was called in a state or with arguments it does not accept.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Peers disagree about what collective is being run (size, kind, order).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class RendezvousError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  TransportError(std::string what, int peer_rank)
      : Error(std::move(what)), peer_rank_(peer_rank) {}

  // -1 when the failure cannot be attributed to a single peer.
  int peer_rank() const {
    return peer_rank_;
  }

 private:
  int peer_rank_;
};

// A gradient bucket failed to reduce; wraps the underlying collective error.
class ReductionError : public Error {
 public:
  ReductionError(std::string what, std::size_t bucket_index, int peer_rank)
      : Error(std::move(what)),
        bucket_index_(bucket_index),
        peer_rank_(peer_rank) {}

  std::size_t bucket_index() const {
    return bucket_index_;
  }
  int peer_rank() const {
    return peer_rank_;
  }

 private:
  std::size_t bucket_index_;
  int peer_rank_;
};

namespace detail {

template <typename... Args>
std::string str(const Args&... args) {
  std::ostringstream ss;
  (ss << ... << args);
  return ss.str();
}

[[noreturn]] inline void internal_assert_fail(
    const char* cond,
    const char* file,
    int line,
    const std::string& msg) {
  std::fprintf(
      stderr,
      "internal invariant violated: %s at %s:%d: %s\n",
      cond,
      file,
      line,
      msg.c_str());
  std::abort();
}

} // namespace detail
} // namespace bks

#define BKS_CHECK(cond, ErrorType, ...)                    \
  do {                                                      \
    if (!(cond)) {                                          \
      throw ErrorType(::bks::detail::str(__VA_ARGS__));     \
    }                                                       \
  } while (false)

#define BKS_INTERNAL_ASSERT(cond, ...)                       \
  do {                                                        \
    if (!(cond)) {                                            \
      ::bks::detail::internal_assert_fail(                    \
          #cond, __FILE__, __LINE__, ::bks::detail::str(__VA_ARGS__)); \
    }                                                         \
  } while (false)
