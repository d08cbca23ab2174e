#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bks/autograd.hpp"

namespace bks {

// A model: owns learnable parameters and non-learnable buffers, both in
// registration order.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  virtual Var forward(const Var& input) = 0;

  std::vector<Parameter*> parameters() const;
  std::vector<Parameter*> buffers() const;
  std::size_t parameter_count() const {
    return params_.size();
  }
  // Total learnable element count.
  std::size_t numel() const;

  // After freezing, registering parameters or buffers is a usage error.
  void freeze() {
    frozen_ = true;
  }
  bool frozen() const {
    return frozen_;
  }

  // Training-loop step counter, read by models whose graph changes per
  // iteration.
  void set_iteration(std::uint64_t iteration) {
    iteration_ = iteration;
  }
  std::uint64_t iteration() const {
    return iteration_;
  }

 protected:
  Parameter& register_parameter(std::string name, Tensor init);
  Parameter& register_buffer(std::string name, Tensor init);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<std::unique_ptr<Parameter>> buffers_;
  bool frozen_ = false;
  std::uint64_t iteration_ = 0;
};

} // namespace bks
