#pragma once

#include <optional>
#include <vector>

#include "bks/autograd.hpp"

namespace bks {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
};

// v ← momentum·v + g; θ ← θ − lr·v. Parameters without a grad are skipped
// entirely; grads are cleared after the step.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, SgdConfig config);

  void step();

  const SgdConfig& config() const {
    return config_;
  }
  // Momentum buffer of the i-th managed parameter, once it exists.
  const std::optional<Tensor>& velocity(std::size_t i) const {
    return velocity_.at(i);
  }

 private:
  std::vector<Parameter*> params_;
  SgdConfig config_;
  std::vector<std::optional<Tensor>> velocity_;
};

} // namespace bks
