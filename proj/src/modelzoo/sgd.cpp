#include "bks/sgd.hpp"

#include "bks/errors.hpp"

namespace bks {

Sgd::Sgd(std::vector<Parameter*> params, SgdConfig config)
    : params_(std::move(params)),
      config_(config),
      velocity_(params_.size()) {
  BKS_CHECK(config_.lr > 0.0, UsageError, "learning rate must be positive");
  BKS_CHECK(
      config_.momentum >= 0.0 && config_.momentum < 1.0,
      UsageError,
      "momentum must be in [0, 1)");
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.grad()) {
      continue;
    }
    auto g = p.grad()->data();
    if (!velocity_[i]) {
      velocity_[i] = Tensor::zeros(p.value().shape());
    }
    auto v = velocity_[i]->mutable_data();
    auto theta = p.mutable_data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = config_.momentum * v[k] + g[k];
      theta[k] -= config_.lr * v[k];
    }
    p.clear_grad();
  }
}

} // namespace bks
