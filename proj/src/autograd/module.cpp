#include "bks/module.hpp"

#include "bks/errors.hpp"

namespace bks {

std::vector<Parameter*> Module::parameters() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) {
    out.push_back(p.get());
  }
  return out;
}

std::vector<Parameter*> Module::buffers() const {
  std::vector<Parameter*> out;
  out.reserve(buffers_.size());
  for (const auto& b : buffers_) {
    out.push_back(b.get());
  }
  return out;
}

std::size_t Module::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    n += p->value().numel();
  }
  return n;
}

Parameter& Module::register_parameter(std::string name, Tensor init) {
  BKS_CHECK(
      !frozen_,
      UsageError,
      "cannot register parameter ",
      name,
      " on a module wrapped for distributed training");
  params_.push_back(std::make_unique<Parameter>(
      std::move(name), std::move(init), params_.size(), false));
  return *params_.back();
}

Parameter& Module::register_buffer(std::string name, Tensor init) {
  BKS_CHECK(
      !frozen_,
      UsageError,
      "cannot register buffer ",
      name,
      " on a module wrapped for distributed training");
  buffers_.push_back(std::make_unique<Parameter>(
      std::move(name), std::move(init), buffers_.size(), true));
  return *buffers_.back();
}

} // namespace bks
