#include "bks/mlp.hpp"

#include <string>

#include "bks/errors.hpp"
#include "bks/ops.hpp"
#include "bks/rng.hpp"

namespace bks {

namespace {

constexpr double kInitRange = 0.1;
constexpr double kRunningMeanMomentum = 0.1;

Tensor uniform_tensor(Rng& rng, Shape shape) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) {
    v = rng.uniform(-kInitRange, kInitRange);
  }
  return Tensor(std::move(shape), std::move(data));
}

std::int64_t ext(std::size_t v) {
  return static_cast<std::int64_t>(v);
}

} // namespace

Mlp::Mlp(const MlpSpec& spec, std::uint64_t seed, int rank)
    : spec_(spec), rank_(rank) {
  BKS_CHECK(
      spec_.widths.size() >= 2, UsageError, "an MLP needs at least two widths");
  for (auto w : spec_.widths) {
    BKS_CHECK(w > 0, UsageError, "MLP widths must be positive");
  }
  for (const auto& b : spec_.branches) {
    BKS_CHECK(
        b.width > 0 && b.gate, UsageError, "gated branch needs width and gate");
  }

  Rng rng(seed);
  const std::size_t n_layers = spec_.widths.size() - 1;
  layers_.resize(n_layers);
  auto make_layer = [&](std::size_t l) {
    const auto in = spec_.widths[l];
    const auto out = spec_.widths[l + 1];
    const auto name = "layer" + std::to_string(l);
    layers_[l].weight = &register_parameter(
        name + ".weight", uniform_tensor(rng, {ext(in), ext(out)}));
    layers_[l].bias =
        &register_parameter(name + ".bias", uniform_tensor(rng, {ext(out)}));
  };
  if (spec_.reverse_registration) {
    for (std::size_t l = n_layers; l-- > 0;) {
      make_layer(l);
    }
  } else {
    for (std::size_t l = 0; l < n_layers; ++l) {
      make_layer(l);
    }
  }

  const auto in = spec_.widths.front();
  const auto out = spec_.widths.back();
  for (std::size_t i = 0; i < spec_.branches.size(); ++i) {
    const auto width = spec_.branches[i].width;
    const auto name = "branch" + std::to_string(i);
    Branch b;
    b.in.weight = &register_parameter(
        name + ".in.weight", uniform_tensor(rng, {ext(in), ext(width)}));
    b.in.bias =
        &register_parameter(name + ".in.bias", uniform_tensor(rng, {ext(width)}));
    b.out.weight = &register_parameter(
        name + ".out.weight", uniform_tensor(rng, {ext(width), ext(out)}));
    b.out.bias =
        &register_parameter(name + ".out.bias", uniform_tensor(rng, {ext(out)}));
    branches_.push_back(b);
  }

  if (spec_.running_mean_buffer) {
    running_mean_ = &register_buffer("running_mean", Tensor::zeros({ext(in)}));
  }
}

std::vector<Parameter*> Mlp::branch_parameters(std::size_t i) const {
  const auto& b = branches_.at(i);
  return {b.in.weight, b.in.bias, b.out.weight, b.out.bias};
}

Var Mlp::forward(const Var& input) {
  Var x = input;
  if (running_mean_) {
    x = add_row(x, scale(running_mean_->var(), -1.0));
    // Track the batch mean of the raw input.
    const auto& raw = input.value();
    const auto rows = static_cast<std::size_t>(raw.size(0));
    const auto cols = static_cast<std::size_t>(raw.size(1));
    auto rm = running_mean_->mutable_data();
    for (std::size_t j = 0; j < cols; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        mean += raw.data()[i * cols + j];
      }
      mean /= static_cast<double>(rows);
      rm[j] = (1.0 - kRunningMeanMomentum) * rm[j] + kRunningMeanMomentum * mean;
    }
  }

  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = add_row(matmul(h, layers_[l].weight->var()), layers_[l].bias->var());
    if (l + 1 < layers_.size()) {
      h = relu(h);
    }
  }
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    if (!spec_.branches[i].gate(iteration(), rank_)) {
      continue;
    }
    const auto& b = branches_[i];
    Var side = relu(add_row(matmul(x, b.in.weight->var()), b.in.bias->var()));
    side = add_row(matmul(side, b.out.weight->var()), b.out.bias->var());
    h = add(h, side);
  }
  return h;
}

std::unique_ptr<Mlp> build_mlp(const MlpSpec& spec, std::uint64_t seed, int rank) {
  return std::make_unique<Mlp>(spec, seed, rank);
}

} // namespace bks
