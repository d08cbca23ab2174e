#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "bks/module.hpp"

namespace bks {

// Side branch from the (buffer-adjusted) input into the output, evaluated
// only when gate(iteration, rank) holds. The gate must be pure.
struct GatedBranch {
  std::size_t width = 0;
  std::function<bool(std::uint64_t iteration, int rank)> gate;
};

struct MlpSpec {
  // Layer widths, input first; at least two.
  std::vector<std::size_t> widths;
  std::vector<GatedBranch> branches;
  // Register layers last-to-first, so gradients become ready in the same
  // order as registration instead of the reverse.
  bool reverse_registration = false;
  // Subtract a running mean of the input, tracked in a buffer.
  bool running_mean_buffer = false;
};

// Linear layers with ReLU between them (none after the last).
class Mlp final : public Module {
 public:
  Mlp(const MlpSpec& spec, std::uint64_t seed, int rank);

  Var forward(const Var& input) override;

  const MlpSpec& spec() const {
    return spec_;
  }

  struct Layer {
    Parameter* weight;
    Parameter* bias;
  };
  const std::vector<Layer>& layers() const {
    return layers_;
  }
  // Parameters of branch i: {in-weight, in-bias, out-weight, out-bias}.
  std::vector<Parameter*> branch_parameters(std::size_t i) const;

 private:
  struct Branch {
    Layer in;
    Layer out;
  };

  MlpSpec spec_;
  int rank_;
  std::vector<Layer> layers_;
  std::vector<Branch> branches_;
  Parameter* running_mean_ = nullptr;
};

std::unique_ptr<Mlp> build_mlp(const MlpSpec& spec, std::uint64_t seed, int rank = 0);

} // namespace bks
