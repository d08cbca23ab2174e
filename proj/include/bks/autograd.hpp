#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bks/tensor.hpp"

namespace bks {

class Parameter;

// Callback fired after a gradient has been accumulated into a parameter.
using PostAccumulateHook = std::function<void(std::size_t param_index)>;
using PostAccumulateHookPtr = std::shared_ptr<const PostAccumulateHook>;

// Vertex of the autograd graph. Interior nodes compute input gradients from
// the output gradient; leaf nodes accumulate into their Parameter.
struct Node {
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tensor& grad_output)>;

  std::uint64_t sequence_nr = 0;
  // One edge per differentiable input, in the order BackwardFn returns
  // gradients. Null edges receive no gradient.
  std::vector<std::shared_ptr<Node>> next;
  BackwardFn backward;
  Parameter* param = nullptr;
  bool released = false;

  bool is_leaf() const {
    return param != nullptr;
  }
};

// A tensor value plus, when it requires grad, the node that produced it.
class Var {
 public:
  Var() = default;
  Var(Tensor constant); // NOLINT(google-explicit-constructor)
  Var(std::shared_ptr<const Tensor> value, std::shared_ptr<Node> node);

  const Tensor& value() const {
    return *value_;
  }
  const std::shared_ptr<const Tensor>& value_ptr() const {
    return value_;
  }
  const Shape& shape() const {
    return value_->shape();
  }
  bool requires_grad() const {
    return node_ != nullptr;
  }
  const std::shared_ptr<Node>& node() const {
    return node_;
  }

 private:
  std::shared_ptr<const Tensor> value_ = std::make_shared<const Tensor>();
  std::shared_ptr<Node> node_;
};

class Parameter {
 public:
  Parameter(std::string name, Tensor value, std::size_t index, bool is_buffer);
  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;

  const std::string& name() const {
    return name_;
  }
  std::size_t index() const {
    return index_;
  }
  bool is_buffer() const {
    return is_buffer_;
  }

  const Tensor& value() const {
    return *value_;
  }
  // Replaces the value; shape must not change.
  void set_value(Tensor value);
  std::span<double> mutable_data();

  const std::optional<Tensor>& grad() const {
    return grad_;
  }
  void set_grad(std::optional<Tensor> grad);
  void clear_grad() {
    grad_.reset();
  }
  // Sum into grad, creating it when absent.
  void accumulate_grad(const Tensor& g);

  // Leaf reference to use this parameter in a forward pass. Buffers come
  // back as constants.
  Var var();

  void register_post_accumulate_hook(PostAccumulateHookPtr hook);
  void remove_post_accumulate_hook(const PostAccumulateHookPtr& hook);
  std::size_t hook_count() const {
    return hooks_.size();
  }

 private:
  friend void backward(const Var& loss);

  void ensure_unshared();

  std::string name_;
  std::size_t index_;
  bool is_buffer_;
  std::shared_ptr<Tensor> value_;
  std::optional<Tensor> grad_;
  std::shared_ptr<Node> accumulator_;
  std::vector<PostAccumulateHookPtr> hooks_;
};

// Reverse-mode pass from a scalar loss. Leaves accumulate and then fire
// their hooks. The interior graph is released afterwards.
void backward(const Var& loss);

// Called from inside a hook: run `fn` once the current backward pass has
// finished traversing the graph. Throws UsageError outside backward.
void queue_backward_callback(std::function<void()> fn);

bool in_backward();

// Indices of parameters reachable from `outputs` through the graph.
std::set<std::size_t> traverse_reachable_params(std::span<const Var> outputs);

} // namespace bks
