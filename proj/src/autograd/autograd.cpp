#include "bks/autograd.hpp"

#include <algorithm>
#include <queue>
#include <unordered_map>
#include <unordered_set>

#include "bks/errors.hpp"

namespace bks {

namespace {

struct BackwardContext {
  std::vector<std::function<void()>> callbacks;
};

thread_local BackwardContext* current_backward = nullptr;

// Tracks the innermost running backward on this thread.
class BackwardScope {
 public:
  BackwardScope() : previous_(current_backward) {
    current_backward = &context_;
  }
  ~BackwardScope() {
    current_backward = previous_;
  }
  BackwardScope(const BackwardScope&) = delete;
  BackwardScope& operator=(const BackwardScope&) = delete;

  BackwardContext& context() {
    return context_;
  }

 private:
  BackwardContext context_;
  BackwardContext* previous_;
};

// Leaves run before interior nodes so hooks fire as early as possible;
// interior nodes run newest-first.
struct ReadyOrder {
  bool operator()(const Node* a, const Node* b) const {
    if (a->is_leaf() != b->is_leaf()) {
      return b->is_leaf();
    }
    return a->sequence_nr < b->sequence_nr;
  }
};

void release_graph(const std::vector<Node*>& nodes) {
  // Dropping an edge can free a node later in the list, so detach
  // everything first and let it go at once.
  std::vector<std::vector<std::shared_ptr<Node>>> edges;
  std::vector<Node::BackwardFn> fns;
  for (Node* node : nodes) {
    if (!node->is_leaf()) {
      edges.push_back(std::move(node->next));
      node->next.clear();
      fns.push_back(std::move(node->backward));
      node->backward = nullptr;
      node->released = true;
    }
  }
}

} // namespace

Var::Var(Tensor constant)
    : value_(std::make_shared<const Tensor>(std::move(constant))) {}

Var::Var(std::shared_ptr<const Tensor> value, std::shared_ptr<Node> node)
    : value_(std::move(value)), node_(std::move(node)) {}

Parameter::Parameter(
    std::string name,
    Tensor value,
    std::size_t index,
    bool is_buffer)
    : name_(std::move(name)),
      index_(index),
      is_buffer_(is_buffer),
      value_(std::make_shared<Tensor>(std::move(value))) {
  if (!is_buffer_) {
    accumulator_ = std::make_shared<Node>();
    accumulator_->param = this;
  }
}

void Parameter::ensure_unshared() {
  if (value_.use_count() > 1) {
    value_ = std::make_shared<Tensor>(*value_);
  }
}

void Parameter::set_value(Tensor value) {
  BKS_CHECK(
      value.same_shape(*value_),
      DimensionError,
      "parameter ",
      name_,
      " has shape ",
      shape_str(value_->shape()),
      ", cannot assign ",
      shape_str(value.shape()));
  value_ = std::make_shared<Tensor>(std::move(value));
}

std::span<double> Parameter::mutable_data() {
  ensure_unshared();
  return value_->mutable_data();
}

void Parameter::set_grad(std::optional<Tensor> grad) {
  if (grad) {
    BKS_CHECK(
        grad->same_shape(*value_),
        DimensionError,
        "grad for ",
        name_,
        " must have shape ",
        shape_str(value_->shape()),
        ", got ",
        shape_str(grad->shape()));
  }
  grad_ = std::move(grad);
}

void Parameter::accumulate_grad(const Tensor& g) {
  BKS_CHECK(
      g.same_shape(*value_),
      DimensionError,
      "gradient for ",
      name_,
      " has shape ",
      shape_str(g.shape()),
      ", expected ",
      shape_str(value_->shape()));
  if (!grad_) {
    grad_ = g;
    return;
  }
  auto dst = grad_->mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

Var Parameter::var() {
  if (is_buffer_) {
    return Var(value_, nullptr);
  }
  return Var(value_, accumulator_);
}

void Parameter::register_post_accumulate_hook(PostAccumulateHookPtr hook) {
  BKS_CHECK(hook != nullptr, UsageError, "null hook for ", name_);
  BKS_CHECK(
      !is_buffer_, UsageError, "buffer ", name_, " has no gradient accumulator");
  BKS_CHECK(
      std::find(hooks_.begin(), hooks_.end(), hook) == hooks_.end(),
      UsageError,
      "hook already registered on ",
      name_);
  hooks_.push_back(std::move(hook));
}

void Parameter::remove_post_accumulate_hook(const PostAccumulateHookPtr& hook) {
  std::erase(hooks_, hook);
}

bool in_backward() {
  return current_backward != nullptr;
}

void queue_backward_callback(std::function<void()> fn) {
  BKS_CHECK(
      current_backward != nullptr,
      UsageError,
      "queue_backward_callback called outside of backward");
  current_backward->callbacks.push_back(std::move(fn));
}

void backward(const Var& loss) {
  BKS_CHECK(
      loss.requires_grad(),
      UsageError,
      "backward on a tensor that is not attached to an autograd graph");
  BKS_CHECK(
      loss.value().numel() == 1,
      UsageError,
      "backward needs a scalar loss, got shape ",
      shape_str(loss.shape()));
  Node* root = loss.node().get();
  BKS_CHECK(
      !root->released,
      UsageError,
      "graph already consumed by a previous backward");

  // Count incoming edges so a node runs only after all its consumers.
  std::unordered_map<Node*, std::size_t> dependencies;
  std::vector<Node*> visited;
  {
    std::unordered_set<Node*> seen{root};
    std::vector<Node*> stack{root};
    while (!stack.empty()) {
      Node* node = stack.back();
      stack.pop_back();
      visited.push_back(node);
      for (const auto& edge : node->next) {
        if (!edge) {
          continue;
        }
        BKS_CHECK(
            !edge->released,
            UsageError,
            "graph already consumed by a previous backward");
        ++dependencies[edge.get()];
        if (seen.insert(edge.get()).second) {
          stack.push_back(edge.get());
        }
      }
    }
  }

  BackwardScope scope;
  struct ReleaseOnExit {
    const std::vector<Node*>& nodes;
    ~ReleaseOnExit() {
      release_graph(nodes);
    }
  } release_on_exit{visited};

  std::unordered_map<Node*, Tensor> pending_grads;
  pending_grads.emplace(root, Tensor::full(loss.shape(), 1.0));
  std::priority_queue<Node*, std::vector<Node*>, ReadyOrder> ready;
  ready.push(root);

  while (!ready.empty()) {
    Node* node = ready.top();
    ready.pop();
    auto it = pending_grads.find(node);
    Tensor grad = std::move(it->second);
    pending_grads.erase(it);

    if (node->is_leaf()) {
      Parameter* param = node->param;
      param->accumulate_grad(grad);
      // Copy: a hook may register or remove hooks.
      auto hooks = param->hooks_;
      for (const auto& hook : hooks) {
        (*hook)(param->index());
      }
      continue;
    }

    auto input_grads = node->backward(grad);
    BKS_INTERNAL_ASSERT(
        input_grads.size() == node->next.size(),
        "node returned ",
        input_grads.size(),
        " grads for ",
        node->next.size(),
        " edges");
    for (std::size_t i = 0; i < node->next.size(); ++i) {
      Node* edge = node->next[i].get();
      if (!edge) {
        continue;
      }
      auto slot = pending_grads.find(edge);
      if (slot == pending_grads.end()) {
        pending_grads.emplace(edge, std::move(input_grads[i]));
      } else {
        auto dst = slot->second.mutable_data();
        auto src = input_grads[i].data();
        for (std::size_t k = 0; k < dst.size(); ++k) {
          dst[k] += src[k];
        }
      }
      if (--dependencies[edge] == 0) {
        ready.push(edge);
      }
    }
  }

  // Callbacks may queue further callbacks.
  auto& callbacks = scope.context().callbacks;
  for (std::size_t i = 0; i < callbacks.size(); ++i) {
    auto fn = std::move(callbacks[i]);
    fn();
  }
}

std::set<std::size_t> traverse_reachable_params(std::span<const Var> outputs) {
  std::set<std::size_t> params;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack;
  for (const auto& out : outputs) {
    if (out.requires_grad() && seen.insert(out.node().get()).second) {
      stack.push_back(out.node().get());
    }
  }
  while (!stack.empty()) {
    const Node* node = stack.back();
    stack.pop_back();
    if (node->is_leaf()) {
      params.insert(node->param->index());
      continue;
    }
    for (const auto& edge : node->next) {
      if (edge && seen.insert(edge.get()).second) {
        stack.push_back(edge.get());
      }
    }
  }
  return params;
}

} // namespace bks
