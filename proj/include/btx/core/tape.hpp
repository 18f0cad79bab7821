#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <unordered_map>
#include <vector>

#include "btx/core/param.hpp"
#include "btx/core/tensor.hpp"

namespace btx {

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// Reverse-mode tape. Values are reference-stable for the tape lifetime.
// Each recorded value may carry a backward closure that reads the value's
// accumulated gradient and pushes contributions into its inputs. Parameter leaves alias the Parameter's own value and grad, so
// gradients land directly in the store, and a parameter used twice (shared
// encoders) accumulates from both uses.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(const Tensor<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var param(Parameter<T>& p) {
    if (const auto it = param_vars_.find(&p); it != param_vars_.end()) return it->second;
    Node n;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    const Var v = push(std::move(n));
    param_vars_.emplace(&p, v);
    return v;
  }

  // Records an op output. The backward closure is kept only when gradients
  // are enabled and at least one input needs them.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    bool needs = false;
    for (const Var in : inputs) needs = needs || requires_grad(in);
    n.requires_grad = grad_enabled_ && needs;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.param != nullptr ? n.param->value : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient buffer of v, allocated as zeros on first access.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.param != nullptr) return n.param->grad;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    if (!grad_enabled_) throw PreconditionError("backward on a tape recorded without gradients");
    if (value(loss).numel() != 1) {
      throw DimensionError("backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
    }
    if (!requires_grad(loss)) return;
    grad(loss)[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, Var> param_vars_;
};

}  // namespace btx
