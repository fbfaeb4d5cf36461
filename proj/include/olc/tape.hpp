#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "olc/tensor.hpp"

namespace olc {

// Learnable tensor. Gradients accumulate into `grad` when a tape that
// touched the parameter runs backward. Frozen parameters never receive
// gradient but still pass gradient through to their consumers' inputs.
template <typename S>
struct Param {
  Tensor<S> value;
  Tensor<S> grad;
  bool frozen = false;

  Param() = default;
  explicit Param(Tensor<S> v) : value(std::move(v)), grad(zeros_like(value)) {}

  void zero_grad() { grad.data.setZero(); }
};

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode tape over Tensor ops. One tape per forward/backward cycle.
// Ops are free functions (see ops.hpp / conv.hpp) that push nodes whose
// backward closures capture node indices. The arena is a deque so values
// stay referenceable while later nodes are pushed.
template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape<S>&)>;

  Var push(Tensor<S> val, bool needs_grad) {
    nodes_.push_back(Node{std::move(val), Tensor<S>{}, nullptr, needs_grad});
    return Var{int(nodes_.size()) - 1};
  }

  void set_back(Var v, BackFn fn) { nodes_[v.i].back = std::move(fn); }

  Var leaf(Tensor<S> v, bool needs_grad = false) {
    return push(std::move(v), needs_grad);
  }

  // Binds a parameter once per tape; repeated calls return the same node.
  Var param(Param<S>& p) {
    auto it = param_vars_.find(&p);
    if (it != param_vars_.end()) return Var{it->second};
    Var v = push(p.value, !p.frozen);
    param_vars_.emplace(&p, v.i);
    if (!p.frozen) param_hooks_.emplace_back(v.i, &p);
    return v;
  }

  const Tensor<S>& val(Var v) const { return nodes_[v.i].val; }
  bool needs_grad(Var v) const { return nodes_[v.i].needs_grad; }

  // Gradient buffer, allocated zero on first touch.
  Tensor<S>& grad(Var v) {
    Node& n = nodes_[v.i];
    if (n.grad.empty() && n.val.size() > 0) n.grad = zeros_like(n.val);
    return n.grad;
  }

  bool has_grad(Var v) const { return !nodes_[v.i].grad.empty(); }

  void backward(Var loss) {
    check_arg(loss.valid() && nodes_[loss.i].val.size() == 1,
              "backward: loss must be a scalar node");
    grad(loss).data.setConstant(S(1));
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.back) continue;
      n.back(*this);
    }
    for (auto& [idx, p] : param_hooks_) {
      if (!nodes_[idx].grad.empty()) p->grad.data += nodes_[idx].grad.data;
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> val;
    Tensor<S> grad;
    BackFn back;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Param<S>*, int> param_vars_;
  std::vector<std::pair<int, Param<S>*>> param_hooks_;
};

}  // namespace olc
