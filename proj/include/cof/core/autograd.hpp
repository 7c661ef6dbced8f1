#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cof/core/tensor.hpp"

namespace cof {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording for the lifetime of the guard (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // lazily allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.shape() == value.shape() && !value.empty(); }
};

// Handle to a graph node. Copies share the node.
template <class T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int i) const { return node_->value.dim(i); }
  int rank() const { return node_->value.rank(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->has_grad(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  std::shared_ptr<Node<T>> node() const { return node_; }
  Node<T>* raw() const { return node_.get(); }

  // Result node constructed from parents. Records the graph only when grad
  // mode is on and some parent needs gradients.
  static Var make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> fn) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(fn);
    return out;
  }

  // Detached copy sharing no graph history.
  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a scalar (or seeded) output.
template <class T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.raw(), 0);
  seen.insert(root.raw());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = root.raw()->grad_buffer();
  if (seed) {
    seed->check_same(g, "backward seed");
    g += *seed;
  } else {
    for (auto& v : g.values()) v += T(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Free interior graph so activations are released promptly.
  for (Node<T>* n : order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }
}

}  // namespace cof
