#include "cgir/autograd.hpp"

#include <unordered_set>

namespace cgir {

namespace {
bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var::Var(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && g_grad_enabled;
  n->is_leaf = n->requires_grad;
  node_ = std::move(n);
}

Var make_op(Tensor value, std::vector<NodePtr> parents,
            std::function<void(const Tensor&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p && p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

void accumulate_grad(Node& n, const Tensor& g) {
  if (!n.requires_grad) return;
  check_shape(g.shape() == n.value.shape(),
              "accumulate_grad: gradient shape " + shape_str(g.shape()) +
                  " does not match value shape " + shape_str(n.value.shape()));
  if (!n.grad.defined()) {
    n.grad = g.clone();
    return;
  }
  Scalar* dst = n.grad.data();
  const Scalar* src = g.data();
  const int64_t m = n.grad.numel();
  for (int64_t i = 0; i < m; ++i) dst[i] += src[i];
}

void backward(const Var& root) {
  check_param(root.defined(), "backward: undefined root");
  check_shape(root.numel() == 1, "backward: root must be a scalar");
  Node* rn = root.node().get();
  if (!rn->requires_grad) return;

  // Iterative post-order DFS; the post-order list is a valid topological
  // order (parents before children), so we walk it back to front.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(rn, 0);
  visited.insert(rn);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  rn->grad = Tensor::full(rn->value.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.defined()) {
      node->backward_fn(node->grad);
    }
    if (!node->is_leaf) {
      node->grad = Tensor();
    }
  }
}

}  // namespace cgir
