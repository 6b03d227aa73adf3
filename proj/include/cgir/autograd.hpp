#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cgir/tensor.hpp"

namespace cgir {

// Reverse-mode tape. Each op builds a Node whose backward_fn consumes the
// node's output gradient and accumulates into the parents' gradients, using
// tensors that the op's closure captured at forward time (closures must not
// read value buffers through captured nodes, so the engine stays free to drop
// intermediate gradients as soon as they have been consumed).
class Node {
 public:
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor& grad_out)> backward_fn;
  bool requires_grad = false;
  bool is_leaf = false;
};

using NodePtr = std::shared_ptr<Node>;

bool grad_enabled();
void set_grad_enabled(bool on);

// RAII scope that disables graph construction (inference / metric paths).
struct NoGrad {
  NoGrad() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGrad() { set_grad_enabled(prev_); }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  // Leaf. requires_grad leaves are what optimizers read gradients from.
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var scalar(Scalar v) { return constant(Tensor::scalar(v)); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& val() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int i) const { return node_->value.dim(i); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor& grad() const { return node_->grad; }
  const NodePtr& node() const { return node_; }

  // Scalar convenience for {1}-shaped results.
  Scalar item() const {
    check_shape(node_ && node_->value.numel() == 1, "Var::item: not a scalar");
    return node_->value[0];
  }

 private:
  NodePtr node_;
};

// Builds an interior node. Parents that do not require grad are kept for
// shape/debug purposes but receive no gradient. When grad is globally
// disabled, or no parent requires grad, the node is constant and backward_fn
// is dropped.
Var make_op(Tensor value, std::vector<NodePtr> parents,
            std::function<void(const Tensor&)> backward_fn);

// Adds g into n's gradient buffer (allocating on first touch). No-op when n
// does not require grad.
void accumulate_grad(Node& n, const Tensor& g);

// Runs reverse-mode accumulation from a scalar root. Interior gradients are
// released as soon as their backward_fn has consumed them; leaf gradients
// survive for the caller.
void backward(const Var& root);

}  // namespace cgir
