#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scalar/numerics/tensor.hpp"

namespace scalar {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into `self.parents[i]->grad`.
  std::function<void(Node& self)> backward;
};

// Handle to a node of the recorded computation. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var parameter(Tensor<T> value);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t axis) const { return node_->value.dim(axis); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros of the value's shape when nothing has flowed into this node.
  Tensor<T> grad() const;
  void zero_grad() { node_->grad = Tensor<T>(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables recording of backward closures on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds the node for an op result. When no parent requires a gradient (or
// recording is disabled) the closure and parent links are dropped.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward);

template <class T>
void accumulate_grad(Node<T>& node, const Tensor<T>& g);
template <class T>
void accumulate_grad(Node<T>& node, Tensor<T>&& g);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every node
// that requires one; leaves keep theirs for the optimizer to read.
template <class T>
void backward(const Var<T>& loss);

extern template class Var<float>;
extern template class Var<double>;

}  // namespace scalar
