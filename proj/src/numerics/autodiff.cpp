#include "scalar/numerics/autodiff.hpp"

#include <unordered_set>

namespace scalar {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var(std::move(n));
}

template <class T>
Var<T> Var<T>::parameter(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

template <class T>
Tensor<T> Var<T>::grad() const {
  if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.ptr());
      n->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

template <class T>
void accumulate_grad(Node<T>& node, const Tensor<T>& g) {
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = g;
    return;
  }
  T* dst = node.grad.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <class T>
void accumulate_grad(Node<T>& node, Tensor<T>&& g) {
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = std::move(g);
    return;
  }
  T* dst = node.grad.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <class T>
void backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reverse of it is a valid topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  accumulate_grad(*loss.node(), Tensor<T>::full(loss.shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
      if (!n->parents.empty()) n->grad = Tensor<T>();  // interior buffer no longer needed
    }
  }
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>);
template void accumulate_grad(Node<float>&, const Tensor<float>&);
template void accumulate_grad(Node<double>&, const Tensor<double>&);
template void accumulate_grad(Node<float>&, Tensor<float>&&);
template void accumulate_grad(Node<double>&, Tensor<double>&&);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace scalar
