#include "fusegrid/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "fusegrid/errors.hpp"

namespace fusegrid {

namespace {

thread_local bool g_grad_enabled = true;

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  impl->data.assign(static_cast<size_t>(shape_numel(impl->shape)), 0.0f);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  if (static_cast<std::int64_t>(data.size()) != shape_numel(impl->shape))
    throw ShapeError("from_data: payload length does not match shape");
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

void Tensor::set_requires_grad(bool value) {
  if (impl_->node) throw ValidationError("requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

void Tensor::ensure_grad() {
  if (!impl_->requires_grad) return;
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (impl_->data.size() != 1)
    throw ValidationError("item() requires a single-element tensor");
  return impl_->data[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace {

// Post-order DFS over producing nodes; iterative so deep graphs cannot
// overflow the stack.
void topo_collect(detail::TensorImpl* root, std::vector<detail::TensorImpl*>& order) {
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (!impl->node || next >= impl->node->inputs.size()) {
      order.push_back(impl);
      stack.pop_back();
      continue;
    }
    detail::TensorImpl* child = impl->node->inputs[next++].impl();
    if (seen.insert(child).second) stack.emplace_back(child, 0);
  }
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ValidationError("backward: loss must be a scalar tensor");
  if (!loss.requires_grad()) return;  // no recorded recipe reaches a parameter

  std::vector<detail::TensorImpl*> order;
  topo_collect(loss.impl(), order);

  // Intermediates get fresh gradients every sweep; leaves keep accumulating.
  for (detail::TensorImpl* impl : order) {
    if (!impl->requires_grad) continue;
    if (impl->node || impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
  }

  loss.impl()->grad[0] += 1.0f;

  // Reverse topological order: all consumers of a tensor fire before its
  // producing node, so out.grad is complete when the recipe runs.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (impl->node && impl->requires_grad) impl->node->backward(*impl);
  }
}

}  // namespace fusegrid
