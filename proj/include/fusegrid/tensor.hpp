#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fusegrid {

class Tensor;

namespace detail {

struct TensorImpl;

/// Backward recipe attached to an op output. Holds the producing op's inputs
/// (keeping the graph alive) and a closure that routes the output gradient
/// into the inputs' gradients. The closure receives the output impl rather
/// than a Tensor handle so recipes never own their own output.
struct AutogradNode {
  const char* op = "";
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated only when requires_grad
  bool requires_grad = false;
  std::shared_ptr<AutogradNode> node;  // null for leaves
};

}  // namespace detail

/// Dense float32 N-D array with reverse-mode autodiff. Shapes use the layout
/// order [batch, channel, depth, height, width] for 5-D activations; data is
/// row-major in that order. Handles share storage; copying a Tensor copies
/// the handle, not the buffer.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> data() { return impl_->data; }

  /// Gradient buffer; empty span until allocated by ensure_grad()/backward().
  std::span<const float> grad() const { return impl_->grad; }
  std::span<float> grad() { return impl_->grad; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value);

  /// Allocates (zero-filled) the gradient buffer of a requires-grad tensor.
  void ensure_grad();
  void zero_grad();

  /// Value of a single-element tensor.
  float item() const;

  detail::TensorImpl* impl() const { return impl_.get(); }

private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// A named leaf tensor with requires_grad=true. Names are dotted paths,
/// unique within one model ("branch1.conv3.weight").
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Whether ops record backward recipes on this thread.
bool grad_enabled();

/// RAII switch that disables recipe recording (eval-mode forwards).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool prev_;
};

/// Reverse-mode sweep from a scalar loss. Accumulates dLoss/dθ into every
/// reachable leaf's grad; intermediate gradients are rebuilt per call, so
/// calling twice without zero_grad accumulates on the leaves.
void backward(const Tensor& loss);

}  // namespace fusegrid
