#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace despeckler {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

// Backpropagation record. `backward` receives the gradient of the node's
// output and accumulates into the gradients of its parents.
template <typename T>
struct Node {
  std::vector<Tensor<T>> parents;
  std::function<void(std::span<const T> grad_out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when no gradient has been accumulated
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;
};

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// Copies share storage (handle semantics). Values are fixed once built;
/// only the gradient accumulator and leaf data touched by an optimizer change.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  // Writable view of the values. Only meaningful for leaves (parameters,
  // inputs); mutating an interior node invalidates its recorded backward.
  std::span<T> mutable_data() const { return impl_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return impl_->node == nullptr; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  // Returns the accumulator, allocating zeros on first use.
  std::span<T> grad_accumulator() const;
  void zero_grad() const;

  // Reverse sweep from this scalar. Interior gradients are recomputed on
  // every call; leaf gradients accumulate until zero_grad().
  void backward() const;

  // Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return impl_->node; }
  TensorImpl<T>* impl() const { return impl_.get(); }

  // Builds an op result. History is recorded only when gradient mode is on
  // and at least one parent requires a gradient.
  static Tensor from_op(Shape shape, std::vector<T> data,
                        std::vector<Tensor> parents,
                        std::function<void(std::span<const T>)> backward);

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Thread-local switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace despeckler
