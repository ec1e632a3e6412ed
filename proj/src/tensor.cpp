#include "tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "error.hpp"

namespace despeckler {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw_shape("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw_shape("tensor extents must be positive, got " + shape_str(shape));
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw_shape("tensor data length " + std::to_string(data.size()) +
                " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw_shape("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw_shape("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw_shape("index out of range for " + shape_str(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_accumulator() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                             std::function<void(std::span<const T>)> backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  bool tracked = std::any_of(parents.begin(), parents.end(),
                             [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (!tracked) return out;
  auto node = std::make_shared<Node<T>>();
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

template <typename T>
void Tensor<T>::backward() const {
  if (!defined() || numel() != 1) {
    throw_shape("backward() requires a scalar loss, got " +
                (defined() ? shape_str(shape()) : std::string("undefined tensor")));
  }
  if (!requires_grad()) throw_argument("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next_parent] = stack.back();
    const std::size_t n_parents = cur->node ? cur->node->parents.size() : 0;
    if (next_parent < n_parents) {
      TensorImpl<T>* p = cur->node->parents[next_parent++].impl();
      if (p != nullptr && p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  for (TensorImpl<T>* t : order) {
    if (t->node) t->grad.assign(t->data.size(), T(0));
  }
  if (impl_->grad.empty()) impl_->grad.assign(1, T(0));
  impl_->grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* t = *it;
    if (t->node && t->node->backward) t->node->backward(t->grad);
  }
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> cast<float, double>(const Tensor<double>&);
template Tensor<double> cast<double, float>(const Tensor<float>&);
template Tensor<float> cast<float, float>(const Tensor<float>&);
template Tensor<double> cast<double, double>(const Tensor<double>&);

}  // namespace despeckler
