#include "loss.hpp"

#include <cmath>

#include "error.hpp"
#include "ops.hpp"

namespace despeckler {

void LossWeights::validate() const {
  if (!(l2 >= 0.0) || !(tv >= 0.0) || !std::isfinite(l2) || !std::isfinite(tv)) {
    throw_argument("loss weights must be finite and non-negative");
  }
}

template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target, bool normalize) {
  if (pred.shape() != target.shape()) {
    throw_shape("l2_loss: prediction " + shape_str(pred.shape()) + " and target " +
                shape_str(target.shape()) + " differ");
  }
  Tensor<T> diff = sub(pred, target);
  Tensor<T> total = sum(mul(diff, diff));
  return normalize ? scale(total, T(1) / static_cast<T>(pred.numel())) : total;
}

template <typename T>
Tensor<T> tv_loss(const Tensor<T>& pred, bool normalize) {
  if (pred.rank() != 3 || pred.dim(0) != 1) {
    throw_shape("tv_loss expects a [1,H,W] image, got " + shape_str(pred.shape()));
  }
  const std::size_t h = pred.dim(1), w = pred.dim(2);
  if (h < 2 || w < 2) throw_shape("tv_loss: image must be at least 2x2, got " + shape_str(pred.shape()));

  auto x = pred.data();
  T total = T(0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const T v = x[i * w + j];
      if (i + 1 < h) total += std::abs(x[(i + 1) * w + j] - v);
      if (j + 1 < w) total += std::abs(x[i * w + j + 1] - v);
    }
  }
  const std::size_t terms = (h - 1) * w + h * (w - 1);
  const T factor = normalize ? T(1) / static_cast<T>(terms) : T(1);
  auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
  return Tensor<T>::from_op(
      Shape{1}, {total * factor}, {pred},
      [pred, h, w, factor, sign](std::span<const T> g) mutable {
        auto x = pred.data();
        auto gx = pred.grad_accumulator();
        const T s = g[0] * factor;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t c = i * w + j;
            if (i + 1 < h) {
              const T d = sign(x[c + w] - x[c]) * s;
              gx[c + w] += d;
              gx[c] -= d;
            }
            if (j + 1 < w) {
              const T d = sign(x[c + 1] - x[c]) * s;
              gx[c + 1] += d;
              gx[c] -= d;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& weights,
                     bool normalize) {
  weights.validate();
  return add(scale(l2_loss(pred, target, normalize), static_cast<T>(weights.l2)),
             scale(tv_loss(pred, normalize), static_cast<T>(weights.tv)));
}

template Tensor<float> l2_loss(const Tensor<float>&, const Tensor<float>&, bool);
template Tensor<double> l2_loss(const Tensor<double>&, const Tensor<double>&, bool);
template Tensor<float> tv_loss(const Tensor<float>&, bool);
template Tensor<double> tv_loss(const Tensor<double>&, bool);
template Tensor<float> total_loss(const Tensor<float>&, const Tensor<float>&, const LossWeights&, bool);
template Tensor<double> total_loss(const Tensor<double>&, const Tensor<double>&, const LossWeights&,
                                   bool);

}  // namespace despeckler
