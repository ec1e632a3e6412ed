#pragma once

#include "tensor.hpp"

namespace despeckler {

struct LossWeights {
  double l2 = 1.0;   // lambda1
  double tv = 5e-5;  // lambda2

  void validate() const;
};

// ||pred - target||_2^2 (a sum). With `normalize`, divided by the pixel count.
template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target, bool normalize = false);

// Anisotropic total variation of a [1,H,W] image:
// sum |x[i+1,j] - x[i,j]| + sum |x[i,j+1] - x[i,j]| over valid neighbours.
// With `normalize`, divided by the number of difference terms.
template <typename T>
Tensor<T> tv_loss(const Tensor<T>& pred, bool normalize = false);

// lambda1 * l2 + lambda2 * tv. Terms with zero weight are still part of the
// graph so parameter gradients are exactly zero, not missing.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& weights,
                     bool normalize = false);

}  // namespace despeckler
