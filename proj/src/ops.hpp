#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace despeckler {

class Philox;

// Differentiable operations. Shapes must match exactly; the only broadcasts
// are per-channel / per-column bias adds and scalar factors.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> sum(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
// x * Phi(x) with the exact (erf-based) normal CDF.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
// Subgradient at 0 is 0.
template <typename T> Tensor<T> abs(const Tensor<T>& a);

// Numerically stable softmax along `axis`. Throws on non-finite input.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// 2-D transpose.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
// [m,k] x [k,n] -> [m,n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x:[N,in], weight:[out,in], bias:[out] (may be undefined) -> [N,out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

// Cross-correlation (no kernel flip) with zero padding.
// input:[C_in,H,W], weight:[C_out,C_in/groups,kh,kw], bias:[C_out] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opts);

// [C,H,W] -> [C,2H,2W], nearest neighbour.
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& a);

// Normalizes over the last dimension: (x - mean) / sqrt(var + eps) * gain + offset.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& offset,
                     T eps = T(1e-5));

// Inverted dropout. rate == 0 returns `a` unchanged.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double rate, Philox& rng);

// Token/feature-map layout helpers: [N,e] <-> [e,H,W] with N = H*W.
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t height, std::size_t width);
template <typename T> Tensor<T> map_to_tokens(const Tensor<T>& map);

}  // namespace despeckler
