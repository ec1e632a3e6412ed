#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace despeckler {

template <typename T>
struct Parameter {
  std::string name;  // e.g. "encoder.stage3.attn.q_proj.weight"
  Tensor<T> tensor;
};

enum class Init { Zeros, Ones, TruncatedNormal, FanInUniform };

/// Owns the parameters of a model in registration order. Names are unique;
/// each parameter draws its initial values from its own Philox stream.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  // fan_in is only used by Init::FanInUniform.
  Tensor<T> create(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1);

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  const Parameter<T>* find(const std::string& name) const;
  std::size_t scalar_count() const;

 private:
  std::uint64_t seed_;
  std::vector<Parameter<T>> params_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out)
      : weight(store.create(prefix + ".weight", {out, in}, Init::TruncatedNormal)),
        bias(store.create(prefix + ".bias", {out}, Init::Zeros)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out, in/groups, k, k]
  Tensor<T> bias;    // [out]
  Conv2dOptions opts;

  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t groups = 1)
      : weight(store.create(prefix + ".weight", {out, in / groups, kernel, kernel},
                            Init::FanInUniform, in / groups * kernel * kernel)),
        bias(store.create(prefix + ".bias", {out}, Init::Zeros)),
        opts{stride, padding, groups} {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, opts); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;    // [dim]
  Tensor<T> offset;  // [dim]

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& prefix, std::size_t dim)
      : gain(store.create(prefix + ".gain", {dim}, Init::Ones)),
        offset(store.create(prefix + ".offset", {dim}, Init::Zeros)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, offset, T(1e-5)); }
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace despeckler
