#include "layers.hpp"

#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace despeckler {

template <typename T>
Tensor<T> ParameterStore<T>::create(const std::string& name, Shape shape, Init init,
                                    std::size_t fan_in) {
  if (find(name) != nullptr) throw_argument("duplicate parameter name: " + name);
  Tensor<T> t(std::move(shape));
  Philox rng(seed_, params_.size());
  auto values = t.mutable_data();
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      for (T& v : values) v = T(1);
      break;
    case Init::TruncatedNormal:
      // sigma 0.02, truncated at two standard deviations
      for (T& v : values) {
        double z;
        do {
          z = rng.normal();
        } while (std::abs(z) > 2.0);
        v = static_cast<T>(0.02 * z);
      }
      break;
    case Init::FanInUniform: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (T& v : values) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
      break;
    }
  }
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace despeckler
