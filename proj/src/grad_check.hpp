#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace despeckler {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst;  // "<tensor>[<flat index>] analytic=.. numeric=.."
};

// Relative error |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares backward() gradients of the scalar f(x) against central
/// differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
/// Throws if f is not deterministic (e.g. dropout left enabled).
GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double h = 1e-5);

/// Same comparison over parameter tensors that f() reads. With
/// `max_coords_per_tensor` > 0 a seeded random subset of coordinates is
/// checked per tensor instead of all of them.
GradCheckReport grad_check_params(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params,
                                  std::vector<std::string> names, double h = 1e-5,
                                  std::size_t max_coords_per_tensor = 0,
                                  std::uint64_t seed = 0);

}  // namespace despeckler
