#include "grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "rng.hpp"

namespace despeckler {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  NoGradGuard guard;
  Tensor<double> out = f();
  if (out.numel() != 1) throw_shape("grad_check: function must return a scalar");
  return out.item();
}

void require_deterministic(const std::function<Tensor<double>()>& f) {
  const double first = evaluate(f);
  const double second = evaluate(f);
  if (first != second) {
    throw_argument(
        "grad_check: function is not deterministic (two evaluations differ); switch the model "
        "to inference mode / disable dropout before checking gradients");
  }
}

std::vector<std::size_t> pick_coordinates(std::size_t n, std::size_t limit, Philox& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check_params(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params,
                                  std::vector<std::string> names, double h,
                                  std::size_t max_coords_per_tensor, std::uint64_t seed) {
  if (names.size() != params.size()) names.resize(params.size());
  require_deterministic(f);

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor<double> loss = f();
  if (loss.numel() != 1) throw_shape("grad_check: function must return a scalar");
  loss.backward();

  GradCheckReport report;
  Philox rng(seed, 0x6772616463686bULL);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<double>& p = params[t];
    std::vector<double> analytic = p.has_grad()
                                       ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(p.numel(), 0.0);
    auto values = p.mutable_data();
    for (std::size_t i : pick_coordinates(p.numel(), max_coords_per_tensor, rng)) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = evaluate(f);
      values[i] = saved - h;
      const double minus = evaluate(f);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      ++report.coordinates_checked;
      if (err > report.max_rel_error || report.worst.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        std::ostringstream os;
        os << (names[t].empty() ? "param" + std::to_string(t) : names[t]) << '[' << i
           << "] analytic=" << analytic[i] << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double h) {
  Tensor<double> leaf = x.detach();
  return grad_check_params([&] { return f(leaf); }, {leaf}, {"x"}, h);
}

}  // namespace despeckler
