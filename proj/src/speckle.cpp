#include "speckle.hpp"

#include <cmath>
#include <sstream>

#include "error.hpp"
#include "rng.hpp"

namespace despeckler {

void SpeckleParams::validate() const {
  if (!(looks >= 1.0) || !std::isfinite(looks)) {
    std::ostringstream os;
    os << "number of looks must be a finite value >= 1, got " << looks;
    throw_argument(os.str());
  }
}

double sample_unit_gamma(Philox& rng, double looks) {
  if (looks == 1.0) return -std::log(rng.uniform());
  const double d = looks - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2 || std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
      return d * v / looks;
    }
  }
}

Image sample_speckle(std::size_t height, std::size_t width, const SpeckleParams& params) {
  params.validate();
  if (height == 0 || width == 0) throw_argument("speckle field dimensions must be >= 1");
  Philox rng(params.seed);
  Image field(height, width);
  for (float& v : field.pixels) v = static_cast<float>(sample_unit_gamma(rng, params.looks));
  return field;
}

double speckle_pdf(double n, double looks) {
  SpeckleParams{looks, 0}.validate();
  if (n < 0.0) return 0.0;
  if (n == 0.0) return looks == 1.0 ? 1.0 : 0.0;
  return std::exp(looks * std::log(looks) + (looks - 1.0) * std::log(n) - looks * n -
                  std::lgamma(looks));
}

ImagePair apply_speckle(const Image& clean, const SpeckleParams& params) {
  params.validate();
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean.pixels[i] < 0.0f || !std::isfinite(clean.pixels[i])) {
      throw_data("clean image has an invalid pixel value at index " + std::to_string(i));
    }
  }
  Image noise = sample_speckle(clean.height, clean.width, params);
  ImagePair pair{clean, std::move(noise), params};
  for (std::size_t i = 0; i < clean.size(); ++i) pair.speckled.pixels[i] *= clean.pixels[i];
  return pair;
}

}  // namespace despeckler
