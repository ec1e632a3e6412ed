#pragma once

#include <cstddef>
#include <cstdint>

#include "image_io.hpp"

namespace despeckler {

class Philox;

/// Speckle model parameters: number of looks L (>= 1) and the RNG seed.
struct SpeckleParams {
  double looks = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A clean image x and its speckled observation y = x * n.
struct ImagePair {
  Image clean;
  Image speckled;
  SpeckleParams params;
};

// One draw from Gamma(shape = L, scale = 1/L): unit mean, variance 1/L.
// L == 1 uses -ln(U); otherwise Marsaglia-Tsang.
double sample_unit_gamma(Philox& rng, double looks);

// i.i.d. unit-mean gamma field; identical for identical (h, w, params).
Image sample_speckle(std::size_t height, std::size_t width, const SpeckleParams& params);

// Density of the unit-mean gamma: L^L n^(L-1) e^(-L n) / Gamma(L).
double speckle_pdf(double n, double looks);

// y = x * n with n from sample_speckle(params). Rejects negative pixels.
ImagePair apply_speckle(const Image& clean, const SpeckleParams& params);

}  // namespace despeckler
