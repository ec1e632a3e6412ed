#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "image_io.hpp"

namespace despeckler {

// Returned when a metric is unbounded (zero MSE, zero variance).
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct Region {
  std::string label;
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;

  // Must lie inside the image and cover at least 4 pixels.
  void validate(const Image& img) const;
};

// 10 log10(peak^2 / MSE); +inf when the inputs are identical.
template <typename T>
double psnr(std::span<const T> estimate, std::span<const T> reference, double peak = 1.0);
double psnr(const Image& estimate, const Image& reference, double peak = 1.0);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, averaged over all positions where the window fits.
double ssim(const Image& a, const Image& b, double peak = 1.0);

// mean^2 / variance (population); +inf with a warning for a flat region.
double enl(const Image& img, const Region& region);
// std / mean (population); throws if the mean is not positive.
double cx(const Image& img, const Region& region);

// One region per line: label, x0, y0, width, height (commas or whitespace).
std::vector<Region> read_regions(const std::filesystem::path& path);

struct PairedRow {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> baseline_psnr;  // speckled input vs reference
  std::optional<double> baseline_ssim;
};

struct RegionRow {
  std::string image;
  std::string region;
  double enl = 0.0;
  double cx = 0.0;
};

struct EvalReport {
  std::vector<PairedRow> paired;
  std::vector<RegionRow> regions;

  double mean_psnr() const;
  double mean_ssim() const;
  std::optional<double> mean_baseline_psnr() const;
  std::optional<double> mean_baseline_ssim() const;
  double mean_enl() const;
  double mean_cx() const;

  // Aligned plain-text table.
  std::string table() const;
  // Machine-readable "key=value" lines.
  std::string key_values() const;
};

struct PairedInput {
  std::string name;
  Image estimate;
  Image reference;
  std::optional<Image> speckled;
};

EvalReport evaluate_paired(const std::vector<PairedInput>& inputs, double peak = 1.0);
EvalReport evaluate_regions(const std::vector<std::pair<std::string, Image>>& images,
                            const std::vector<Region>& regions);

}  // namespace despeckler
