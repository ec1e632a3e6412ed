#pragma once

// Shared fixtures: procedural clean scenes, temporary directories and small
// brute-force helpers used as test oracles.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "image_io.hpp"
#include "tensor.hpp"

namespace testing {

namespace fs = std::filesystem;

// Piecewise-smooth scene in [0.05, 0.95]: a shallow gradient with a few
// constant rectangles and discs on top.
inline despeckler::Image synthetic_scene(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  despeckler::Image img(h, w);
  const double gx = 0.3 * (u(rng) - 0.5), gy = 0.3 * (u(rng) - 0.5), base = 0.3 + 0.3 * u(rng);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      img.at(y, x) = static_cast<float>(base + gx * x / w + gy * y / h);
    }
  }
  const int shapes = 3 + static_cast<int>(u(rng) * 3);
  for (int s = 0; s < shapes; ++s) {
    const double value = 0.1 + 0.8 * u(rng);
    const double cx = u(rng) * w, cy = u(rng) * h;
    const double rx = (0.1 + 0.25 * u(rng)) * w, ry = (0.1 + 0.25 * u(rng)) * h;
    const bool disc = u(rng) < 0.5;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) img.at(y, x) = static_cast<float>(value);
      }
    }
  }
  for (auto& p : img.pixels) p = std::clamp(p, 0.05f, 0.95f);
  return img;
}

// Writes `count` scenes as 8-bit PGM files named scene_NNN.pgm.
inline void write_corpus(const fs::path& dir, std::size_t count, std::size_t h, std::size_t w,
                         std::uint64_t seed = 1) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03zu.pgm", i);
    despeckler::write_pgm(dir / name, synthetic_scene(h, w, seed + i));
  }
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("despeckler-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

template <typename T>
despeckler::Tensor<T> random_tensor(despeckler::Shape shape, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(despeckler::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return despeckler::Tensor<T>(std::move(shape), std::move(v));
}

inline std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace testing
