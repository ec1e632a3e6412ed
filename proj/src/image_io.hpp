#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "tensor.hpp"

namespace despeckler {

// Single-channel float image, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }
};

// Reads PNG (8/16-bit; colour is converted to luma), PGM (P2/P5, any maxval)
// or a float tensor file. Integer formats are divided by their max value.
Image read_image(const std::filesystem::path& path);

// 8-bit grayscale PNG preview, values clamped to [0, 1].
void write_png8(const std::filesystem::path& path, const Image& img);
// Binary PGM (P5); maxval 255 or 65535. Values clamped to [0, 1].
void write_pgm(const std::filesystem::path& path, const Image& img, unsigned maxval = 255);

// Float tensor file: 16-byte little-endian header {magic "DSPT", dtype code
// (1 = float32), height, width} followed by height*width float32 values.
void write_tensor_file(const std::filesystem::path& path, const Image& img);
Image read_tensor_file(const std::filesystem::path& path);

bool is_supported_image(const std::filesystem::path& path);

template <typename T> Tensor<T> image_to_tensor(const Image& img);
template <typename T> Image tensor_to_image(const Tensor<T>& t);

// Centre crop to size x size. Requires both dims >= size.
Image center_crop(const Image& img, std::size_t size);
// Reflect-pads (mirror without repeating the edge) to the given dims.
Image reflect_pad(const Image& img, std::size_t height, std::size_t width);
Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);

}  // namespace despeckler
