#include "image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>

#include "error.hpp"

namespace despeckler {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kTensorMagic = {'D', 'S', 'P', 'T'};
constexpr std::uint32_t kFloat32Code = 1;

std::string lower_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

// --- PGM -------------------------------------------------------------------

Image read_pgm(const fs::path& path) {
  const std::vector<unsigned char> bytes = read_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> unsigned long {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      throw_data(path.string() + ": malformed PGM header");
    }
    unsigned long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) {
    throw_data(path.string() + ": not a grayscale PGM (P2/P5)");
  }
  const bool binary = bytes[1] == '5';
  pos = 2;
  const unsigned long w = read_int();
  const unsigned long h = read_int();
  const unsigned long maxval = read_int();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw_data(path.string() + ": invalid PGM dimensions or maxval");
  }
  Image img(h, w);
  const float scale = 1.0f / static_cast<float>(maxval);
  if (binary) {
    ++pos;  // single whitespace after maxval
    const std::size_t bps = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + img.size() * bps) throw_data(path.string() + ": truncated PGM data");
    for (std::size_t i = 0; i < img.size(); ++i) {
      unsigned v = bps == 2 ? (bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1] : bytes[pos + i];
      img.pixels[i] = static_cast<float>(v) * scale;
    }
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<float>(read_int()) * scale;
  }
  return img;
}

// --- PNG -------------------------------------------------------------------

struct PngReadState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadState() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

Image read_png(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw_data("cannot open " + path.string());
  std::string err;
  PngReadState st;
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!st.png) throw_data("libpng: out of memory");
  st.info = png_create_info_struct(st.png);
  if (!st.info) throw_data("libpng: out of memory");

  Image img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raw;
  int bit_depth = 8;
  if (setjmp(png_jmpbuf(st.png))) {
    throw_data(path.string() + ": invalid PNG (" + err + ")");
  }
  png_init_io(st.png, fp.get());
  png_read_info(st.png, st.info);
  const png_uint_32 w = png_get_image_width(st.png, st.info);
  const png_uint_32 h = png_get_image_height(st.png, st.info);
  const int color = png_get_color_type(st.png, st.info);
  bit_depth = png_get_bit_depth(st.png, st.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(st.png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(st.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(st.png);
  if (png_get_valid(st.png, st.info, PNG_INFO_tRNS)) png_set_strip_alpha(st.png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(st.png, 1, -1, -1);
  }
  png_read_update_info(st.png, st.info);
  bit_depth = png_get_bit_depth(st.png, st.info);
  const png_size_t stride = png_get_rowbytes(st.png, st.info);
  raw.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(st.png, rows.data());
  png_read_end(st.png, nullptr);

  img = Image(h, w);
  const float scale = bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  for (png_uint_32 y = 0; y < h; ++y) {
    const unsigned char* r = rows[y];
    for (png_uint_32 x = 0; x < w; ++x) {
      const unsigned v = bit_depth == 16 ? (r[2 * x] << 8) | r[2 * x + 1] : r[x];
      img.at(y, x) = static_cast<float>(v) * scale;
    }
  }
  return img;
}

}  // namespace

bool is_supported_image(const fs::path& path) {
  const std::string ext = lower_ext(path);
  return ext == ".png" || ext == ".pgm" || ext == ".f32";
}

Image read_image(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".f32") return read_tensor_file(path);
  throw_data(path.string() + ": unsupported image format (expected .png, .pgm or .f32)");
}

void write_png8(const fs::path& path, const Image& img) {
  png_image out;
  std::memset(&out, 0, sizeof(out));
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(img.width);
  out.height = static_cast<png_uint_32>(img.height);
  out.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(img.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<unsigned char>(std::lround(clamp01(img.pixels[i]) * 255.0f));
  }
  if (!png_image_write_to_file(&out, path.c_str(), 0, buf.data(), 0, nullptr)) {
    std::string msg = out.message;
    png_image_free(&out);
    throw_data("cannot write " + path.string() + ": " + msg);
  }
}

void write_pgm(const fs::path& path, const Image& img, unsigned maxval) {
  if (maxval != 255 && maxval != 65535) throw_argument("write_pgm: maxval must be 255 or 65535");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_data("cannot write " + path.string());
  os << "P5\n" << img.width << ' ' << img.height << '\n' << maxval << '\n';
  for (float v : img.pixels) {
    const unsigned q = static_cast<unsigned>(std::lround(clamp01(v) * static_cast<float>(maxval)));
    if (maxval > 255) os.put(static_cast<char>(q >> 8));
    os.put(static_cast<char>(q & 0xFF));
  }
  if (!os) throw_data("write failed: " + path.string());
}

void write_tensor_file(const fs::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_data("cannot write " + path.string());
  os.write(kTensorMagic.data(), 4);
  put_u32(os, kFloat32Code);
  put_u32(os, static_cast<std::uint32_t>(img.height));
  put_u32(os, static_cast<std::uint32_t>(img.width));
  for (float v : img.pixels) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
  }
  if (!os) throw_data("write failed: " + path.string());
}

Image read_tensor_file(const fs::path& path) {
  const std::vector<unsigned char> bytes = read_bytes(path);
  if (bytes.size() < 16 || !std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin())) {
    throw_data(path.string() + ": not a float tensor file (bad magic)");
  }
  if (get_u32(bytes.data() + 4) != kFloat32Code) {
    throw_data(path.string() + ": unsupported dtype code " + std::to_string(get_u32(bytes.data() + 4)));
  }
  const std::size_t h = get_u32(bytes.data() + 8);
  const std::size_t w = get_u32(bytes.data() + 12);
  if (h == 0 || w == 0 || bytes.size() != 16 + 4 * h * w) {
    throw_data(path.string() + ": tensor file size does not match its header");
  }
  Image img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint32_t bits = get_u32(bytes.data() + 16 + 4 * i);
    std::memcpy(&img.pixels[i], &bits, 4);
  }
  return img;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  return Tensor<T>(Shape{1, img.height, img.width},
                   std::vector<T>(img.pixels.begin(), img.pixels.end()));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 1) {
    throw_shape("expected a [1,H,W] tensor, got " + shape_str(t.shape()));
  }
  Image img(t.dim(1), t.dim(2));
  std::transform(t.data().begin(), t.data().end(), img.pixels.begin(),
                 [](T v) { return static_cast<float>(v); });
  return img;
}

template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);
template Image tensor_to_image<float>(const Tensor<float>&);
template Image tensor_to_image<double>(const Tensor<double>&);

Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > img.height || x0 + w > img.width) {
    throw_shape("crop window exceeds the image bounds");
  }
  Image out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(img.pixels.begin() + (y0 + y) * img.width + x0, w, out.pixels.begin() + y * w);
  }
  return out;
}

Image center_crop(const Image& img, std::size_t size) {
  if (img.height < size || img.width < size) {
    throw_shape("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                " is smaller than the patch size " + std::to_string(size));
  }
  return crop(img, (img.height - size) / 2, (img.width - size) / 2, size, size);
}

namespace {
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}
}  // namespace

Image reflect_pad(const Image& img, std::size_t height, std::size_t width) {
  if (height < img.height || width < img.width) throw_argument("reflect_pad: target smaller than image");
  Image out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y), img.height);
    for (std::size_t x = 0; x < width; ++x) {
      out.at(y, x) = img.at(sy, reflect_index(static_cast<std::ptrdiff_t>(x), img.width));
    }
  }
  return out;
}

}  // namespace despeckler
