#include "ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "error.hpp"
#include "rng.hpp"

namespace despeckler {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw_shape(std::string(op) + ": shape mismatch, expected " + shape_str(a.shape()) +
                " but got " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw_shape(std::string(op) + ": expected rank " + std::to_string(rank) + " but got " +
                shape_str(a.shape()));
  }
}

// Adds `g` into the gradient of `t` when it is tracked.
template <typename T>
void accumulate(const Tensor<T>& t, std::span<const T> g) {
  if (!t.requires_grad()) return;
  auto acc = t.grad_accumulator();
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g) mutable {
                              accumulate(a, g);
                              accumulate(b, g);
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g) mutable {
                              accumulate(a, g);
                              if (b.requires_grad()) {
                                auto gb = b.grad_accumulator();
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g) mutable {
                              auto x = a.data();
                              auto y = b.data();
                              if (a.requires_grad()) {
                                auto ga = a.grad_accumulator();
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                              }
                              if (b.requires_grad()) {
                                auto gb = b.grad_accumulator();
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= factor;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a},
                            [a, factor](std::span<const T> g) mutable {
                              auto ga = a.grad_accumulator();
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return Tensor<T>::from_op(Shape{1}, {total}, {a}, [a](std::span<const T> g) mutable {
    auto ga = a.grad_accumulator();
    for (T& v : ga) v += g[0];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [a](std::span<const T> g) mutable {
    auto x = a.data();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T cdf = T(0.5) * (T(1) + std::erf(x[i] / std::numbers::sqrt2_v<T>));
    out[i] = x[i] * cdf;
  }
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [a](std::span<const T> g) mutable {
    auto x = a.data();
    auto ga = a.grad_accumulator();
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] / std::numbers::sqrt2_v<T>));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x[i]);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [a](std::span<const T> g) mutable {
    auto x = a.data();
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) {
        ga[i] += g[i];
      } else if (x[i] < T(0)) {
        ga[i] -= g[i];
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                   shape_str(a.shape()));
  }
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      std::ostringstream os;
      os << "softmax: non-finite input " << x[i] << " at flat index " << i << " of tensor "
         << shape_str(a.shape());
      throw_numeric(os.str());
    }
  }
  const auto& shape = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      T total = T(0);
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
    }
  }
  std::vector<T> y = out;
  return Tensor<T>::from_op(
      shape, std::move(out), {a},
      [a, y = std::move(y), outer, inner, len](std::span<const T> g) mutable {
        auto ga = a.grad_accumulator();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = T(0);
            for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t idx = base + k * inner;
              ga[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw_shape("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::from_op(std::move(shape), std::move(out), {a},
                            [a](std::span<const T> g) mutable { accumulate(a, g); });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(a.numel());
  Map<T>(out.data(), cols, rows) = CMap<T>(a.data().data(), rows, cols).transpose();
  return Tensor<T>::from_op(Shape{cols, rows}, std::move(out), {a},
                            [a, rows, cols](std::span<const T> g) mutable {
                              auto ga = a.grad_accumulator();
                              Map<T>(ga.data(), rows, cols) +=
                                  CMap<T>(g.data(), cols, rows).transpose();
                            });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw_shape("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  Map<T>(out.data(), m, n).noalias() =
      CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  return Tensor<T>::from_op(Shape{m, n}, std::move(out), {a, b},
                            [a, b, m, k, n](std::span<const T> g) mutable {
                              CMap<T> G(g.data(), m, n);
                              if (a.requires_grad()) {
                                Map<T>(a.grad_accumulator().data(), m, k).noalias() +=
                                    G * CMap<T>(b.data().data(), k, n).transpose();
                              }
                              if (b.requires_grad()) {
                                Map<T>(b.grad_accumulator().data(), k, n).noalias() +=
                                    CMap<T>(a.data().data(), m, k).transpose() * G;
                              }
                            });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t rows = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in) {
    throw_shape("linear: weight " + shape_str(weight.shape()) + " does not accept input " +
                shape_str(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{outd}) {
    throw_shape("linear: bias expected [" + std::to_string(outd) + "] but got " +
                shape_str(bias.shape()));
  }
  std::vector<T> out(rows * outd);
  Map<T> Y(out.data(), rows, outd);
  Y.noalias() = CMap<T>(x.data().data(), rows, in) *
                CMap<T>(weight.data().data(), outd, in).transpose();
  if (bias.defined()) {
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), outd);
  }
  std::vector<Tensor<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor<T>::from_op(
      Shape{rows, outd}, std::move(out), std::move(parents),
      [x, weight, bias, rows, in, outd](std::span<const T> g) mutable {
        CMap<T> G(g.data(), rows, outd);
        if (x.requires_grad()) {
          Map<T>(x.grad_accumulator().data(), rows, in).noalias() +=
              G * CMap<T>(weight.data().data(), outd, in);
        }
        if (weight.requires_grad()) {
          Map<T>(weight.grad_accumulator().data(), outd, in).noalias() +=
              G.transpose() * CMap<T>(x.data().data(), rows, in);
        }
        if (bias.defined() && bias.requires_grad()) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.grad_accumulator().data(), outd) +=
              G.colwise().sum();
        }
      });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count) {
  require_rank("slice_cols", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (count == 0 || start + count > cols) {
    throw_shape("slice_cols: columns [" + std::to_string(start) + ", " +
                std::to_string(start + count) + ") out of range for " + shape_str(a.shape()));
  }
  std::vector<T> out(rows * count);
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.begin() + r * cols + start, count, out.begin() + r * count);
  }
  return Tensor<T>::from_op(Shape{rows, count}, std::move(out), {a},
                            [a, rows, cols, start, count](std::span<const T> g) mutable {
                              auto ga = a.grad_accumulator();
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < count; ++c) {
                                  ga[r * cols + start + c] += g[r * count + c];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.dim(0) != rows) {
      throw_shape("concat_cols: row count mismatch, expected " + std::to_string(rows) +
                  " but got " + shape_str(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<T> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    auto x = p.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(x.begin() + r * pc, pc, out.begin() + r * cols + offset);
    }
    offset += pc;
  }
  return Tensor<T>::from_op(Shape{rows, cols}, std::move(out), parts,
                            [parts, rows, cols](std::span<const T> g) mutable {
                              std::size_t offset = 0;
                              for (auto& p : parts) {
                                const std::size_t pc = p.dim(1);
                                if (p.requires_grad()) {
                                  auto gp = p.grad_accumulator();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    for (std::size_t c = 0; c < pc; ++c) {
                                      gp[r * pc + c] += g[r * cols + offset + c];
                                    }
                                  }
                                }
                                offset += pc;
                              }
                            });
}

namespace {

struct ConvGeometry {
  std::size_t channels, height, width;        // input
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;
};

// Unfolds `channels` planes into a [channels*kh*kw, out_h*out_w] matrix.
template <typename T>
void im2col(const T* x, std::size_t channels, const ConvGeometry& g, T* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = xc + iy * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, const ConvGeometry& g, T* x) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* xc = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          const T* src = row + oy * g.out_w;
          T* dst = xc + iy * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opts) {
  require_rank("conv2d input", input, 3);
  require_rank("conv2d weight", weight, 4);
  if (opts.stride == 0 || opts.groups == 0) throw_argument("conv2d: stride and groups must be >= 1");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = weight.dim(0), cg = weight.dim(1), kh = weight.dim(2),
                    kw = weight.dim(3);
  const std::size_t groups = opts.groups;
  if (cin % groups != 0 || cout % groups != 0) {
    throw_shape("conv2d: channels (in " + std::to_string(cin) + ", out " + std::to_string(cout) +
                ") not divisible by groups " + std::to_string(groups));
  }
  if (cg != cin / groups) {
    throw_shape("conv2d: weight expects " + std::to_string(cg) +
                " input channels per group but input has " + std::to_string(cin / groups) +
                " (input " + shape_str(input.shape()) + ", weight " + shape_str(weight.shape()) +
                ")");
  }
  if (h + 2 * opts.padding < kh || w + 2 * opts.padding < kw) {
    throw_shape("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                " larger than padded input " + shape_str(input.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw_shape("conv2d: bias expected [" + std::to_string(cout) + "] but got " +
                shape_str(bias.shape()));
  }
  ConvGeometry geo{cg, h, w, kh, kw, opts.stride, opts.padding,
                   (h + 2 * opts.padding - kh) / opts.stride + 1,
                   (w + 2 * opts.padding - kw) / opts.stride + 1};
  const std::size_t plane = geo.out_h * geo.out_w;
  const std::size_t kdim = cg * kh * kw;
  const std::size_t cog = cout / groups;

  std::vector<T> out(cout * plane);
  std::vector<T> col(kdim * plane);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    im2col(input.data().data() + gi * cg * h * w, cg, geo, col.data());
    Map<T> Y(out.data() + gi * cog * plane, cog, plane);
    Y.noalias() = CMap<T>(weight.data().data() + gi * cog * kdim, cog, kdim) *
                  CMap<T>(col.data(), kdim, plane);
  }
  if (bias.defined()) {
    auto b = bias.data();
    for (std::size_t c = 0; c < cout; ++c) {
      T* row = out.data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) row[i] += b[c];
    }
  }

  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor<T>::from_op(
      Shape{cout, geo.out_h, geo.out_w}, std::move(out), std::move(parents),
      [input, weight, bias, geo, groups, cog, kdim, plane](std::span<const T> g) mutable {
        const std::size_t cg = geo.channels;
        const std::size_t in_plane = geo.height * geo.width;
        std::vector<T> col(kdim * plane);
        std::vector<T> dcol(input.requires_grad() ? kdim * plane : 0);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          CMap<T> G(g.data() + gi * cog * plane, cog, plane);
          if (weight.requires_grad()) {
            im2col(input.data().data() + gi * cg * in_plane, cg, geo, col.data());
            Map<T>(weight.grad_accumulator().data() + gi * cog * kdim, cog, kdim).noalias() +=
                G * CMap<T>(col.data(), kdim, plane).transpose();
          }
          if (input.requires_grad()) {
            Map<T>(dcol.data(), kdim, plane).noalias() =
                CMap<T>(weight.data().data() + gi * cog * kdim, cog, kdim).transpose() * G;
            col2im_add(dcol.data(), cg, geo, input.grad_accumulator().data() + gi * cg * in_plane);
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_accumulator();
          for (std::size_t c = 0; c < gb.size(); ++c) {
            const T* row = g.data() + c * plane;
            T s = T(0);
            for (std::size_t i = 0; i < plane; ++i) s += row[i];
            gb[c] += s;
          }
        }
      });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& a) {
  require_rank("upsample_nearest2x", a, 3);
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<T> out(c * 4 * h * w);
  auto x = a.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const T* src = x.data() + (ch * h + y / 2) * w;
      T* dst = out.data() + (ch * 2 * h + y) * 2 * w;
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
    }
  }
  return Tensor<T>::from_op(Shape{c, 2 * h, 2 * w}, std::move(out), {a},
                            [a, c, h, w](std::span<const T> g) mutable {
                              auto ga = a.grad_accumulator();
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                for (std::size_t y = 0; y < 2 * h; ++y) {
                                  const T* src = g.data() + (ch * 2 * h + y) * 2 * w;
                                  T* dst = ga.data() + (ch * h + y / 2) * w;
                                  for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[xx / 2] += src[xx];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& offset, T eps) {
  const std::size_t n = a.shape().back();
  if (gain.shape() != Shape{n} || offset.shape() != Shape{n}) {
    throw_shape("layer_norm: gain/offset must be [" + std::to_string(n) + "], got " +
                shape_str(gain.shape()) + " and " + shape_str(offset.shape()));
  }
  const std::size_t rows = a.numel() / n;
  auto x = a.data();
  auto gm = gain.data();
  auto bt = offset.data();
  std::vector<T> out(a.numel());
  std::vector<T> xhat(a.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    T mean = T(0);
    for (std::size_t i = 0; i < n; ++i) mean += xr[i];
    mean /= T(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = (xr[i] - mean) * inv;
      xhat[r * n + i] = xh;
      out[r * n + i] = xh * gm[i] + bt[i];
    }
  }
  return Tensor<T>::from_op(
      a.shape(), std::move(out), {a, gain, offset},
      [a, gain, offset, xhat = std::move(xhat), rstd = std::move(rstd), rows,
       n](std::span<const T> g) mutable {
        auto gm = gain.data();
        if (gain.requires_grad() || offset.requires_grad()) {
          std::vector<T> dg(n, T(0)), db(n, T(0));
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < n; ++i) {
              dg[i] += g[r * n + i] * xhat[r * n + i];
              db[i] += g[r * n + i];
            }
          }
          accumulate(gain, std::span<const T>(dg));
          accumulate(offset, std::span<const T>(db));
        }
        if (a.requires_grad()) {
          auto ga = a.grad_accumulator();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t i = 0; i < n; ++i) {
              const T d = g[r * n + i] * gm[i];
              mean_d += d;
              mean_dx += d * xhat[r * n + i];
            }
            mean_d /= T(n);
            mean_dx /= T(n);
            for (std::size_t i = 0; i < n; ++i) {
              const T d = g[r * n + i] * gm[i];
              ga[r * n + i] += rstd[r] * (d - mean_d - xhat[r * n + i] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Philox& rng) {
  if (rate < 0.0 || rate >= 1.0) throw_argument("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(a.numel());
  for (T& m : mask) m = rng.uniform() >= rate ? keep_scale : T(0);
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a},
                            [a, mask = std::move(mask)](std::span<const T> g) mutable {
                              auto ga = a.grad_accumulator();
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                            });
}

template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t height, std::size_t width) {
  require_rank("tokens_to_map", tokens, 2);
  if (tokens.dim(0) != height * width) {
    throw_shape("tokens_to_map: " + std::to_string(tokens.dim(0)) + " tokens cannot form a " +
                std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  return reshape(transpose(tokens), Shape{tokens.dim(1), height, width});
}

template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
  require_rank("map_to_tokens", map, 3);
  return transpose(reshape(map, Shape{map.dim(0), map.dim(1) * map.dim(2)}));
}

#define DESPECKLER_INSTANTIATE_OPS(T)                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> gelu(const Tensor<T>&);                                              \
  template Tensor<T> abs(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
  template Tensor<T> transpose(const Tensor<T>&);                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                            Conv2dOptions);                                               \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> dropout(const Tensor<T>&, double, Philox&);                          \
  template Tensor<T> tokens_to_map(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> map_to_tokens(const Tensor<T>&);

DESPECKLER_INSTANTIATE_OPS(float)
DESPECKLER_INSTANTIATE_OPS(double)

}  // namespace despeckler
