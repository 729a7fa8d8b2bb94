#pragma once

#include "acdr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T> void add_into(Node<T> &parent, const std::vector<T> &delta) {
  if (!parent.requires_grad)
    return;
  auto &g = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] += delta[i];
}

// NCHW view of a rank-3 ([c,h,w]) or rank-4 tensor.
struct Dims4 {
  std::size_t n, c, h, w;
  bool batched;
};

inline Dims4 image_dims(const Shape &s, const char *op) {
  if (s.size() == 3)
    return {1, s[0], s[1], s[2], false};
  if (s.size() == 4)
    return {s[0], s[1], s[2], s[3], true};
  throw std::invalid_argument(std::string(op) +
                              ": expected [c,h,w] or [n,c,h,w], got " +
                              to_string(s));
}

inline Shape make_image_shape(bool batched, std::size_t n, std::size_t c,
                              std::size_t h, std::size_t w) {
  return batched ? Shape{n, c, h, w} : Shape{c, h, w};
}

inline void require_same_shape(const Shape &a, const Shape &b, const char *op) {
  if (a != b)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                to_string(a) + " vs " + to_string(b));
}

// Column matrix [c*kh*kw, oh*ow] for one sample.
template <class T>
void im2col(const T *in, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T *cols) {
  const std::size_t plane = oh * ow;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T *row = cols + ((ci * kh + ky) * kw + kx) * plane;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          T *dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T *src = in + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                          ? T(0)
                          : src[ix];
          }
        }
      }
}

template <class T>
void col2im(const T *cols, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T *out) {
  const std::size_t plane = oh * ow;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T *row = cols + ((ci * kh + ky) * kw + kx) * plane;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h))
            continue;
          T *dst = out + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
              dst[ix] += row[oy * ow + ox];
          }
        }
      }
}

} // namespace detail

//------------------------------------------------------------------------------
// Elementwise and reductions

template <class T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] + b[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [](const Node<T> &self) {
                              detail::add_into(*self.parents[0], self.grad);
                              detail::add_into(*self.parents[1], self.grad);
                            });
}

template <class T> Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] - b[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [](const Node<T> &self) {
                              detail::add_into(*self.parents[0], self.grad);
                              auto neg = self.grad;
                              for (auto &v : neg)
                                v = -v;
                              detail::add_into(*self.parents[1], neg);
                            });
}

template <class T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] * b[i];
  return Tensor<T>::from_op(
      a.shape(), std::move(out), {a, b}, [](const Node<T> &self) {
        const auto &av = self.parents[0]->values;
        const auto &bv = self.parents[1]->values;
        std::vector<T> da(av.size()), db(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) {
          da[i] = self.grad[i] * bv[i];
          db[i] = self.grad[i] * av[i];
        }
        detail::add_into(*self.parents[0], da);
        detail::add_into(*self.parents[1], db);
      });
}

//! scale * a + offset, elementwise.
template <class T> Tensor<T> affine(const Tensor<T> &a, T scale, T offset) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = scale * a[i] + offset;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a},
                            [scale](const Node<T> &self) {
                              auto d = self.grad;
                              for (auto &v : d)
                                v *= scale;
                              detail::add_into(*self.parents[0], d);
                            });
}

template <class T> Tensor<T> scale(const Tensor<T> &a, T s) {
  return affine(a, s, T(0));
}

template <class T> Tensor<T> sum(const Tensor<T> &a) {
  T total = T(0);
  for (T v : a.values())
    total += v;
  return Tensor<T>::from_op(Shape{}, {total}, {a}, [](const Node<T> &self) {
    std::vector<T> d(self.parents[0]->values.size(), self.grad[0]);
    detail::add_into(*self.parents[0], d);
  });
}

template <class T> Tensor<T> mean(const Tensor<T> &a) {
  if (a.size() == 0)
    throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

//! Mean over all elements of (a - b)^2.
template <class T> Tensor<T> mse(const Tensor<T> &a, const Tensor<T> &b) {
  detail::require_same_shape(a.shape(), b.shape(), "mse");
  if (a.size() == 0)
    throw std::invalid_argument("mse: empty tensors");
  T total = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    total += d * d;
  }
  const T inv_n = T(1) / static_cast<T>(a.size());
  return Tensor<T>::from_op(
      Shape{}, {total * inv_n}, {a, b}, [inv_n](const Node<T> &self) {
        const auto &av = self.parents[0]->values;
        const auto &bv = self.parents[1]->values;
        std::vector<T> da(av.size()), db(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) {
          da[i] = T(2) * (av[i] - bv[i]) * inv_n * self.grad[0];
          db[i] = -da[i];
        }
        detail::add_into(*self.parents[0], da);
        detail::add_into(*self.parents[1], db);
      });
}

template <class T> Tensor<T> relu(const Tensor<T> &a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] > T(0) ? a[i] : T(0);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a},
                            [](const Node<T> &self) {
                              const auto &x = self.parents[0]->values;
                              std::vector<T> d(x.size());
                              for (std::size_t i = 0; i < x.size(); ++i)
                                d[i] = x[i] > T(0) ? self.grad[i] : T(0);
                              detail::add_into(*self.parents[0], d);
                            });
}

template <class T> Tensor<T> sigmoid(const Tensor<T> &a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-a[i]));
  return Tensor<T>::from_op(a.shape(), std::move(out), {a},
                            [](const Node<T> &self) {
                              std::vector<T> d(self.values.size());
                              for (std::size_t i = 0; i < d.size(); ++i) {
                                const T s = self.values[i];
                                d[i] = self.grad[i] * s * (T(1) - s);
                              }
                              detail::add_into(*self.parents[0], d);
                            });
}

enum class Mode { train, eval };

//! Inverted dropout: zeroes each element with probability p in train mode and
//! scales survivors by 1/(1-p). Identity in eval mode.
template <class T, class Rng>
Tensor<T> dropout(const Tensor<T> &a, double p, Mode mode, Rng &rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("dropout: p must lie in [0,1), got " +
                                std::to_string(p));
  if (mode == Mode::eval || p == 0.0)
    return a;
  static_assert(Rng::min() == 0 &&
                    Rng::max() == std::numeric_limits<std::uint64_t>::max(),
                "dropout expects a 64-bit engine");
  // Two 32-bit uniforms per draw; keep when below (1 - p) * 2^32.
  const auto threshold = static_cast<std::uint64_t>((1.0 - p) * 4294967296.0);
  const T gain = T(1) / static_cast<T>(1.0 - p);
  std::vector<T> factor(a.size());
  for (std::size_t i = 0; i < factor.size(); i += 2) {
    const std::uint64_t r = rng();
    factor[i] = (r & 0xffffffffu) < threshold ? gain : T(0);
    if (i + 1 < factor.size())
      factor[i + 1] = (r >> 32) < threshold ? gain : T(0);
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] * factor[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a},
                            [factor = std::move(factor)](const Node<T> &self) {
                              std::vector<T> d(factor.size());
                              for (std::size_t i = 0; i < d.size(); ++i)
                                d[i] = self.grad[i] * factor[i];
                              detail::add_into(*self.parents[0], d);
                            });
}

//------------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> concat(const Tensor<T> &a, const Tensor<T> &b, std::size_t axis) {
  if (a.rank() != b.rank())
    throw std::invalid_argument("concat: rank mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  if (axis >= a.rank())
    throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                " out of range for rank " +
                                std::to_string(a.rank()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat: shapes " + to_string(a.shape()) +
                                  " and " + to_string(b.shape()) +
                                  " differ off axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i)
    outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i)
    inner *= a.dim(i);
  const std::size_t ca = a.dim(axis) * inner, cb = b.dim(axis) * inner;
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  std::vector<T> out(outer * (ca + cb));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.values().begin() + o * ca, ca, out.begin() + o * (ca + cb));
    std::copy_n(b.values().begin() + o * cb, cb,
                out.begin() + o * (ca + cb) + ca);
  }
  return Tensor<T>::from_op(
      std::move(shape), std::move(out), {a, b},
      [outer, ca, cb](const Node<T> &self) {
        std::vector<T> da(outer * ca), db(outer * cb);
        for (std::size_t o = 0; o < outer; ++o) {
          std::copy_n(self.grad.begin() + o * (ca + cb), ca,
                      da.begin() + o * ca);
          std::copy_n(self.grad.begin() + o * (ca + cb) + ca, cb,
                      db.begin() + o * cb);
        }
        detail::add_into(*self.parents[0], da);
        detail::add_into(*self.parents[1], db);
      });
}

//! Slice `index` along axis 0, dropping that axis.
template <class T> Tensor<T> select(const Tensor<T> &a, std::size_t index) {
  if (a.rank() == 0 || index >= a.dim(0))
    throw std::invalid_argument("select: index " + std::to_string(index) +
                                " out of range for shape " +
                                to_string(a.shape()));
  Shape shape(a.shape().begin() + 1, a.shape().end());
  const std::size_t block = numel(shape);
  std::vector<T> out(a.values().begin() + index * block,
                     a.values().begin() + (index + 1) * block);
  return Tensor<T>::from_op(std::move(shape), std::move(out), {a},
                            [index, block](const Node<T> &self) {
                              auto &parent = *self.parents[0];
                              if (!parent.requires_grad)
                                return;
                              auto &g = parent.ensure_grad();
                              for (std::size_t i = 0; i < block; ++i)
                                g[index * block + i] += self.grad[i];
                            });
}

//------------------------------------------------------------------------------
// Image ops. Accept [c,h,w] or [n,c,h,w]; output rank follows the input.

//! Cross-correlation (no kernel flip).
template <class T>
Tensor<T> conv2d(const Tensor<T> &input, const Tensor<T> &weight,
                 const Tensor<T> &bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
  const auto d = detail::image_dims(input.shape(), "conv2d");
  if (weight.rank() != 4)
    throw std::invalid_argument("conv2d: weight must be [c_out,c_in,kh,kw], got " +
                                to_string(weight.shape()));
  const std::size_t co = weight.dim(0), ci = weight.dim(1), kh = weight.dim(2),
                    kw = weight.dim(3);
  if (ci != d.c)
    throw std::invalid_argument("conv2d: input " + to_string(input.shape()) +
                                " has " + std::to_string(d.c) +
                                " channels but weight " +
                                to_string(weight.shape()) + " expects " +
                                std::to_string(ci));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be odd, got " +
                                to_string(weight.shape()));
  if (stride < 1)
    throw std::invalid_argument("conv2d: stride must be >= 1");
  if (bias.rank() != 1 || bias.dim(0) != co)
    throw std::invalid_argument("conv2d: bias " + to_string(bias.shape()) +
                                " does not match " + std::to_string(co) +
                                " output channels");
  if (d.h + 2 * padding < kh || d.w + 2 * padding < kw)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  const std::size_t oh = (d.h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (d.w + 2 * padding - kw) / stride + 1;
  const std::size_t K = ci * kh * kw, P = oh * ow;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  // Products run on Eigen-owned (aligned) matrices: with wide SIMD, Eigen's
  // kernels on unaligned maps pick paths by address, which changes rounding
  // from run to run.
  using Mat = detail::RowMat<T>;
  std::vector<T> out(d.n * co * P);
  const Mat W = Eigen::Map<const Mat>(weight.values().data(), co, K);
  Mat C(K, P), O(co, P);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T *in = input.values().data() + n * d.c * d.h * d.w;
    if (pointwise)
      std::copy(in, in + K * P, C.data());
    else
      detail::im2col(in, ci, d.h, d.w, kh, kw, stride, padding, oh, ow, C.data());
    O.noalias() = W * C;
    T *dst = out.data() + n * co * P;
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t p = 0; p < P; ++p)
        dst[o * P + p] = O(o, p) + bias[o];
  }

  auto backward = [d, co, ci, kh, kw, stride, padding, oh, ow, K, P,
                   pointwise](const Node<T> &self) {
    auto &in_node = *self.parents[0];
    auto &w_node = *self.parents[1];
    auto &b_node = *self.parents[2];
    const Mat W = Eigen::Map<const Mat>(w_node.values.data(), co, K);
    Mat C(K, P), G(co, P), DC(K, P);
    Mat DW = Mat::Zero(w_node.requires_grad ? co : 0, w_node.requires_grad ? K : 0);
    T *dB = b_node.requires_grad ? b_node.ensure_grad().data() : nullptr;
    T *dIn = in_node.requires_grad ? in_node.ensure_grad().data() : nullptr;
    for (std::size_t n = 0; n < d.n; ++n) {
      const T *g = self.grad.data() + n * co * P;
      std::copy(g, g + co * P, G.data());
      const T *in = in_node.values.data() + n * d.c * d.h * d.w;
      if (w_node.requires_grad) {
        if (pointwise)
          std::copy(in, in + K * P, C.data());
        else
          detail::im2col(in, ci, d.h, d.w, kh, kw, stride, padding, oh, ow, C.data());
        DW.noalias() += G * C.transpose();
      }
      if (dB)
        for (std::size_t o = 0; o < co; ++o) {
          T acc = T(0);
          for (std::size_t p = 0; p < P; ++p)
            acc += g[o * P + p];
          dB[o] += acc;
        }
      if (dIn) {
        T *dst = dIn + n * d.c * d.h * d.w;
        DC.noalias() = W.transpose() * G;
        if (pointwise)
          for (std::size_t i = 0; i < K * P; ++i)
            dst[i] += DC.data()[i];
        else
          detail::col2im(DC.data(), ci, d.h, d.w, kh, kw, stride, padding, oh, ow, dst);
      }
    }
    if (w_node.requires_grad) {
      auto &dW = w_node.ensure_grad();
      for (std::size_t i = 0; i < co * K; ++i)
        dW[i] += DW.data()[i];
    }
  };
  return Tensor<T>::from_op(detail::make_image_shape(d.batched, d.n, co, oh, ow),
                            std::move(out), {input, weight, bias},
                            std::move(backward));
}

//! Non-overlapping max pooling; ties go to the first element in row-major
//! order and receive the whole gradient.
template <class T> Tensor<T> maxpool2d(const Tensor<T> &input, std::size_t window) {
  const auto d = detail::image_dims(input.shape(), "maxpool2d");
  if (window < 1 || d.h % window != 0 || d.w % window != 0)
    throw std::invalid_argument("maxpool2d: spatial size " +
                                std::to_string(d.h) + "x" + std::to_string(d.w) +
                                " not divisible by window " +
                                std::to_string(window));
  const std::size_t oh = d.h / window, ow = d.w / window;
  std::vector<T> out(d.n * d.c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto &x = input.values();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const std::size_t base = plane * d.h * d.w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * window * d.w + ox * window;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx =
                base + (oy * window + ky) * d.w + ox * window + kx;
            if (x[idx] > x[best])
              best = idx;
          }
        argmax[o] = best;
        out[o] = x[best];
      }
  }
  return Tensor<T>::from_op(
      detail::make_image_shape(d.batched, d.n, d.c, oh, ow), std::move(out),
      {input}, [argmax = std::move(argmax)](const Node<T> &self) {
        auto &parent = *self.parents[0];
        if (!parent.requires_grad)
          return;
        auto &g = parent.ensure_grad();
        for (std::size_t i = 0; i < argmax.size(); ++i)
          g[argmax[i]] += self.grad[i];
      });
}

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

// Align-corners source coordinates for resizing an axis of length `in` to
// length `out`.
inline std::vector<LerpTap> align_corner_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double step =
      out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (std::size_t i = 0; i < out; ++i) {
    const double src = static_cast<double>(i) * step;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    i0 = std::min(i0, in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

} // namespace detail

//! Bilinear resampling with aligned corners.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T> &input, std::size_t out_h,
                          std::size_t out_w) {
  const auto d = detail::image_dims(input.shape(), "bilinear_resize");
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("bilinear_resize: output size must be >= 1");
  if (out_h == d.h && out_w == d.w)
    return input;
  const auto ty = detail::align_corner_taps(d.h, out_h);
  const auto tx = detail::align_corner_taps(d.w, out_w);
  std::vector<T> out(d.n * d.c * out_h * out_w);
  const auto &x = input.values();
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const T *src = x.data() + plane * d.h * d.w;
    T *dst = out.data() + plane * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty[oy].frac);
      const T *r0 = src + ty[oy].i0 * d.w;
      const T *r1 = src + ty[oy].i1 * d.w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx[ox].frac);
        const T top = r0[tx[ox].i0] * (T(1) - fx) + r0[tx[ox].i1] * fx;
        const T bot = r1[tx[ox].i0] * (T(1) - fx) + r1[tx[ox].i1] * fx;
        dst[oy * out_w + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return Tensor<T>::from_op(
      detail::make_image_shape(d.batched, d.n, d.c, out_h, out_w),
      std::move(out), {input},
      [d, out_h, out_w, ty, tx](const Node<T> &self) {
        auto &parent = *self.parents[0];
        if (!parent.requires_grad)
          return;
        auto &g = parent.ensure_grad();
        for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
          T *dst = g.data() + plane * d.h * d.w;
          const T *go = self.grad.data() + plane * out_h * out_w;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const T fy = static_cast<T>(ty[oy].frac);
            T *r0 = dst + ty[oy].i0 * d.w;
            T *r1 = dst + ty[oy].i1 * d.w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const T fx = static_cast<T>(tx[ox].frac);
              const T v = go[oy * out_w + ox];
              r0[tx[ox].i0] += v * (T(1) - fy) * (T(1) - fx);
              r0[tx[ox].i1] += v * (T(1) - fy) * fx;
              r1[tx[ox].i0] += v * fy * (T(1) - fx);
              r1[tx[ox].i1] += v * fy * fx;
            }
          }
        }
      });
}

//! Running statistics carried between batch-norm calls.
template <class T> struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit BatchNormStats(std::size_t channels = 0)
      : mean(channels, T(0)), var(channels, T(1)) {}
};

//! Per-channel normalization over (n, h, w). Train mode normalizes with the
//! batch statistics and updates `stats`; eval mode uses `stats`.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T> &input, const Tensor<T> &gamma,
                      const Tensor<T> &beta, BatchNormStats<T> &stats,
                      Mode mode, T momentum = T(0.1), T eps = T(1e-5)) {
  const auto d = detail::image_dims(input.shape(), "batchnorm2d");
  if (gamma.size() != d.c || beta.size() != d.c || stats.mean.size() != d.c ||
      stats.var.size() != d.c)
    throw std::invalid_argument("batchnorm2d: parameters do not match " +
                                std::to_string(d.c) + " channels");
  const std::size_t plane = d.h * d.w;
  const std::size_t count = d.n * plane;
  if (count == 0)
    throw std::invalid_argument("batchnorm2d: empty batch");
  const auto &x = input.values();
  std::vector<T> mu(d.c), inv_std(d.c);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < d.c; ++c) {
      T s = T(0);
      for (std::size_t n = 0; n < d.n; ++n) {
        const T *p = x.data() + (n * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          s += p[i];
      }
      const T m = s / static_cast<T>(count);
      T ss = T(0);
      for (std::size_t n = 0; n < d.n; ++n) {
        const T *p = x.data() + (n * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          ss += (p[i] - m) * (p[i] - m);
      }
      const T var = ss / static_cast<T>(count);
      mu[c] = m;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      const T unbiased =
          count > 1 ? ss / static_cast<T>(count - 1) : var;
      stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * m;
      stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < d.c; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = T(1) / std::sqrt(stats.var[c] + eps);
    }
  }
  std::vector<T> out(x.size());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t off = (n * d.c + c) * plane;
      const T gsc = gamma[c] * inv_std[c];
      for (std::size_t i = 0; i < plane; ++i)
        out[off + i] = (x[off + i] - mu[c]) * gsc + beta[c];
    }
  const bool train = mode == Mode::train;
  return Tensor<T>::from_op(
      input.shape(), std::move(out), {input, gamma, beta},
      [d, plane, count, mu, inv_std, train](const Node<T> &self) {
        auto &in_node = *self.parents[0];
        auto &g_node = *self.parents[1];
        auto &b_node = *self.parents[2];
        const auto &x = in_node.values;
        const auto &gy = self.grad;
        std::vector<T> dgamma(d.c, T(0)), dbeta(d.c, T(0));
        std::vector<T> dx(in_node.requires_grad ? x.size() : 0);
        for (std::size_t c = 0; c < d.c; ++c) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * d.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T xhat = (x[off + i] - mu[c]) * inv_std[c];
              sum_dy += gy[off + i];
              sum_dy_xhat += gy[off + i] * xhat;
            }
          }
          dgamma[c] = sum_dy_xhat;
          dbeta[c] = sum_dy;
          if (dx.empty())
            continue;
          const T gamma = g_node.values[c];
          const T inv_n = T(1) / static_cast<T>(count);
          for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * d.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (train) {
                const T xhat = (x[off + i] - mu[c]) * inv_std[c];
                dx[off + i] = gamma * inv_std[c] *
                              (gy[off + i] - inv_n * sum_dy -
                               xhat * inv_n * sum_dy_xhat);
              } else {
                dx[off + i] = gamma * inv_std[c] * gy[off + i];
              }
            }
          }
        }
        if (!dx.empty())
          detail::add_into(in_node, dx);
        detail::add_into(g_node, dgamma);
        detail::add_into(b_node, dbeta);
      });
}

} // namespace acdr
