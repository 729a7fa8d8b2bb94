#pragma once

#include "acdr/geometry.hpp"
#include "acdr/grid.hpp"
#include "acdr/ops.hpp"
#include "acdr/renderer.hpp"
#include "acdr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

namespace detail {

inline void require_field(const Shape &s) {
  if (s.size() != 3 || s[0] != 2 || s[1] < 2 || s[2] < 2)
    throw std::invalid_argument(
        "displacement field must be [2,h,w] with h,w >= 2, got " + to_string(s));
}

inline void require_points(const Shape &s) {
  if (s.size() != 2 || s[1] != 2)
    throw std::invalid_argument("expected [k,2] points, got " + to_string(s));
}

// Lower texel index and fraction along an axis of n texels; the upper edge
// uses the last cell with fraction 1.
template <class T> std::pair<std::size_t, T> cell(T coord, std::size_t n) {
  auto i = static_cast<std::size_t>(std::floor(coord));
  if (i >= n - 1)
    i = n - 2;
  return {i, coord - static_cast<T>(i)};
}

} // namespace detail

//! Bilinear sample of a [2,h,w] field at each row of a [k,2] point tensor.
//! Differentiable with respect to both the field values and the points.
template <class T>
Tensor<T> sample_field(const Tensor<T> &field, const Tensor<T> &points) {
  detail::require_field(field.shape());
  detail::require_points(points.shape());
  const std::size_t h = field.dim(1), w = field.dim(2), k = points.dim(0);
  const std::size_t plane = h * w;
  for (std::size_t j = 0; j < k; ++j) {
    const T x = points[2 * j], y = points[2 * j + 1];
    if (!(x >= T(0) && x <= static_cast<T>(w - 1) && y >= T(0) &&
          y <= static_cast<T>(h - 1)))
      throw std::invalid_argument("sample_field: point " + std::to_string(j) +
                                  " (" + std::to_string(x) + ", " +
                                  std::to_string(y) + ") outside the field");
  }
  const auto &f = field.values();
  std::vector<T> out(2 * k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto [x0, fx] = detail::cell(points[2 * j], w);
    const auto [y0, fy] = detail::cell(points[2 * j + 1], h);
    for (std::size_t c = 0; c < 2; ++c) {
      const T *p = f.data() + c * plane + y0 * w + x0;
      out[2 * j + c] = (T(1) - fy) * ((T(1) - fx) * p[0] + fx * p[1]) +
                       fy * ((T(1) - fx) * p[w] + fx * p[w + 1]);
    }
  }
  return Tensor<T>::from_op(
      Shape{k, 2}, std::move(out), {field, points},
      [h, w, k, plane](const Node<T> &self) {
        auto &fnode = *self.parents[0];
        auto &pnode = *self.parents[1];
        const auto &f = fnode.values;
        T *df = fnode.requires_grad ? fnode.ensure_grad().data() : nullptr;
        T *dp = pnode.requires_grad ? pnode.ensure_grad().data() : nullptr;
        for (std::size_t j = 0; j < k; ++j) {
          const auto [x0, fx] = detail::cell(pnode.values[2 * j], w);
          const auto [y0, fy] = detail::cell(pnode.values[2 * j + 1], h);
          for (std::size_t c = 0; c < 2; ++c) {
            const T g = self.grad[2 * j + c];
            const std::size_t base = c * plane + y0 * w + x0;
            const T v00 = f[base], v01 = f[base + 1], v10 = f[base + w],
                    v11 = f[base + w + 1];
            if (df) {
              df[base] += g * (T(1) - fy) * (T(1) - fx);
              df[base + 1] += g * (T(1) - fy) * fx;
              df[base + w] += g * fy * (T(1) - fx);
              df[base + w + 1] += g * fy * fx;
            }
            if (dp) {
              dp[2 * j] += g * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
              dp[2 * j + 1] +=
                  g * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
          }
        }
      });
}

//! Clamps x to [0, w-1] and y to [0, h-1]. The gradient passes unchanged for
//! coordinates already in range and is zero for clamped ones.
template <class T>
Tensor<T> clamp_to_image(const Tensor<T> &points, std::size_t h, std::size_t w) {
  detail::require_points(points.shape());
  const T hi[2] = {static_cast<T>(w - 1), static_cast<T>(h - 1)};
  std::vector<T> out(points.size());
  std::vector<unsigned char> pass(points.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = points[i];
    const T top = hi[i % 2];
    pass[i] = v >= T(0) && v <= top;
    out[i] = std::clamp(v, T(0), top);
  }
  return Tensor<T>::from_op(points.shape(), std::move(out), {points},
                            [pass = std::move(pass)](const Node<T> &self) {
                              std::vector<T> d(self.grad.size());
                              for (std::size_t i = 0; i < d.size(); ++i)
                                d[i] = pass[i] ? self.grad[i] : T(0);
                              detail::add_into(*self.parents[0], d);
                            });
}

//! One evolution step: move every vertex by the field sampled at its
//! position, then truncate to the image.
template <class T>
Tensor<T> step(const Tensor<T> &points, const Tensor<T> &field) {
  detail::require_field(field.shape());
  const auto shift = sample_field(field, points);
  for (T v : shift.values())
    if (!std::isfinite(v))
      throw std::invalid_argument("step: non-finite displacement");
  return clamp_to_image(add(points, shift), field.dim(1), field.dim(2));
}

template <class T> struct EvolutionTrace {
  std::vector<Tensor<T>> polygons; // P^0 .. P^T
  std::vector<Tensor<T>> masks;    // soft masks of P^1 .. P^T (train mode)
  Mask final_mask;                 // hard mask of P^T (eval mode)
};

//! Runs `iterations` steps under a static field. Train mode renders a soft
//! mask after every step; eval mode renders only the final polygon, hard.
template <class T>
EvolutionTrace<T> evolve(const Tensor<T> &p0, const FaceList &faces,
                         const Tensor<T> &field, int iterations, Mode mode,
                         T tau = T(1)) {
  if (iterations < 1)
    throw std::invalid_argument("evolve: need at least one iteration");
  detail::require_field(field.shape());
  const int h = static_cast<int>(field.dim(1)), w = static_cast<int>(field.dim(2));
  EvolutionTrace<T> trace;
  trace.polygons.push_back(p0);
  for (int t = 0; t < iterations; ++t) {
    trace.polygons.push_back(step(trace.polygons.back(), field));
    if (mode == Mode::train)
      trace.masks.push_back(rasterize(trace.polygons.back(), faces, h, w, tau));
  }
  if (mode == Mode::eval)
    trace.final_mask = rasterize_hard(to_polygon(trace.polygons.back()), faces, h, w);
  return trace;
}

//! CSV with columns t,vertex_index,x,y for every polygon of a trace.
template <class T>
void write_trace_csv(const std::string &path, const std::vector<Tensor<T>> &polygons) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write trace '" + path + "'");
  os << "t,vertex_index,x,y\n" << std::setprecision(9);
  for (std::size_t t = 0; t < polygons.size(); ++t)
    for (std::size_t j = 0; j < polygons[t].dim(0); ++j)
      os << t << ',' << j << ',' << polygons[t][2 * j] << ','
         << polygons[t][2 * j + 1] << '\n';
}

} // namespace acdr
