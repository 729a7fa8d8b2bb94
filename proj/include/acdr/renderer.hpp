#pragma once

// Soft rasterizer for flat triangle meshes. Each face contributes an
// occupancy o_f(x) = logistic(-sd_f(x) / tau) where sd_f is the signed
// distance from the pixel centre to the triangle (negative inside). Faces are
// merged with a soft union, mask = 1 - prod_f (1 - o_f), so overlapping faces
// never push a pixel above 1.

#include "acdr/geometry.hpp"
#include "acdr/grid.hpp"
#include "acdr/ops.hpp"
#include "acdr/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

//! Faces further outside than this many tau contribute exactly nothing.
inline constexpr double kSoftCutoff = 40.0;

namespace detail {

template <class T> struct Vec2 {
  T x, y;
};

// Signed distance from p to triangle (a, b, c) and its gradient with respect
// to the six vertex coordinates.
template <class T> struct SignedDistance {
  T sd;
  std::array<Vec2<T>, 3> grad;
};

template <class T>
SignedDistance<T> triangle_signed_distance(const Vec2<T> &p,
                                           const std::array<Vec2<T>, 3> &v) {
  const T twice_area =
      (v[1].x - v[0].x) * (v[2].y - v[0].y) - (v[1].y - v[0].y) * (v[2].x - v[0].x);
  const T orient = twice_area > T(0) ? T(1) : (twice_area < T(0) ? T(-1) : T(0));

  bool inside = orient != T(0);
  T best = std::numeric_limits<T>::max();
  int best_edge = 0;
  T best_t = T(0);
  Vec2<T> best_q{};
  for (int e = 0; e < 3; ++e) {
    const auto &a = v[e];
    const auto &b = v[(e + 1) % 3];
    const T ex = b.x - a.x, ey = b.y - a.y;
    // Edge function, positive on the interior side for either orientation.
    const T side = orient * (ex * (p.y - a.y) - ey * (p.x - a.x));
    if (side < T(0))
      inside = false;
    const T len2 = ex * ex + ey * ey;
    T t = len2 > T(0) ? ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2 : T(0);
    t = std::clamp(t, T(0), T(1));
    const Vec2<T> q{a.x + t * ex, a.y + t * ey};
    const T d = std::hypot(p.x - q.x, p.y - q.y);
    if (d < best) {
      best = d;
      best_edge = e;
      best_t = t;
      best_q = q;
    }
  }

  SignedDistance<T> out{};
  out.sd = inside ? -best : best;
  // Outward unit direction at the nearest boundary point.
  Vec2<T> n{};
  if (best > T(0)) {
    const T s = inside ? T(-1) : T(1);
    n = {s * (p.x - best_q.x) / best, s * (p.y - best_q.y) / best};
  } else {
    const auto &a = v[best_edge];
    const auto &b = v[(best_edge + 1) % 3];
    const T ex = b.x - a.x, ey = b.y - a.y;
    const T len = std::hypot(ex, ey);
    if (len > T(0) && orient != T(0))
      n = {orient * ey / len, -orient * ex / len};
  }
  // Envelope theorem: d sd / d a = -n (1 - t), d sd / d b = -n t.
  out.grad[best_edge] = {-n.x * (T(1) - best_t), -n.y * (T(1) - best_t)};
  out.grad[(best_edge + 1) % 3] = {-n.x * best_t, -n.y * best_t};
  return out;
}

template <class T>
void check_vertices(std::span<const T> verts, const FaceList &faces,
                    const char *op) {
  if (verts.size() % 2 != 0)
    throw std::invalid_argument(std::string(op) + ": odd coordinate count");
  for (T v : verts)
    if (!std::isfinite(v))
      throw std::invalid_argument(std::string(op) + ": non-finite vertex");
  const auto k = static_cast<int>(verts.size() / 2);
  for (const auto &f : faces)
    for (int i : f)
      if (i < 0 || i >= k)
        throw std::invalid_argument(std::string(op) + ": face index " +
                                    std::to_string(i) + " out of range for " +
                                    std::to_string(k) + " vertices");
}

template <class T> struct FaceBox {
  std::array<Vec2<T>, 3> v;
  T x0, x1, y0, y1; // bounding box grown by the cutoff margin
};

template <class T>
std::vector<FaceBox<T>> face_boxes(std::span<const T> verts,
                                   const FaceList &faces, T tau) {
  const T margin = static_cast<T>(kSoftCutoff) * tau;
  std::vector<FaceBox<T>> boxes;
  boxes.reserve(faces.size());
  for (const auto &f : faces) {
    FaceBox<T> fb;
    for (int i = 0; i < 3; ++i)
      fb.v[i] = {verts[2 * f[i]], verts[2 * f[i] + 1]};
    fb.x0 = std::min({fb.v[0].x, fb.v[1].x, fb.v[2].x}) - margin;
    fb.x1 = std::max({fb.v[0].x, fb.v[1].x, fb.v[2].x}) + margin;
    fb.y0 = std::min({fb.v[0].y, fb.v[1].y, fb.v[2].y}) - margin;
    fb.y1 = std::max({fb.v[0].y, fb.v[1].y, fb.v[2].y}) + margin;
    boxes.push_back(fb);
  }
  return boxes;
}

template <class T> T logistic(T z) { return T(1) / (T(1) + std::exp(-z)); }

} // namespace detail

//! Soft mask values (row-major h*w) for vertices laid out as x0,y0,x1,y1,...
template <class T>
std::vector<T> rasterize_values(std::span<const T> verts, const FaceList &faces,
                                int h, int w, T tau) {
  if (!(tau > T(0)))
    throw std::invalid_argument("rasterize: tau must be positive");
  detail::check_vertices(verts, faces, "rasterize");
  std::vector<T> mask(static_cast<std::size_t>(h) * w, T(0));
  const auto boxes = detail::face_boxes(verts, faces, tau);
  std::vector<T> keep;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const detail::Vec2<T> p{static_cast<T>(x), static_cast<T>(y)};
      keep.clear();
      for (const auto &fb : boxes) {
        if (p.x < fb.x0 || p.x > fb.x1 || p.y < fb.y0 || p.y > fb.y1)
          continue;
        const T z = detail::triangle_signed_distance(p, fb.v).sd / tau;
        if (z > static_cast<T>(kSoftCutoff))
          continue;
        keep.push_back(T(1) - detail::logistic(-z));
      }
      // Multiply in sorted order so the result does not depend on face order.
      std::sort(keep.begin(), keep.end());
      T prod = T(1);
      for (T v : keep)
        prod *= v;
      mask[static_cast<std::size_t>(y) * w + x] = T(1) - prod;
    }
  return mask;
}

//! Vertex gradient (x0,y0,x1,y1,...) of sum(grad_mask * mask).
template <class T>
std::vector<T> rasterize_backward(std::span<const T> verts,
                                  const FaceList &faces, int h, int w, T tau,
                                  std::span<const T> grad_mask) {
  detail::check_vertices(verts, faces, "rasterize_backward");
  if (grad_mask.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("rasterize_backward: grad_mask size mismatch");
  std::vector<T> grad(verts.size(), T(0));
  const auto boxes = detail::face_boxes(verts, faces, tau);
  struct Active {
    std::size_t face;
    T one_minus_o;
    T dmask_dsd; // without the product of the other faces
    detail::SignedDistance<T> sd;
  };
  std::vector<Active> active;
  std::vector<T> suffix;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T g = grad_mask[static_cast<std::size_t>(y) * w + x];
      if (g == T(0))
        continue;
      const detail::Vec2<T> p{static_cast<T>(x), static_cast<T>(y)};
      active.clear();
      for (std::size_t f = 0; f < boxes.size(); ++f) {
        const auto &fb = boxes[f];
        if (p.x < fb.x0 || p.x > fb.x1 || p.y < fb.y0 || p.y > fb.y1)
          continue;
        auto sd = detail::triangle_signed_distance(p, fb.v);
        const T z = sd.sd / tau;
        if (z > static_cast<T>(kSoftCutoff))
          continue;
        const T o = detail::logistic(-z);
        // mask = 1 - prod(1 - o); dmask/do_f = prod_{g != f}(1 - o_g);
        // do/dsd = -o (1 - o) / tau.
        active.push_back({f, T(1) - o, -o * (T(1) - o) / tau, sd});
      }
      const std::size_t m = active.size();
      suffix.assign(m + 1, T(1));
      for (std::size_t i = m; i-- > 0;)
        suffix[i] = suffix[i + 1] * active[i].one_minus_o;
      T prefix = T(1);
      for (std::size_t i = 0; i < m; ++i) {
        const auto &a = active[i];
        const T coeff = g * prefix * suffix[i + 1] * a.dmask_dsd;
        const Face &face = faces[a.face];
        for (int c = 0; c < 3; ++c) {
          grad[2 * face[c]] += coeff * a.sd.grad[c].x;
          grad[2 * face[c] + 1] += coeff * a.sd.grad[c].y;
        }
        prefix *= a.one_minus_o;
      }
    }
  return grad;
}

//! Differentiable soft mask [h, w] from a [k, 2] vertex tensor.
template <class T>
Tensor<T> rasterize(const Tensor<T> &vertices, const FaceList &faces, int h,
                    int w, T tau = T(1)) {
  if (vertices.rank() != 2 || vertices.dim(1) != 2)
    throw std::invalid_argument("rasterize: expected [k,2] vertices, got " +
                                to_string(vertices.shape()));
  auto values = rasterize_values<T>(vertices.values(), faces, h, w, tau);
  return Tensor<T>::from_op(
      Shape{static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
      std::move(values), {vertices},
      [faces, h, w, tau](const Node<T> &self) {
        auto &parent = *self.parents[0];
        const auto g = rasterize_backward<T>(parent.values, faces, h, w, tau,
                                             self.grad);
        detail::add_into(parent, g);
      });
}

//! Pixel-centre coverage: 1 where the centre lies in any closed,
//! non-degenerate face.
inline Mask rasterize_hard(const Polygon &p, const FaceList &faces, int h,
                           int w) {
  std::vector<double> verts;
  for (const auto &q : p.vertices) {
    verts.push_back(q.x);
    verts.push_back(q.y);
  }
  detail::check_vertices<double>(verts, faces, "rasterize_hard");
  Mask mask(h, w);
  for (const auto &f : faces) {
    const Point &a = p[f[0]], &b = p[f[1]], &c = p[f[2]];
    const double twice = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (twice == 0.0)
      continue;
    const double s = twice > 0 ? 1.0 : -1.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        auto edge = [&](const Point &u, const Point &v) {
          return s * ((v.x - u.x) * (y - u.y) - (v.y - u.y) * (x - u.x));
        };
        if (edge(a, b) >= 0 && edge(b, c) >= 0 && edge(c, a) >= 0)
          mask(y, x) = 1;
      }
  }
  return mask;
}

} // namespace acdr
