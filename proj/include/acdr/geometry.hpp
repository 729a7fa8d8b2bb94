#pragma once

#include "acdr/tensor.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acdr {

//! x = column, y = row; pixel centers sit at integer coordinates.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point &, const Point &) = default;
};

//! Closed contour: vertex k-1 connects back to vertex 0.
struct Polygon {
  std::vector<Point> vertices;

  std::size_t size() const { return vertices.size(); }
  const Point &operator[](std::size_t i) const { return vertices[i]; }
};

using Face = std::array<int, 3>;
using FaceList = std::vector<Face>;

//------------------------------------------------------------------------------
// Predicates. Double evaluation with a forward error bound; ties and
// uncertain cases are settled in exact rational arithmetic.

namespace detail {

using boost::multiprecision::cpp_rational;

inline cpp_rational exact(double v) {
  int exp = 0;
  const double mant = std::frexp(v, &exp);
  // 53-bit integer mantissa
  const auto m = static_cast<long long>(std::ldexp(mant, 53));
  cpp_rational r(m);
  exp -= 53;
  if (exp > 0)
    r *= cpp_rational(boost::multiprecision::cpp_int(1) << exp);
  else if (exp < 0)
    r /= cpp_rational(boost::multiprecision::cpp_int(1) << -exp);
  return r;
}

inline int sign_of(const cpp_rational &r) { return r.sign(); }

constexpr double kEps = 1.1102230246251565e-16; // 2^-53
constexpr double kCcwBound = (3.0 + 16.0 * kEps) * kEps;
constexpr double kIccBound = (10.0 + 96.0 * kEps) * kEps;

} // namespace detail

//! Sign of the signed area of (a, b, c): +1 when c lies to the left of a->b
//! in a y-up frame.
inline int orient2d(const Point &a, const Point &b, const Point &c) {
  const double left = (a.x - c.x) * (b.y - c.y);
  const double right = (a.y - c.y) * (b.x - c.x);
  const double det = left - right;
  const double bound = detail::kCcwBound * (std::abs(left) + std::abs(right));
  if (det > bound)
    return 1;
  if (-det > bound)
    return -1;
  using detail::exact;
  const auto e = (exact(a.x) - exact(c.x)) * (exact(b.y) - exact(c.y)) -
                 (exact(a.y) - exact(c.y)) * (exact(b.x) - exact(c.x));
  return detail::sign_of(e);
}

//! +1 when d lies strictly inside the circumcircle of the positively
//! oriented triangle (a, b, c), 0 when cocircular.
inline int incircle(const Point &a, const Point &b, const Point &c,
                    const Point &d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double bc = bdx * cdy - cdx * bdy;
  const double ca = cdx * ady - adx * cdy;
  const double ab = adx * bdy - bdx * ady;
  const double alift = adx * adx + ady * ady;
  const double blift = bdx * bdx + bdy * bdy;
  const double clift = cdx * cdx + cdy * cdy;
  const double det = alift * bc + blift * ca + clift * ab;
  const double permanent =
      (std::abs(bdx * cdy) + std::abs(cdx * bdy)) * alift +
      (std::abs(cdx * ady) + std::abs(adx * cdy)) * blift +
      (std::abs(adx * bdy) + std::abs(bdx * ady)) * clift;
  const double bound = detail::kIccBound * permanent;
  if (det > bound)
    return 1;
  if (-det > bound)
    return -1;
  using detail::exact;
  const auto eadx = exact(a.x) - exact(d.x), eady = exact(a.y) - exact(d.y);
  const auto ebdx = exact(b.x) - exact(d.x), ebdy = exact(b.y) - exact(d.y);
  const auto ecdx = exact(c.x) - exact(d.x), ecdy = exact(c.y) - exact(d.y);
  const auto e = (eadx * eadx + eady * eady) * (ebdx * ecdy - ecdx * ebdy) +
                 (ebdx * ebdx + ebdy * ebdy) * (ecdx * eady - eadx * ecdy) +
                 (ecdx * ecdx + ecdy * ecdy) * (eadx * ebdy - ebdx * eady);
  return detail::sign_of(e);
}

//------------------------------------------------------------------------------

//! k vertices on a circle centred in the image, first vertex at angle 0
//! (+x), angle increasing towards +y.
inline Polygon init_circle(int h, int w, int k, double diameter) {
  if (k < 3)
    throw std::invalid_argument("init_circle: need k >= 3, got " +
                                std::to_string(k));
  if (h < 1 || w < 1)
    throw std::invalid_argument("init_circle: empty image");
  if (!(diameter > 0.0) || diameter > std::min(h, w))
    throw std::invalid_argument("init_circle: diameter " +
                                std::to_string(diameter) +
                                " does not fit a " + std::to_string(h) + "x" +
                                std::to_string(w) + " image");
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0, r = diameter / 2.0;
  Polygon p;
  p.vertices.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double theta = 2.0 * std::numbers::pi * j / k;
    p.vertices.push_back({cx + r * std::cos(theta), cy + r * std::sin(theta)});
  }
  return p;
}

//! Absolute shoelace area.
inline double polygon_area(const Polygon &p) {
  const std::size_t k = p.size();
  double twice = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const Point &a = p[i], &b = p[(i + 1) % k];
    twice += a.x * b.y - b.x * a.y;
  }
  return std::abs(twice) / 2.0;
}

inline double triangle_area(const Point &a, const Point &b, const Point &c) {
  return std::abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)) / 2.0;
}

//! Delaunay triangulation by incremental Bowyer-Watson. The hull is tracked
//! with ghost triangles (one vertex at infinity) instead of a bounding super
//! triangle. A point cocircular with an existing triangle does not conflict
//! with it, which amounts to perturbing later points outward; together with
//! exact predicates this yields a valid triangulation for any non-collinear
//! input. Faces are positively oriented (orient2d > 0). Duplicate points are
//! left out of the triangulation.
inline FaceList delaunay(const std::vector<Point> &pts) {
  constexpr int kGhost = -1;
  const int n = static_cast<int>(pts.size());
  if (n < 3)
    throw std::invalid_argument("delaunay: need at least 3 points, got " +
                                std::to_string(n));
  for (const auto &p : pts)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::invalid_argument("delaunay: non-finite point");

  int i1 = -1;
  for (int i = 1; i < n && i1 < 0; ++i)
    if (!(pts[i] == pts[0]))
      i1 = i;
  int i2 = -1;
  if (i1 >= 0)
    for (int i = i1 + 1; i < n && i2 < 0; ++i)
      if (orient2d(pts[0], pts[i1], pts[i]) != 0)
        i2 = i;
  if (i2 < 0)
    throw std::invalid_argument("delaunay: all " + std::to_string(n) +
                                " points are collinear");

  struct Tri {
    std::array<int, 3> v;
    bool alive;
  };
  std::vector<Tri> tris;
  int a = 0, b = i1, c = i2;
  if (orient2d(pts[a], pts[b], pts[c]) < 0)
    std::swap(b, c);
  tris.push_back({{a, b, c}, true});
  tris.push_back({{b, a, kGhost}, true});
  tris.push_back({{c, b, kGhost}, true});
  tris.push_back({{a, c, kGhost}, true});

  auto conflicts = [&](const Tri &t, const Point &p) {
    if (t.v[2] != kGhost)
      return incircle(pts[t.v[0]], pts[t.v[1]], pts[t.v[2]], p) > 0;
    // Ghost (u, v, inf): exterior lies left of u->v.
    const Point &u = pts[t.v[0]], &v = pts[t.v[1]];
    const int o = orient2d(u, v, p);
    if (o != 0)
      return o > 0;
    // On the hull line: conflict only strictly inside the segment.
    const double dot = (p.x - u.x) * (v.x - u.x) + (p.y - u.y) * (v.y - u.y);
    const double len2 = (v.x - u.x) * (v.x - u.x) + (v.y - u.y) * (v.y - u.y);
    return dot > 0.0 && dot < len2;
  };

  std::vector<std::size_t> cavity;
  std::set<std::pair<int, int>> edges;
  for (int pi = 1; pi < n; ++pi) {
    if (pi == i1 || pi == i2)
      continue;
    const Point &p = pts[pi];
    cavity.clear();
    for (std::size_t t = 0; t < tris.size(); ++t)
      if (tris[t].alive && conflicts(tris[t], p))
        cavity.push_back(t);
    if (cavity.empty())
      continue;
    edges.clear();
    for (auto t : cavity)
      for (int e = 0; e < 3; ++e)
        edges.insert({tris[t].v[e], tris[t].v[(e + 1) % 3]});
    for (auto t : cavity) {
      tris[t].alive = false;
      for (int e = 0; e < 3; ++e) {
        const int u = tris[t].v[e], v = tris[t].v[(e + 1) % 3];
        if (edges.count({v, u}))
          continue;
        // Boundary edge u->v; new triangle (u, v, p) with the ghost rotated
        // into the last slot.
        if (u == kGhost)
          tris.push_back({{v, pi, kGhost}, true});
        else if (v == kGhost)
          tris.push_back({{pi, u, kGhost}, true});
        else
          tris.push_back({{u, v, pi}, true});
      }
    }
    // Compact dead triangles now and then.
    if (tris.size() > 8 * static_cast<std::size_t>(n))
      std::erase_if(tris, [](const Tri &t) { return !t.alive; });
  }

  FaceList faces;
  for (const auto &t : tris)
    if (t.alive && t.v[2] != kGhost)
      faces.push_back({t.v[0], t.v[1], t.v[2]});
  return faces;
}

//------------------------------------------------------------------------------
// Conversions to the [k, 2] vertex tensors used by the differentiable path.

template <class T>
Tensor<T> to_tensor(const Polygon &p, bool requires_grad = false) {
  std::vector<T> v;
  v.reserve(2 * p.size());
  for (const auto &q : p.vertices) {
    v.push_back(static_cast<T>(q.x));
    v.push_back(static_cast<T>(q.y));
  }
  return Tensor<T>(Shape{p.size(), 2}, std::move(v), requires_grad);
}

template <class T> Polygon to_polygon(const Tensor<T> &t) {
  if (t.rank() != 2 || t.dim(1) != 2)
    throw std::invalid_argument("to_polygon: expected [k,2], got " +
                                to_string(t.shape()));
  Polygon p;
  for (std::size_t i = 0; i < t.dim(0); ++i)
    p.vertices.push_back({static_cast<double>(t[2 * i]),
                          static_cast<double>(t[2 * i + 1])});
  return p;
}

} // namespace acdr
