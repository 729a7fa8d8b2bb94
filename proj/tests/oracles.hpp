#pragma once

// Brute-force reference implementations used as test oracles. They are
// written independently of the library code they check.

#include "acdr/geometry.hpp"
#include "acdr/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace acdr::testing {

//! Even-odd ray casting at a pixel centre (x, y).
inline bool inside_polygon(const Polygon &p, double x, double y) {
  bool in = false;
  const std::size_t n = p.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto &a = p[i], &b = p[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x)
      in = !in;
  }
  return in;
}

inline Grid<double> coverage_oracle(const Polygon &p, int h, int w) {
  Grid<double> g(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      g(y, x) = inside_polygon(p, x, y) ? 1.0 : 0.0;
  return g;
}

//! Andrew's monotone chain; returns the hull area.
inline double hull_area(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const Point &a, const Point &b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  auto cross = [](const Point &o, const Point &a, const Point &b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto &p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0)
      --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0)
      --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  double a = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto &p = hull[i], &q = hull[(i + 1) % hull.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return std::abs(a) / 2.0;
}

//! True when no input point lies strictly inside any face's circumcircle,
//! with a relative tolerance on the squared radius.
inline bool empty_circumcircles(const std::vector<Point> &pts, const FaceList &faces,
                                double rel_tol = 1e-9) {
  for (const auto &f : faces) {
    const long double ax = pts[f[0]].x, ay = pts[f[0]].y;
    const long double bx = pts[f[1]].x, by = pts[f[1]].y;
    const long double cx = pts[f[2]].x, cy = pts[f[2]].y;
    const long double d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    if (d == 0)
      return false;
    const long double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
    const long double ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
    const long double uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
    const long double r2 = (ax - ux) * (ax - ux) + (ay - uy) * (ay - uy);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (static_cast<int>(i) == f[0] || static_cast<int>(i) == f[1] ||
          static_cast<int>(i) == f[2])
        continue;
      const long double dx = pts[i].x - ux, dy = pts[i].y - uy;
      if (dx * dx + dy * dy < r2 * (1 - rel_tol))
        return false;
    }
  }
  return true;
}

//! k points in convex position: on an ellipse (or an exact circle, which
//! makes every subset cocircular) at random distinct angles, randomly
//! rotated, scaled and translated, in shuffled order.
inline std::vector<Point> convex_position_points(std::mt19937_64 &rng, int k, bool circle) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> angles;
  while (static_cast<int>(angles.size()) < k) {
    const double a = 2.0 * std::numbers::pi * u(rng);
    bool far = true;
    for (double b : angles)
      far = far && std::abs(a - b) > 1e-6;
    if (far)
      angles.push_back(a);
  }
  const double rx = 1.0 + 50.0 * u(rng);
  const double ry = circle ? rx : rx * (0.3 + 0.7 * u(rng));
  const double rot = 2.0 * std::numbers::pi * u(rng);
  const double tx = 100.0 * (u(rng) - 0.5), ty = 100.0 * (u(rng) - 0.5);
  std::vector<Point> pts;
  for (double a : angles) {
    const double x = rx * std::cos(a), y = ry * std::sin(a);
    pts.push_back({tx + x * std::cos(rot) - y * std::sin(rot),
                   ty + x * std::sin(rot) + y * std::cos(rot)});
  }
  std::shuffle(pts.begin(), pts.end(), rng);
  return pts;
}

//! Random convex polygon, counterclockwise: jittered equal angles on a
//! circle of random radius around a random centre.
inline Polygon random_convex_polygon(std::mt19937_64 &rng, int size, double rmin,
                                     double rmax) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int k = 3 + static_cast<int>(u(rng) * 10);
  const double r = rmin + (rmax - rmin) * u(rng);
  const double cx = r + 1 + (size - 2 * r - 2) * u(rng);
  const double cy = r + 1 + (size - 2 * r - 2) * u(rng);
  const double phase = 2.0 * std::numbers::pi * u(rng);
  Polygon p;
  for (int j = 0; j < k; ++j) {
    const double a = phase + 2.0 * std::numbers::pi * (j + 0.4 * (u(rng) - 0.5)) / k;
    p.vertices.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return p;
}

} // namespace acdr::testing
