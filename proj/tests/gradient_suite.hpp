#pragma once

// Central finite-difference checks for every differentiable op, shared by the
// unit tests and the acceptance runner. Each check builds one random instance
// in double precision and returns the relative error
//   ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2).

#include "acdr/contour.hpp"
#include "acdr/geometry.hpp"
#include "acdr/losses.hpp"
#include "acdr/ops.hpp"
#include "acdr/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace acdr::testing {

using TD = Tensor<double>;
using Rng = std::mt19937_64;
using ScalarFn = std::function<TD(const std::vector<TD> &)>;

inline double uniform(Rng &rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline TD random_tensor(Rng &rng, Shape shape, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (auto &x : v)
    x = uniform(rng, lo, hi);
  return TD(std::move(shape), std::move(v), requires_grad);
}

//! Values bounded away from zero, for ops with a kink there.
inline TD away_from_zero(Rng &rng, Shape shape, double gap = 0.05) {
  std::vector<double> v(numel(shape));
  for (auto &x : v) {
    const double u = uniform(rng, gap, 1.0);
    x = uniform(rng, 0.0, 1.0) < 0.5 ? -u : u;
  }
  return TD(std::move(shape), std::move(v), true);
}

//! Distinct values (pairwise gaps well above the probe step), shuffled.
inline TD distinct_tensor(Rng &rng, Shape shape) {
  const std::size_t n = numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = 0.1 * static_cast<double>(i) + uniform(rng, -0.02, 0.02);
  std::shuffle(v.begin(), v.end(), rng);
  return TD(std::move(shape), std::move(v), true);
}

//! Reduces any output to a scalar with fixed random weights.
inline TD weighted_sum(const TD &out, const TD &weights) { return sum(mul(out, weights)); }

inline double gradient_error(const ScalarFn &f, std::vector<TD> inputs, double eps = 1e-3) {
  for (auto &in : inputs)
    in.zero_grad();
  backward(f(inputs));
  std::vector<double> analytic, numeric;
  for (auto &in : inputs) {
    if (!in.requires_grad())
      continue;
    const auto g = in.grad();
    auto &v = in.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      analytic.push_back(g.empty() ? 0.0 : g[i]);
      const double keep = v[i];
      double plus, minus;
      {
        NoGradGuard guard;
        v[i] = keep + eps;
        plus = f(inputs).item();
        v[i] = keep - eps;
        minus = f(inputs).item();
      }
      v[i] = keep;
      numeric.push_back((plus - minus) / (2.0 * eps));
    }
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  return denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

// --- tensor ops ---------------------------------------------------------------

inline double check_conv(Rng &rng) {
  const std::size_t stride = 1 + rng() % 2, pad = rng() % 2;
  const std::size_t cin = 1 + rng() % 2;
  auto x = random_tensor(rng, {cin, 4, 4});
  auto w = random_tensor(rng, {2, cin, 3, 3});
  auto b = random_tensor(rng, {2});
  const std::size_t oh = (4 + 2 * pad - 3) / stride + 1;
  const auto r = random_tensor(rng, {2, oh, oh}, -1, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) {
        return weighted_sum(conv2d(in[0], in[1], in[2], stride, pad), r);
      },
      {x, w, b});
}

inline double check_maxpool(Rng &rng) {
  auto x = distinct_tensor(rng, {2, 4, 4});
  const auto r = random_tensor(rng, {2, 2, 2}, -1, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) { return weighted_sum(maxpool2d(in[0], 2), r); }, {x});
}

inline double check_resize(Rng &rng) {
  const std::size_t h = 2 + rng() % 5, w = 2 + rng() % 5;
  const std::size_t oh = 1 + rng() % 7, ow = 1 + rng() % 7;
  auto x = random_tensor(rng, {2, h, w});
  const auto r = random_tensor(rng, {2, oh, ow}, -1, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) { return weighted_sum(bilinear_resize(in[0], oh, ow), r); },
      {x});
}

inline double check_batchnorm(Rng &rng) {
  auto x = random_tensor(rng, {2, 3, 2, 2});
  auto gamma = random_tensor(rng, {3}, 0.5, 1.5);
  auto beta = random_tensor(rng, {3});
  const auto r = random_tensor(rng, {2, 3, 2, 2}, -1, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) {
        BatchNormStats<double> stats(3);
        return weighted_sum(batchnorm2d(in[0], in[1], in[2], stats, Mode::train), r);
      },
      {x, gamma, beta});
}

inline double check_mse(Rng &rng) {
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {3, 4});
  return gradient_error([](const std::vector<TD> &in) { return mse(in[0], in[1]); }, {a, b});
}

inline double check_relu(Rng &rng) {
  auto x = away_from_zero(rng, {3, 5});
  const auto r = random_tensor(rng, {3, 5}, -1, 1, false);
  return gradient_error([&](const std::vector<TD> &in) { return weighted_sum(relu(in[0]), r); },
                        {x});
}

inline double check_sigmoid(Rng &rng) {
  auto x = random_tensor(rng, {3, 5}, -3, 3);
  const auto r = random_tensor(rng, {3, 5}, -1, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) { return weighted_sum(sigmoid(in[0]), r); }, {x});
}

inline double check_dropout(Rng &rng) {
  auto x = random_tensor(rng, {4, 6});
  const auto r = random_tensor(rng, {4, 6}, -1, 1, false);
  const auto seed = rng();
  return gradient_error(
      [&](const std::vector<TD> &in) {
        Rng local(seed);
        return weighted_sum(dropout(in[0], 0.3, Mode::train, local), r);
      },
      {x});
}

inline double check_concat_select(Rng &rng) {
  auto a = random_tensor(rng, {2, 2, 3, 3});
  auto b = random_tensor(rng, {2, 1, 3, 3});
  const auto r = random_tensor(rng, {3, 3, 3}, -1, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) { return weighted_sum(select(concat(in[0], in[1], 1), 1), r); },
      {a, b});
}

inline double check_elementwise(Rng &rng) {
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {3, 4});
  return gradient_error(
      [](const std::vector<TD> &in) {
        return mean(affine(mul(sub(in[0], in[1]), add(in[0], in[1])), 1.5, 0.25));
      },
      {a, b});
}

inline double check_conv_relu_mse(Rng &rng) {
  for (;;) {
    auto x = random_tensor(rng, {1, 2, 4, 4});
    auto w = random_tensor(rng, {3, 2, 3, 3});
    auto b = random_tensor(rng, {3});
    const auto target = random_tensor(rng, {1, 3, 4, 4}, -1, 1, false);
    {
      // Skip instances with a pre-activation inside the probe's reach of the
      // relu kink.
      NoGradGuard guard;
      const auto z = conv2d(x, w, b, 1, 1);
      if (std::any_of(z.values().begin(), z.values().end(),
                      [](double v) { return std::abs(v) < 0.02; }))
        continue;
    }
    return gradient_error(
        [&](const std::vector<TD> &in) {
          return mse(relu(conv2d(in[0], in[1], in[2], 1, 1)), target);
        },
        {x, w, b});
  }
}

// --- contour and losses --------------------------------------------------------

//! Coordinates at least `gap` away from integers so no probe crosses a texel.
inline double off_lattice(Rng &rng, double lo, double hi, double gap = 0.02) {
  for (;;) {
    const double v = uniform(rng, lo, hi);
    const double frac = v - std::floor(v);
    if (frac > gap && frac < 1.0 - gap)
      return v;
  }
}

inline double check_sampler(Rng &rng) {
  const std::size_t h = 5, w = 6, k = 4;
  auto field = random_tensor(rng, {2, h, w});
  std::vector<double> pts;
  for (std::size_t j = 0; j < k; ++j) {
    pts.push_back(off_lattice(rng, 0.0, w - 1.0));
    pts.push_back(off_lattice(rng, 0.0, h - 1.0));
  }
  TD p(Shape{k, 2}, pts, true);
  const auto r = random_tensor(rng, {k, 2}, -1, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) { return weighted_sum(sample_field(in[0], in[1]), r); },
      {field, p});
}

inline double check_seg_loss(Rng &rng) {
  auto m1 = random_tensor(rng, {5, 5}, 0, 1);
  auto m2 = random_tensor(rng, {5, 5}, 0, 1);
  TD gt(Shape{5, 5}, std::vector<double>(25), false);
  auto &g = gt.mutable_values();
  for (auto &v : g)
    v = uniform(rng, 0, 1) < 0.5 ? 0.0 : 1.0;
  return gradient_error(
      [&](const std::vector<TD> &in) { return seg_loss(std::vector<TD>{in[0], in[1]}, gt); },
      {m1, m2});
}

inline double check_balloon(Rng &rng) {
  auto m = random_tensor(rng, {4, 6}, 0, 1);
  return gradient_error([](const std::vector<TD> &in) { return balloon_loss(in[0]); }, {m});
}

//! Random star-shaped polygon around (c, c).
inline TD random_polygon(Rng &rng, std::size_t k, double c, double rmin, double rmax,
                         bool requires_grad = true) {
  std::vector<double> v;
  for (std::size_t j = 0; j < k; ++j) {
    const double a = 2.0 * std::numbers::pi * (j + uniform(rng, -0.3, 0.3)) / k;
    const double r = uniform(rng, rmin, rmax);
    v.push_back(c + r * std::cos(a));
    v.push_back(c + r * std::sin(a));
  }
  return TD(Shape{k, 2}, v, requires_grad);
}

inline double check_curvature(Rng &rng) {
  auto p = random_polygon(rng, 3 + rng() % 10, 10.0, 3.0, 8.0);
  return gradient_error([](const std::vector<TD> &in) { return curvature_loss(in[0]); }, {p});
}

inline double check_total_loss(Rng &rng) {
  auto m1 = random_tensor(rng, {4, 4}, 0, 1);
  auto m2 = random_tensor(rng, {4, 4}, 0, 1);
  auto p1 = random_polygon(rng, 6, 2.0, 0.5, 1.5);
  auto p2 = random_polygon(rng, 6, 2.0, 0.5, 1.5);
  const auto gt = random_tensor(rng, {4, 4}, 0, 1, false);
  const LossWeights w{uniform(rng, 0.0, 0.1), uniform(rng, 0.1, 1.0)};
  return gradient_error(
      [&](const std::vector<TD> &in) {
        return total_loss(std::vector<TD>{in[0], in[1]}, gt, std::vector<TD>{in[2], in[3]}, w)
            .total;
      },
      {m1, m2, p1, p2});
}

// --- rasterizer and full evolution ----------------------------------------------

//! Faces from a regular polygon, vertices then perturbed as evolution would.
inline std::pair<TD, FaceList> perturbed_mesh(Rng &rng, std::size_t k, int size,
                                              double diameter, double jitter) {
  const auto circle = init_circle(size, size, static_cast<int>(k), diameter);
  const auto faces = delaunay(circle.vertices);
  std::vector<double> v;
  for (const auto &q : circle.vertices) {
    v.push_back(q.x + uniform(rng, -jitter, jitter));
    v.push_back(q.y + uniform(rng, -jitter, jitter));
  }
  return {TD(Shape{k, 2}, v, true), faces};
}

//! True when some pixel centre inside a face is nearly equidistant from two
//! of its edges. The signed distance has a kink there, which a probe of
//! size `margin` can cross.
inline bool near_medial_axis(const std::vector<double> &v, const FaceList &faces, int h,
                             int w, double margin) {
  for (const auto &f : faces) {
    double px[3], py[3];
    for (int i = 0; i < 3; ++i) {
      px[i] = v[2 * f[i]];
      py[i] = v[2 * f[i] + 1];
    }
    const double area2 = (px[1] - px[0]) * (py[2] - py[0]) - (py[1] - py[0]) * (px[2] - px[0]);
    const double s = area2 > 0 ? 1.0 : -1.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double d[3];
        bool inside = true;
        for (int e = 0; e < 3; ++e) {
          const int a = e, b = (e + 1) % 3;
          const double ex = px[b] - px[a], ey = py[b] - py[a];
          const double cross = s * (ex * (y - py[a]) - ey * (x - px[a]));
          d[e] = cross / std::hypot(ex, ey);
          inside = inside && d[e] >= 0.0;
        }
        if (!inside)
          continue;
        std::sort(d, d + 3);
        if (d[1] - d[0] < margin)
          return true;
      }
  }
  return false;
}

inline double check_rasterizer(Rng &rng) {
  for (;;) {
    auto [verts, faces] = perturbed_mesh(rng, 8, 32, 18.0, 2.0);
    const auto r = random_tensor(rng, {32, 32}, -1, 1, false);
    if (near_medial_axis(verts.values(), faces, 32, 32, 4e-3))
      continue;
    return gradient_error(
        [&](const std::vector<TD> &in) {
          return weighted_sum(rasterize(in[0], faces, 32, 32, 1.0), r);
        },
        {verts});
  }
}

inline double check_evolve(Rng &rng) {
  const int size = 16, iterations = 2 + static_cast<int>(rng() % 2);
  const auto circle = init_circle(size, size, 8, 8.0);
  const auto faces = delaunay(circle.vertices);
  const TD p0 = to_tensor<double>(circle);
  auto field = random_tensor(rng, {2, 16, 16}, -1.0, 1.0);
  const auto gt = random_tensor(rng, {16, 16}, 0, 1, false);
  return gradient_error(
      [&](const std::vector<TD> &in) {
        const auto trace = evolve(p0, faces, in[0], iterations, Mode::train, 1.0);
        return total_loss(trace.masks, gt,
                          std::vector<TD>(trace.polygons.begin() + 1, trace.polygons.end()),
                          LossWeights{})
            .total;
      },
      {field});
}

struct GradientCheck {
  std::string name;
  double tolerance;
  double (*run)(Rng &);
};

inline const std::vector<GradientCheck> &gradient_checks() {
  static const std::vector<GradientCheck> checks = {
      {"conv2d", 1e-3, check_conv},
      {"maxpool2d", 1e-3, check_maxpool},
      {"bilinear_resize", 1e-3, check_resize},
      {"batchnorm2d", 1e-3, check_batchnorm},
      {"mse", 1e-3, check_mse},
      {"relu", 1e-3, check_relu},
      {"sigmoid", 1e-3, check_sigmoid},
      {"dropout", 1e-3, check_dropout},
      {"concat_select", 1e-3, check_concat_select},
      {"elementwise", 1e-3, check_elementwise},
      {"conv_relu_mse", 1e-3, check_conv_relu_mse},
      {"sample_field", 1e-3, check_sampler},
      {"seg_loss", 1e-3, check_seg_loss},
      {"balloon_loss", 1e-3, check_balloon},
      {"curvature_loss", 1e-3, check_curvature},
      {"total_loss", 1e-3, check_total_loss},
      {"rasterize", 2e-2, check_rasterizer},
      {"evolve", 2e-2, check_evolve},
  };
  return checks;
}

} // namespace acdr::testing
