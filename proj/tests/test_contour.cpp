#include "acdr/contour.hpp"
#include "acdr/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace acdr;
using TD = Tensor<double>;

namespace {

TD constant_field(std::size_t h, std::size_t w, double dx, double dy) {
  std::vector<double> v(2 * h * w);
  std::fill(v.begin(), v.begin() + h * w, dx);
  std::fill(v.begin() + h * w, v.end(), dy);
  return TD(Shape{2, h, w}, std::move(v));
}

TD random_field(std::mt19937_64 &rng, std::size_t h, std::size_t w, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(2 * h * w);
  for (auto &x : v)
    x = u(rng);
  return TD(Shape{2, h, w}, std::move(v));
}

TD points(std::vector<double> xy) {
  const std::size_t k = xy.size() / 2;
  return TD(Shape{k, 2}, std::move(xy));
}

} // namespace

TEST(SampleField, IntegerCoordinateReadsTexel) {
  std::mt19937_64 rng(1);
  const auto f = random_field(rng, 8, 6, 3.0);
  const auto s = sample_field(f, points({3, 5}));
  EXPECT_EQ(s[0], f[5 * 6 + 3]);
  EXPECT_EQ(s[1], f[48 + 5 * 6 + 3]);
}

TEST(SampleField, MidpointAveragesNeighbours) {
  std::mt19937_64 rng(2);
  const auto f = random_field(rng, 4, 4, 1.0);
  const auto s = sample_field(f, points({1.5, 2.0}));
  EXPECT_DOUBLE_EQ(s[0], (f[2 * 4 + 1] + f[2 * 4 + 2]) / 2);
  EXPECT_DOUBLE_EQ(s[1], (f[16 + 2 * 4 + 1] + f[16 + 2 * 4 + 2]) / 2);
}

TEST(SampleField, LastTexelIsReachable) {
  std::mt19937_64 rng(3);
  const auto f = random_field(rng, 5, 7, 1.0);
  const auto s = sample_field(f, points({6, 4}));
  EXPECT_EQ(s[0], f[34]);
}

TEST(SampleField, RejectsOutOfRangePointAndBadField) {
  const auto f = constant_field(4, 4, 0, 0);
  EXPECT_THROW(sample_field(f, points({3.5, 1})), std::invalid_argument);
  EXPECT_THROW(sample_field(f, points({-0.1, 1})), std::invalid_argument);
  EXPECT_THROW(sample_field(TD(Shape{3, 4, 4}, std::vector<double>(48)), points({1, 1})),
               std::invalid_argument);
}

TEST(Step, ZeroFieldIsFixedPoint) {
  const auto p = points({1.25, 2.5, 7.0, 0.0, 3.3, 6.9});
  EXPECT_EQ(step(p, constant_field(8, 8, 0, 0)).values(), p.values());
}

TEST(Step, ConstantFieldShiftsEveryVertex) {
  const auto p = points({1.25, 2.5, 5.0, 0.0, 3.3, 6.9});
  const auto q = step(p, constant_field(8, 8, 1, 0));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(q[2 * j], p[2 * j] + 1);
    EXPECT_DOUBLE_EQ(q[2 * j + 1], p[2 * j + 1]);
  }
}

TEST(Step, TruncatesToImage) {
  const auto q = step(points({0.5, 0.5}), constant_field(64, 64, -2, -2));
  EXPECT_EQ(q.values(), (std::vector<double>{0.0, 0.0}));
  const auto r = step(points({62.0, 10.0}), constant_field(64, 64, 5, 0));
  EXPECT_EQ(r[0], 63.0);
}

TEST(Step, ClampedCoordinatesGetNoGradient) {
  TD p(Shape{2, 2}, {0.5, 3.0, 4.0, 4.0}, true);
  const auto q = step(p, constant_field(8, 8, -2, 0));
  backward(sum(q));
  // Vertex 0 x was clamped; the rest pass straight through.
  EXPECT_EQ(p.grad(), (std::vector<double>{0.0, 1.0, 1.0, 1.0}));
}

TEST(Step, RejectsNonFiniteDisplacement) {
  auto f = constant_field(4, 4, 0, 0);
  f.mutable_values()[5] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(step(points({1, 1}), f), std::invalid_argument);
}

TEST(Evolve, ZeroFieldKeepsInitialPolygon) {
  const auto p0 = to_tensor<double>(init_circle(16, 16, 8, 8));
  const auto faces = delaunay(to_polygon(p0).vertices);
  const auto trace = evolve(p0, faces, constant_field(16, 16, 0, 0), 3, Mode::train);
  ASSERT_EQ(trace.polygons.size(), 4u);
  ASSERT_EQ(trace.masks.size(), 3u);
  EXPECT_EQ(trace.polygons[3].values(), p0.values());
}

TEST(Evolve, ConstantFieldComposes) {
  const auto p0 = to_tensor<double>(init_circle(32, 32, 6, 10));
  const auto faces = delaunay(to_polygon(p0).vertices);
  const auto trace = evolve(p0, faces, constant_field(32, 32, 1, 1), 2, Mode::eval);
  EXPECT_TRUE(trace.masks.empty());
  for (std::size_t i = 0; i < p0.size(); ++i)
    EXPECT_NEAR(trace.polygons[2][i], p0[i] + 2.0, 1e-12);
  EXPECT_EQ(trace.final_mask,
            rasterize_hard(to_polygon(trace.polygons[2]), faces, 32, 32));
}

TEST(Evolve, SplitRunEqualsSingleRun) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_field(rng, 24, 24, 2.5);
    const auto p0 = to_tensor<double>(init_circle(24, 24, 12, 12));
    const auto faces = delaunay(to_polygon(p0).vertices);
    const auto full = evolve(p0, faces, f, 5, Mode::eval);
    const auto a = evolve(p0, faces, f, 2, Mode::eval);
    const auto b = evolve(a.polygons.back(), faces, f, 3, Mode::eval);
    EXPECT_EQ(full.polygons.back().values(), b.polygons.back().values());
  }
}

TEST(Evolve, VerticesStayInsideImage) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_field(rng, 16, 20, 12.0);
    const auto p0 = to_tensor<double>(init_circle(16, 20, 16, 14));
    const auto trace = evolve(p0, delaunay(to_polygon(p0).vertices), f, 5, Mode::eval);
    for (const auto &p : trace.polygons)
      for (std::size_t j = 0; j < p.dim(0); ++j) {
        EXPECT_GE(p[2 * j], 0.0);
        EXPECT_LE(p[2 * j], 19.0);
        EXPECT_GE(p[2 * j + 1], 0.0);
        EXPECT_LE(p[2 * j + 1], 15.0);
      }
  }
}

TEST(Evolve, FieldGradientCollectsEveryIteration) {
  std::mt19937_64 rng(6);
  const auto fixed = random_field(rng, 16, 16, 1.0);
  TD f(fixed.shape(), fixed.values(), true);
  const auto p0 = to_tensor<double>(init_circle(16, 16, 8, 8));
  const auto faces = delaunay(to_polygon(p0).vertices);
  const auto t1 = evolve(p0, faces, f, 1, Mode::train);
  backward(sum(t1.masks[0]));
  const auto g1 = f.grad();
  f.zero_grad();
  const auto t2 = evolve(p0, faces, f, 2, Mode::train);
  backward(add(sum(t2.masks[0]), sum(t2.masks[1])));
  // The second mask contributes, so the gradient must change.
  EXPECT_NE(f.grad(), g1);
  EXPECT_THROW(evolve(p0, faces, f, 0, Mode::train), std::invalid_argument);
}
