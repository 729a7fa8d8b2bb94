#pragma once

#include "acdr/grid.hpp"
#include "acdr/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acdr {

struct Sample {
  std::string id;
  Image image; // 3 x h x w in [0,1]
  Mask mask;   // h x w in {0,1}
};

enum class ShapeFamily { convex_polygon, star, ellipse, rounded_rect, mixed };
enum class Texture { flat, gradient, speckle, mixed };

struct SyntheticSpec {
  int n = 200;
  int size = 64;
  ShapeFamily shape_family = ShapeFamily::mixed;
  double noise_sigma = 0.05;
  Texture texture = Texture::mixed;
  std::uint64_t seed = 0;
};

inline ShapeFamily parse_shape_family(const std::string &s) {
  if (s == "convex-polygon") return ShapeFamily::convex_polygon;
  if (s == "star") return ShapeFamily::star;
  if (s == "ellipse") return ShapeFamily::ellipse;
  if (s == "rounded-rect") return ShapeFamily::rounded_rect;
  if (s == "mixed") return ShapeFamily::mixed;
  throw std::invalid_argument("unknown shape family '" + s + "'");
}

inline Texture parse_texture(const std::string &s) {
  if (s == "flat") return Texture::flat;
  if (s == "gradient") return Texture::gradient;
  if (s == "speckle") return Texture::speckle;
  if (s == "mixed") return Texture::mixed;
  throw std::invalid_argument("unknown texture '" + s + "'");
}

//! Number of 4-connected foreground components.
inline int count_components(const Mask &m) {
  Grid<std::uint8_t> seen(m.height, m.width);
  std::vector<std::pair<int, int>> stack;
  int components = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m(y, x) || seen(y, x))
        continue;
      ++components;
      stack.push_back({y, x});
      seen(y, x) = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ny = cy + dy[d], nx = cx + dx[d];
          if (m.contains(ny, nx) && m(ny, nx) && !seen(ny, nx)) {
            seen(ny, nx) = 1;
            stack.push_back({ny, nx});
          }
        }
      }
    }
  return components;
}

namespace detail {

// Inside test in a shape-local frame (origin at the shape centre, unrotated).
struct ShapeParams {
  ShapeFamily family;
  double cx, cy, rotation;
  double r;                    // characteristic radius
  double sx, sy;               // anisotropy (convex polygon / ellipse axes)
  std::vector<double> angles;  // polygon / star vertex angles
  double inner;                // star inner radius ratio
  double corner;               // rounded-rect corner radius
};

inline bool point_in_polygon(double x, double y,
                             const std::vector<std::pair<double, double>> &poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi)
      in = !in;
  }
  return in;
}

inline Mask render_shape(const ShapeParams &s, int size) {
  std::vector<std::pair<double, double>> poly;
  if (s.family == ShapeFamily::convex_polygon) {
    for (double a : s.angles)
      poly.push_back({s.r * s.sx * std::cos(a), s.r * s.sy * std::sin(a)});
  } else if (s.family == ShapeFamily::star) {
    const std::size_t n = s.angles.size();
    const double half = std::numbers::pi / static_cast<double>(n);
    for (double a : s.angles) {
      poly.push_back({s.r * std::cos(a), s.r * std::sin(a)});
      poly.push_back({s.r * s.inner * std::cos(a + half),
                      s.r * s.inner * std::sin(a + half)});
    }
  }
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x - s.cx, dy = y - s.cy;
      const double u = c * dx + sn * dy, v = -sn * dx + c * dy;
      bool in = false;
      switch (s.family) {
      case ShapeFamily::convex_polygon:
      case ShapeFamily::star:
        in = point_in_polygon(u, v, poly);
        break;
      case ShapeFamily::ellipse: {
        const double a = s.r * s.sx, b = s.r * s.sy;
        in = (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
        break;
      }
      case ShapeFamily::rounded_rect: {
        const double hw = s.r * s.sx, hh = s.r * s.sy;
        const double qx = std::abs(u) - (hw - s.corner);
        const double qy = std::abs(v) - (hh - s.corner);
        const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
        in = std::hypot(ox, oy) + std::min(std::max(qx, qy), 0.0) <= s.corner;
        break;
      }
      case ShapeFamily::mixed:
        break;
      }
      m(y, x) = in ? 1 : 0;
    }
  return m;
}

inline float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

} // namespace detail

//! One synthetic sample; depends only on (spec, index).
inline Sample generate_one(const SyntheticSpec &spec, int index) {
  const int size = spec.size;
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed),
                    static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };

  static constexpr ShapeFamily kFamilies[4] = {
      ShapeFamily::convex_polygon, ShapeFamily::star, ShapeFamily::ellipse,
      ShapeFamily::rounded_rect};
  static constexpr Texture kTextures[3] = {Texture::flat, Texture::gradient,
                                           Texture::speckle};
  const ShapeFamily family = spec.shape_family == ShapeFamily::mixed
                                 ? kFamilies[index % 4]
                                 : spec.shape_family;
  const Texture texture = spec.texture == Texture::mixed
                              ? kTextures[static_cast<int>(uni(0, 3)) % 3]
                              : spec.texture;

  Sample s;
  s.id = "s" + std::to_string(index);
  const double area = static_cast<double>(size) * size;
  for (;;) {
    detail::ShapeParams p{};
    p.family = family;
    const double centre = (size - 1) / 2.0, jitter = 0.1 * size;
    p.cx = centre + uni(-jitter, jitter);
    p.cy = centre + uni(-jitter, jitter);
    p.rotation = uni(0.0, 2.0 * std::numbers::pi);
    p.r = uni(0.16, 0.40) * size;
    p.sx = uni(0.7, 1.0);
    p.sy = uni(0.7, 1.0);
    if (family == ShapeFamily::convex_polygon) {
      const int n = static_cast<int>(uni(5, 9));
      const double step = 2.0 * std::numbers::pi / n;
      for (int i = 0; i < n; ++i)
        p.angles.push_back(i * step + uni(-0.3, 0.3) * step);
    } else if (family == ShapeFamily::star) {
      const int n = static_cast<int>(uni(5, 8));
      for (int i = 0; i < n; ++i)
        p.angles.push_back(2.0 * std::numbers::pi * i / n);
      p.inner = uni(0.6, 0.8);
    } else if (family == ShapeFamily::rounded_rect) {
      p.corner = uni(0.1, 0.5) * std::min(p.sx, p.sy) * p.r;
    }
    s.mask = detail::render_shape(p, size);
    const double frac = static_cast<double>(count_ones(s.mask)) / area;
    if (frac >= 0.05 && frac <= 0.60 && count_components(s.mask) == 1)
      break;
  }

  // Foreground/background colours with a guaranteed mean contrast.
  double bg[3], fg[3];
  for (;;) {
    double mb = 0, mf = 0;
    for (int c = 0; c < 3; ++c) {
      bg[c] = uni(0.1, 0.9);
      fg[c] = uni(0.1, 0.9);
      mb += bg[c];
      mf += fg[c];
    }
    if (std::abs(mb - mf) / 3.0 >= 0.25)
      break;
  }
  const double gdir = uni(0.0, 2.0 * std::numbers::pi);
  const double gamp = 0.2;
  std::normal_distribution<double> noise(0.0, 1.0);
  s.image = Image(3, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool in = s.mask(y, x) != 0;
      double shade = 0.0, gain = 1.0;
      if (texture == Texture::gradient)
        shade = gamp * ((x * std::cos(gdir) + y * std::sin(gdir)) / size - 0.5);
      else if (texture == Texture::speckle)
        gain = 1.0 + 0.3 * uni(-1.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        double v = (in ? fg[c] : bg[c]) * gain + shade;
        if (spec.noise_sigma > 0.0)
          v += spec.noise_sigma * noise(rng);
        s.image.at(c, y, x) = detail::quantize(v);
      }
    }
  return s;
}

//! Deterministic synthetic dataset of single, roughly centred shapes.
inline std::vector<Sample> generate(const SyntheticSpec &spec) {
  if (spec.n < 1)
    throw std::invalid_argument("generate: need n >= 1");
  if (spec.size < 8)
    throw std::invalid_argument("generate: size must be >= 8");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i)
    out.push_back(generate_one(spec, i));
  return out;
}

//------------------------------------------------------------------------------
// Resampling

namespace detail {

inline double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

} // namespace detail

//! Scales by `scale` and rotates by `rot_deg` (counterclockwise as displayed)
//! about the image centre, keeping the original size. Images are bilinear
//! with edge replication; masks are nearest neighbour with zero padding.
inline Sample augment(const Sample &s, double scale, double rot_deg) {
  if (!(scale > 0.0))
    throw std::invalid_argument("augment: scale must be positive");
  const int h = s.mask.height, w = s.mask.width;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double th = rot_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);
  Sample out;
  out.id = s.id;
  out.image = Image(s.image.channels, h, w);
  out.mask = Mask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Inverse map: output -> source. Displayed CCW rotation in a y-down
      // frame is (dx, dy) -> (dx c + dy s, -dx s + dy c).
      const double dx = (x - cx) / scale, dy = (y - cy) / scale;
      const double sx = detail::snap(cx + dx * c - dy * sn);
      const double sy = detail::snap(cy + dx * sn + dy * c);
      const long mx = std::lround(sx), my = std::lround(sy);
      out.mask(y, x) = (mx >= 0 && mx < w && my >= 0 && my < h)
                           ? s.mask(static_cast<int>(my), static_cast<int>(mx))
                           : 0;
      const double bx = std::clamp(sx, 0.0, w - 1.0);
      const double by = std::clamp(sy, 0.0, h - 1.0);
      const int x0 = std::min(static_cast<int>(std::floor(bx)), w - 1);
      const int y0 = std::min(static_cast<int>(std::floor(by)), h - 1);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = bx - x0, fy = by - y0;
      for (int ch = 0; ch < s.image.channels; ++ch) {
        const double v =
            (1 - fy) * ((1 - fx) * s.image.at(ch, y0, x0) + fx * s.image.at(ch, y0, x1)) +
            fy * ((1 - fx) * s.image.at(ch, y1, x0) + fx * s.image.at(ch, y1, x1));
        out.image.at(ch, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return out;
}

//! Resamples to size x size: bilinear (aligned corners) for the image,
//! nearest neighbour for the mask.
inline Sample resize_sample(const Sample &s, int size) {
  const int h = s.mask.height, w = s.mask.width;
  if (h == size && w == size)
    return s;
  Sample out;
  out.id = s.id;
  out.image = Image(s.image.channels, size, size);
  out.mask = Mask(size, size);
  const double ky = size > 1 ? (h - 1.0) / (size - 1.0) : 0.0;
  const double kx = size > 1 ? (w - 1.0) / (size - 1.0) : 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double sy = y * ky, sx = x * kx;
      out.mask(y, x) = s.mask(static_cast<int>(std::lround(sy)),
                              static_cast<int>(std::lround(sx)));
      const int x0 = std::min(static_cast<int>(sx), w - 1), y0 = std::min(static_cast<int>(sy), h - 1);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < s.image.channels; ++c)
        out.image.at(c, y, x) = static_cast<float>(
            (1 - fy) * ((1 - fx) * s.image.at(c, y0, x0) + fx * s.image.at(c, y0, x1)) +
            fy * ((1 - fx) * s.image.at(c, y1, x0) + fx * s.image.at(c, y1, x1)));
    }
  return out;
}

//------------------------------------------------------------------------------
// Splits and on-disk layout:
//   <root>/images/<id>.png  <root>/masks/<id>.png  <root>/index.csv (id,split)

//! Seeded, disjoint train/test partition of indices [0, n).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split(std::size_t n, double train_frac, std::uint64_t seed) {
  if (!(train_frac >= 0.0 && train_frac <= 1.0))
    throw std::invalid_argument("split: train fraction must lie in [0,1]");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i)
    idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(train_frac * n));
  std::vector<std::size_t> train(idx.begin(), idx.begin() + n_train);
  std::vector<std::size_t> test(idx.begin() + n_train, idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

struct IndexEntry {
  std::string id;
  std::string split;
};

inline void write_dataset(const std::filesystem::path &root,
                          const std::vector<Sample> &samples,
                          const std::vector<std::string> &splits) {
  if (splits.size() != samples.size())
    throw std::invalid_argument("write_dataset: one split label per sample");
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  std::ofstream index(root / "index.csv");
  if (!index)
    throw std::runtime_error("cannot write " + (root / "index.csv").string());
  index << "id,split\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    save_png((root / "images" / (samples[i].id + ".png")).string(), samples[i].image);
    save_mask_png((root / "masks" / (samples[i].id + ".png")).string(), samples[i].mask);
    index << samples[i].id << ',' << splits[i] << '\n';
  }
}

inline std::vector<IndexEntry> read_index(const std::filesystem::path &root) {
  std::ifstream is(root / "index.csv");
  if (!is)
    throw std::runtime_error("cannot read " + (root / "index.csv").string());
  std::string line;
  std::getline(is, line);
  if (line != "id,split")
    throw std::runtime_error((root / "index.csv").string() +
                             ": expected header 'id,split'");
  std::vector<IndexEntry> out;
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("index.csv: malformed line '" + line + "'");
    out.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return out;
}

inline Sample load_sample(const std::filesystem::path &root, const std::string &id) {
  Sample s;
  s.id = id;
  s.image = load_png((root / "images" / (id + ".png")).string());
  s.mask = load_mask_png((root / "masks" / (id + ".png")).string());
  if (s.mask.height != s.image.height || s.mask.width != s.image.width)
    throw std::runtime_error("sample '" + id + "': image and mask sizes differ");
  return s;
}

//! Samples whose split label equals `which` (all samples when empty), in
//! index order.
inline std::vector<Sample> load_dataset(const std::filesystem::path &root,
                                        const std::string &which = "") {
  std::vector<Sample> out;
  for (const auto &e : read_index(root))
    if (which.empty() || e.split == which)
      out.push_back(load_sample(root, e.id));
  return out;
}

} // namespace acdr
