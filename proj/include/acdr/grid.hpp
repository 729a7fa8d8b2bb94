#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace acdr {

//! Row-major 2D array.
template <class T> struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0)
      throw std::invalid_argument("grid: negative size");
  }

  T &operator()(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  const T &operator()(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  bool contains(int y, int x) const {
    return y >= 0 && y < height && x >= 0 && x < width;
  }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Grid &, const Grid &) = default;
};

//! Binary mask, values 0 or 1.
using Mask = Grid<std::uint8_t>;

//! Planar (channel-major) float image, values in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  float &at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  friend bool operator==(const Image &, const Image &) = default;
};

inline std::size_t count_ones(const Mask &m) {
  std::size_t n = 0;
  for (auto v : m.data)
    n += v != 0;
  return n;
}

} // namespace acdr
