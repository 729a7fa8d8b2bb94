#pragma once

#include "acdr/grid.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

namespace detail {

struct FileCloser {
  void operator()(std::FILE *f) const {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0; // 1 (gray) or 3 (rgb)
  std::vector<unsigned char> pixels;
};

inline RawPng read_png_8bit(const std::string &path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file)
    throw std::runtime_error("png: cannot open '" + path + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw std::runtime_error("png: '" + path + "' is not a PNG file");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: out of memory reading '" + path + "'");
  }
  RawPng raw;
  std::string error;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: corrupt file '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  if (depth != 8)
    error = "png: '" + path + "' has bit depth " + std::to_string(depth) +
            ", expected 8";
  else if (type != PNG_COLOR_TYPE_GRAY && type != PNG_COLOR_TYPE_RGB)
    error = "png: '" + path + "' must be 8-bit grayscale or RGB";
  if (!error.empty()) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(error);
  }
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = type == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  raw.pixels.resize(static_cast<std::size_t>(raw.width) * raw.height *
                    raw.channels);
  rows.resize(static_cast<std::size_t>(raw.height));
  for (int y = 0; y < raw.height; ++y)
    rows[y] = raw.pixels.data() +
              static_cast<std::size_t>(y) * raw.width * raw.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

inline void write_png_8bit(const std::string &path, const RawPng &raw) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file)
    throw std::runtime_error("png: cannot open '" + path + "' for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: out of memory writing '" + path + "'");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(raw.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: failed writing '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(raw.width),
               static_cast<png_uint_32>(raw.height), 8,
               raw.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < raw.height; ++y)
    rows[y] = const_cast<png_bytep>(raw.pixels.data()) +
              static_cast<std::size_t>(y) * raw.width * raw.channels;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline unsigned char to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

} // namespace detail

//! Writes a 1-channel (grayscale) or 3-channel (RGB) image.
inline void save_png(const std::string &path, const Image &img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("png: can only save 1 or 3 channels");
  detail::RawPng raw{img.width, img.height, img.channels, {}};
  raw.pixels.resize(img.data.size());
  std::size_t i = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        raw.pixels[i++] = detail::to_byte(img.at(c, y, x));
  detail::write_png_8bit(path, raw);
}

inline void save_mask_png(const std::string &path, const Mask &mask) {
  detail::RawPng raw{mask.width, mask.height, 1, {}};
  raw.pixels.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    raw.pixels[i] = mask.data[i] ? 255 : 0;
  detail::write_png_8bit(path, raw);
}

//! Soft mask (values in [0,1]) as grayscale, for debugging.
inline void save_soft_mask_png(const std::string &path, const Grid<float> &mask) {
  detail::RawPng raw{mask.width, mask.height, 1, {}};
  raw.pixels.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    raw.pixels[i] = detail::to_byte(mask.data[i]);
  detail::write_png_8bit(path, raw);
}

//! Loads an 8-bit image as 3 channels in [0,1]; grayscale is replicated.
inline Image load_png(const std::string &path) {
  const auto raw = detail::read_png_8bit(path);
  Image img(3, raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src = raw.channels == 1 ? 0 : c;
        img.at(c, y, x) =
            raw.pixels[(static_cast<std::size_t>(y) * raw.width + x) *
                           raw.channels + src] / 255.0f;
      }
  return img;
}

//! Loads an 8-bit grayscale mask; values >= 128 become 1.
inline Mask load_mask_png(const std::string &path) {
  const auto raw = detail::read_png_8bit(path);
  if (raw.channels != 1)
    throw std::runtime_error("png: mask '" + path + "' must be grayscale");
  Mask m(raw.height, raw.width);
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data[i] = raw.pixels[i] >= 128 ? 1 : 0;
  return m;
}

} // namespace acdr
