#pragma once

// Run configuration and its flat `key = value` text form.

#include "acdr/data.hpp"
#include "acdr/losses.hpp"
#include "acdr/unet.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

struct RunConfig {
  // Data. An empty data_dir means a synthetic set generated in memory.
  std::string data_dir;
  int n_samples = 200;
  int image_size = 64;
  std::string shape_family = "mixed";
  std::string texture = "mixed";
  double noise_sigma = 0.05;
  std::uint64_t data_seed = 0;
  double train_frac = 0.8;
  double val_frac = 0.1;
  bool augment = false;

  // Contour.
  int k = 16;
  int T = 3;
  double init_diameter = 16.0;
  // At tau 1 the soft union spills past hull vertices and fitted contours shrink.
  double tau = 0.5;

  // Optimisation.
  double lambda1 = 1e-2;
  double lambda2 = 5e-1;
  // Units of the vertex coordinates seen by the curvature term: "image"
  // divides by the image size, "pixel" uses raw pixel coordinates.
  std::string curvature_units = "image";
  double lr = 1e-3;
  int batch = 8;
  int epochs = 30;
  int patience = 0; // 0 disables early stopping
  std::uint64_t seed = 0;

  // Narrower and without dropout compared to UNetConfig{}; converges within the epoch budget.
  UNetConfig unet{3, 16, 4, 0.0, 1.0, FieldHead::linear};

  LossWeights weights() const { return {lambda1, lambda2}; }

  SyntheticSpec synthetic() const {
    return {n_samples, image_size, parse_shape_family(shape_family), noise_sigma,
            parse_texture(texture), data_seed};
  }

  void validate() const {
    auto fail = [](const std::string &m) { throw std::invalid_argument("config: " + m); };
    if (k < 3) fail("k must be >= 3");
    if (T < 1) fail("T must be >= 1");
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (!(tau > 0.0)) fail("tau must be > 0");
    if (batch < 1) fail("batch must be >= 1");
    if (epochs < 1) fail("epochs must be >= 1");
    if (patience < 0) fail("patience must be >= 0");
    if (lambda1 < 0.0 || lambda2 < 0.0) fail("loss weights must be >= 0");
    if (curvature_units != "image" && curvature_units != "pixel")
      fail("curvature_units must be image or pixel");
    if (n_samples < 1) fail("n_samples must be >= 1");
    if (!(train_frac > 0.0 && train_frac <= 1.0)) fail("train_frac must lie in (0,1]");
    if (!(val_frac >= 0.0 && val_frac < 1.0)) fail("val_frac must lie in [0,1)");
    if (!(init_diameter > 0.0)) fail("init_diameter must be > 0");
    if (unet.in_channels != 3) fail("in_channels must be 3");
    parse_shape_family(shape_family);
    parse_texture(texture);
    unet.validate();
  }
};

namespace detail {

template <class V> V parse_number(const std::string &key, const std::string &text) {
  V v{};
  const char *end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw std::invalid_argument("config: bad value '" + text + "' for '" + key + "'");
  return v;
}

inline bool parse_bool(const std::string &key, const std::string &text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw std::invalid_argument("config: bad boolean '" + text + "' for '" + key + "'");
}

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class V> std::string format_number(V v) {
  if constexpr (std::is_floating_point_v<V>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

} // namespace detail

//! Every recognised key, in the order they are written.
inline const std::vector<std::string> &config_keys() {
  static const std::vector<std::string> keys = {
      "data_dir", "n_samples", "image_size", "shape_family", "texture",
      "noise_sigma", "data_seed", "train_frac", "val_frac", "augment",
      "k", "T", "init_diameter", "tau",
      "lambda1", "lambda2", "curvature_units", "lr", "batch", "epochs", "patience", "seed",
      "base_channels", "depth", "dropout", "field_scale", "field_head"};
  return keys;
}

inline void set_config_value(RunConfig &c, const std::string &key,
                             const std::string &value) {
  using detail::parse_number;
  if (key == "data_dir") c.data_dir = value;
  else if (key == "n_samples") c.n_samples = parse_number<int>(key, value);
  else if (key == "image_size") c.image_size = parse_number<int>(key, value);
  else if (key == "shape_family") c.shape_family = value;
  else if (key == "texture") c.texture = value;
  else if (key == "noise_sigma") c.noise_sigma = parse_number<double>(key, value);
  else if (key == "data_seed") c.data_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train_frac") c.train_frac = parse_number<double>(key, value);
  else if (key == "val_frac") c.val_frac = parse_number<double>(key, value);
  else if (key == "augment") c.augment = detail::parse_bool(key, value);
  else if (key == "k") c.k = parse_number<int>(key, value);
  else if (key == "T") c.T = parse_number<int>(key, value);
  else if (key == "init_diameter") c.init_diameter = parse_number<double>(key, value);
  else if (key == "tau") c.tau = parse_number<double>(key, value);
  else if (key == "lambda1") c.lambda1 = parse_number<double>(key, value);
  else if (key == "lambda2") c.lambda2 = parse_number<double>(key, value);
  else if (key == "curvature_units") c.curvature_units = value;
  else if (key == "lr") c.lr = parse_number<double>(key, value);
  else if (key == "batch") c.batch = parse_number<int>(key, value);
  else if (key == "epochs") c.epochs = parse_number<int>(key, value);
  else if (key == "patience") c.patience = parse_number<int>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "base_channels") c.unet.base_channels = parse_number<int>(key, value);
  else if (key == "depth") c.unet.depth = parse_number<int>(key, value);
  else if (key == "dropout") c.unet.dropout_p = parse_number<double>(key, value);
  else if (key == "field_scale") c.unet.field_scale = parse_number<double>(key, value);
  else if (key == "field_head") {
    if (value == "linear") c.unet.head = FieldHead::linear;
    else if (value == "sigmoid") c.unet.head = FieldHead::sigmoid;
    else throw std::invalid_argument("config: field_head must be linear or sigmoid");
  } else
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline std::string get_config_value(const RunConfig &c, const std::string &key) {
  using detail::format_number;
  if (key == "data_dir") return c.data_dir;
  if (key == "n_samples") return format_number(c.n_samples);
  if (key == "image_size") return format_number(c.image_size);
  if (key == "shape_family") return c.shape_family;
  if (key == "texture") return c.texture;
  if (key == "noise_sigma") return format_number(c.noise_sigma);
  if (key == "data_seed") return format_number(c.data_seed);
  if (key == "train_frac") return format_number(c.train_frac);
  if (key == "val_frac") return format_number(c.val_frac);
  if (key == "augment") return c.augment ? "true" : "false";
  if (key == "k") return format_number(c.k);
  if (key == "T") return format_number(c.T);
  if (key == "init_diameter") return format_number(c.init_diameter);
  if (key == "tau") return format_number(c.tau);
  if (key == "lambda1") return format_number(c.lambda1);
  if (key == "lambda2") return format_number(c.lambda2);
  if (key == "curvature_units") return c.curvature_units;
  if (key == "lr") return format_number(c.lr);
  if (key == "batch") return format_number(c.batch);
  if (key == "epochs") return format_number(c.epochs);
  if (key == "patience") return format_number(c.patience);
  if (key == "seed") return format_number(c.seed);
  if (key == "base_channels") return format_number(c.unet.base_channels);
  if (key == "depth") return format_number(c.unet.depth);
  if (key == "dropout") return format_number(c.unet.dropout_p);
  if (key == "field_scale") return format_number(c.unet.field_scale);
  if (key == "field_head") return c.unet.head == FieldHead::linear ? "linear" : "sigmoid";
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline std::string config_to_text(const RunConfig &c) {
  std::string out;
  for (const auto &key : config_keys())
    out += key + " = " + get_config_value(c, key) + "\n";
  return out;
}

//! Applies `key = value` lines on top of `base`. Blank lines and lines
//! starting with '#' are ignored.
inline RunConfig parse_config(const std::string &text, RunConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#')
      continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    set_config_value(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_config(const std::string &path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const std::invalid_argument &e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

inline void save_config(const std::string &path, const RunConfig &c) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write config '" + path + "'");
  os << config_to_text(c);
}

} // namespace acdr
