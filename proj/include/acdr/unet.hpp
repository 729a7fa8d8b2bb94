#pragma once

// Encoder-decoder with skip connections that maps an image to a dual-channel
// displacement field in pixel units.
//
//   encoder block i: 3 x (conv3x3 -> dropout) -> relu -> batchnorm -> maxpool2
//   decoder block i: batchnorm -> relu -> upsample to skip size -> concat skip
//                    -> 3 x (conv3x3 -> dropout)
//   the last decoder block has no dropout; a 1x1 conv maps it to 2 channels.
//
// Widths double per level from `base_channels`.

#include "acdr/adam.hpp"
#include "acdr/checkpoint.hpp"
#include "acdr/ops.hpp"
#include "acdr/tensor.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

enum class FieldHead {
  linear,  // scale * conv output
  sigmoid, // scale * (2 * sigmoid(conv output) - 1)
};

struct UNetConfig {
  int in_channels = 3;
  int base_channels = 32;
  int depth = 4;
  double dropout_p = 0.2;
  double field_scale = 1.0;
  FieldHead head = FieldHead::linear;

  void validate() const {
    if (in_channels < 1 || base_channels < 1 || depth < 1)
      throw std::invalid_argument("unet: channels and depth must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw std::invalid_argument("unet: dropout must lie in [0,1)");
  }

  void validate_input(std::size_t h, std::size_t w) const {
    const std::size_t f = std::size_t{1} << depth;
    if (h % f != 0 || w % f != 0 || h == 0 || w == 0)
      throw std::invalid_argument("unet: input " + std::to_string(h) + "x" +
                                  std::to_string(w) + " not divisible by 2^" +
                                  std::to_string(depth));
  }

  int width(int level) const { return base_channels << level; }
};

//! Trainable parameter count implied by a configuration.
inline std::size_t parameter_count(const UNetConfig &cfg) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) {
    return out * in * k * k + out;
  };
  std::size_t total = 0;
  std::size_t in = static_cast<std::size_t>(cfg.in_channels);
  for (int i = 0; i < cfg.depth; ++i) {
    const auto c = static_cast<std::size_t>(cfg.width(i));
    total += conv(in, c, 3) + 2 * conv(c, c, 3) + 2 * c;
    in = c;
  }
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const auto c = static_cast<std::size_t>(cfg.width(i));
    total += 2 * in + conv(in + c, c, 3) + 2 * conv(c, c, 3);
    in = c;
  }
  return total + conv(in, 2, 1);
}

template <class T> class UNet {
public:
  UNet(const UNetConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    int in = cfg_.in_channels;
    for (int i = 0; i < cfg_.depth; ++i) {
      const int c = cfg_.width(i);
      const std::string p = "enc" + std::to_string(i);
      add_conv(p + ".conv0", in, c, 3, rng);
      add_conv(p + ".conv1", c, c, 3, rng);
      add_conv(p + ".conv2", c, c, 3, rng);
      add_bn(p + ".bn", c);
      in = c;
    }
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      const int c = cfg_.width(i);
      const std::string p = "dec" + std::to_string(i);
      add_bn(p + ".bn", in);
      add_conv(p + ".conv0", in + c, c, 3, rng);
      add_conv(p + ".conv1", c, c, 3, rng);
      add_conv(p + ".conv2", c, c, 3, rng);
      in = c;
    }
    add_conv("head", in, 2, 1, rng);
  }

  const UNetConfig &config() const { return cfg_; }
  const std::vector<Parameter<T>> &parameters() const { return params_; }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto &p : params_)
      n += p.tensor.size();
    return n;
  }

  //! [3,h,w] or [n,3,h,w] image to [2,h,w] or [n,2,h,w] field.
  template <class Rng>
  Tensor<T> forward(const Tensor<T> &image, Mode mode, Rng &rng) {
    const auto d = detail::image_dims(image.shape(), "unet");
    if (static_cast<int>(d.c) != cfg_.in_channels)
      throw std::invalid_argument("unet: expected " +
                                  std::to_string(cfg_.in_channels) +
                                  " input channels, got shape " +
                                  to_string(image.shape()));
    cfg_.validate_input(d.h, d.w);
    const double p = cfg_.dropout_p;
    std::vector<Tensor<T>> skips;
    Tensor<T> x = image;
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::string name = "enc" + std::to_string(i);
      for (int j = 0; j < 3; ++j)
        x = dropout(conv(name + ".conv" + std::to_string(j), x, 1), p, mode, rng);
      x = relu(x);
      x = bn(name + ".bn", x, mode);
      skips.push_back(x);
      x = maxpool2d(x, 2);
    }
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      const std::string name = "dec" + std::to_string(i);
      const auto &skip = skips[static_cast<std::size_t>(i)];
      const std::size_t sh = skip.dim(skip.rank() - 2), sw = skip.dim(skip.rank() - 1);
      x = relu(bn(name + ".bn", x, mode));
      x = bilinear_resize(x, sh, sw);
      x = concat(x, skip, skip.rank() - 3);
      const bool last = i == 0;
      for (int j = 0; j < 3; ++j) {
        x = conv(name + ".conv" + std::to_string(j), x, 1);
        if (!last)
          x = dropout(x, p, mode, rng);
      }
    }
    x = bilinear_resize(x, d.h, d.w);
    x = conv("head", x, 0);
    const T s = static_cast<T>(cfg_.field_scale);
    if (cfg_.head == FieldHead::sigmoid)
      return affine(sigmoid(x), T(2) * s, -s);
    return s == T(1) ? x : scale(x, s);
  }

  //! Parameters and batch-norm running statistics as checkpoint records.
  std::vector<NamedArray> state() const {
    std::vector<NamedArray> out;
    for (const auto &p : params_)
      out.push_back({p.name, p.tensor.shape(),
                     std::vector<float>(p.tensor.values().begin(),
                                        p.tensor.values().end())});
    for (const auto &[name, s] : stats_) {
      out.push_back({name + ".running_mean", {s.mean.size()},
                     std::vector<float>(s.mean.begin(), s.mean.end())});
      out.push_back({name + ".running_var", {s.var.size()},
                     std::vector<float>(s.var.begin(), s.var.end())});
    }
    return out;
  }

  void load_state(const std::vector<NamedArray> &records) {
    std::map<std::string, const NamedArray *> by_name;
    for (const auto &r : records)
      by_name[r.name] = &r;
    auto fetch = [&](const std::string &name, const Shape &shape) {
      auto it = by_name.find(name);
      if (it == by_name.end())
        throw std::runtime_error("checkpoint is missing '" + name + "'");
      if (it->second->shape != shape)
        throw std::runtime_error("checkpoint entry '" + name + "' has shape " +
                                 to_string(it->second->shape) + ", expected " +
                                 to_string(shape));
      return it->second;
    };
    for (auto &p : params_) {
      const auto *r = fetch(p.name, p.tensor.shape());
      auto &v = p.tensor.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<T>(r->values[i]);
    }
    for (auto &[name, s] : stats_) {
      const auto *m = fetch(name + ".running_mean", {s.mean.size()});
      const auto *v = fetch(name + ".running_var", {s.var.size()});
      for (std::size_t i = 0; i < s.mean.size(); ++i) {
        s.mean[i] = static_cast<T>(m->values[i]);
        s.var[i] = static_cast<T>(v->values[i]);
      }
    }
  }

  Tensor<T> &parameter(const std::string &name) {
    for (auto &p : params_)
      if (p.name == name)
        return p.tensor;
    throw std::out_of_range("unet: no parameter '" + name + "'");
  }

private:
  template <class Rng>
  void add_conv(const std::string &name, int in, int out, int k, Rng &rng) {
    // Fan-in scaled uniform init, bounds sqrt(6 / fan_in).
    const double bound = std::sqrt(6.0 / (static_cast<double>(in) * k * k));
    std::uniform_real_distribution<double> u(-bound, bound);
    const std::size_t n = static_cast<std::size_t>(out) * in * k * k;
    std::vector<T> w(n);
    for (auto &v : w)
      v = static_cast<T>(u(rng));
    const auto uo = static_cast<std::size_t>(out), ui = static_cast<std::size_t>(in),
               uk = static_cast<std::size_t>(k);
    params_.push_back({name + ".weight", Tensor<T>(Shape{uo, ui, uk, uk}, std::move(w), true)});
    params_.push_back({name + ".bias", Tensor<T>::zeros(Shape{uo}, true)});
    index_[name] = params_.size() - 2;
  }

  void add_bn(const std::string &name, int channels) {
    const auto c = static_cast<std::size_t>(channels);
    params_.push_back({name + ".gamma", Tensor<T>::full(Shape{c}, T(1), true)});
    params_.push_back({name + ".beta", Tensor<T>::zeros(Shape{c}, true)});
    index_[name] = params_.size() - 2;
    stats_.emplace(name, BatchNormStats<T>(c));
  }

  Tensor<T> conv(const std::string &name, const Tensor<T> &x, std::size_t pad) {
    const auto i = index_.at(name);
    return conv2d(x, params_[i].tensor, params_[i + 1].tensor, 1, pad);
  }

  Tensor<T> bn(const std::string &name, const Tensor<T> &x, Mode mode) {
    const auto i = index_.at(name);
    return batchnorm2d(x, params_[i].tensor, params_[i + 1].tensor,
                       stats_.at(name), mode);
  }

  UNetConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, BatchNormStats<T>> stats_;
};

} // namespace acdr
