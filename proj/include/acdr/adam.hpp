#pragma once

#include "acdr/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

template <class T> struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T> struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

//! One bias-corrected Adam update of `params` in place. `step` is the 1-based
//! update count after this step.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads,
               AdamMoments<T> &state, long step, const AdamOptions &opt) {
  if (!(opt.lr > 0.0))
    throw std::invalid_argument("adam: learning rate must be positive");
  if (grads.size() != params.size())
    throw std::invalid_argument("adam: gradient size mismatch");
  if (step < 1)
    throw std::invalid_argument("adam: step count must be >= 1");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw std::runtime_error("adam: non-finite gradient at element " +
                               std::to_string(i));
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const double mhat = static_cast<double>(state.m[i]) / c1;
    const double vhat = static_cast<double>(state.v[i]) / c2;
    params[i] -= static_cast<T>(opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
  }
}

template <class T> class Adam {
public:
  Adam(std::vector<Parameter<T>> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options),
        moments_(params_.size()) {}

  //! Applies one update to every parameter that received a gradient.
  void step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto &p = params_[i];
      if (!p.tensor.has_grad())
        continue;
      try {
        adam_step<T>(p.tensor.mutable_values(), p.tensor.grad(), moments_[i],
                     step_, options_);
      } catch (const std::runtime_error &e) {
        throw std::runtime_error("parameter '" + p.name + "': " + e.what());
      }
    }
  }

  void zero_grad() {
    for (auto &p : params_)
      p.tensor.zero_grad();
  }

  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }
  const AdamOptions &options() const { return options_; }
  const std::vector<Parameter<T>> &params() const { return params_; }
  std::vector<AdamMoments<T>> &moments() { return moments_; }
  const std::vector<AdamMoments<T>> &moments() const { return moments_; }

private:
  std::vector<Parameter<T>> params_;
  AdamOptions options_;
  std::vector<AdamMoments<T>> moments_;
  long step_ = 0;
};

} // namespace acdr
