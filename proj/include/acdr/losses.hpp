#pragma once

#include "acdr/ops.hpp"
#include "acdr/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

struct LossWeights {
  double balloon = 1e-2;   // lambda1
  double curvature = 5e-1; // lambda2
};

//! Sum over iterations of the per-iteration mean squared error.
template <class T>
Tensor<T> seg_loss(const std::vector<Tensor<T>> &masks, const Tensor<T> &gt) {
  if (masks.empty())
    throw std::invalid_argument("seg_loss: no masks");
  Tensor<T> total = mse(masks[0], gt);
  for (std::size_t t = 1; t < masks.size(); ++t)
    total = add(total, mse(masks[t], gt));
  return total;
}

//! Mean uncovered fraction, (1/hw) sum (1 - M).
template <class T> Tensor<T> balloon_loss(const Tensor<T> &mask) {
  return affine(mean(mask), T(-1), T(1));
}

//! (1/k) sum_j || p_{j-1} - 2 p_j + p_{j+1} ||, indices cyclic.
template <class T> Tensor<T> curvature_loss(const Tensor<T> &points) {
  if (points.rank() != 2 || points.dim(1) != 2 || points.dim(0) < 3)
    throw std::invalid_argument("curvature_loss: expected [k,2] with k >= 3, got " +
                                to_string(points.shape()));
  const std::size_t k = points.dim(0);
  const auto &p = points.values();
  // Second differences, kept for the backward pass.
  std::vector<T> dx(k), dy(k), norm(k);
  T total = T(0);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t prev = (j + k - 1) % k, next = (j + 1) % k;
    dx[j] = p[2 * prev] - T(2) * p[2 * j] + p[2 * next];
    dy[j] = p[2 * prev + 1] - T(2) * p[2 * j + 1] + p[2 * next + 1];
    norm[j] = std::hypot(dx[j], dy[j]);
    total += norm[j];
  }
  const T inv_k = T(1) / static_cast<T>(k);
  return Tensor<T>::from_op(
      Shape{}, {total * inv_k}, {points},
      [k, inv_k, dx, dy, norm](const Node<T> &self) {
        std::vector<T> g(2 * k, T(0));
        const T s = self.grad[0] * inv_k;
        for (std::size_t j = 0; j < k; ++j) {
          if (norm[j] == T(0))
            continue; // subgradient 0 at the kink
          const T ux = s * dx[j] / norm[j], uy = s * dy[j] / norm[j];
          const std::size_t prev = (j + k - 1) % k, next = (j + 1) % k;
          g[2 * prev] += ux;
          g[2 * prev + 1] += uy;
          g[2 * j] -= T(2) * ux;
          g[2 * j + 1] -= T(2) * uy;
          g[2 * next] += ux;
          g[2 * next + 1] += uy;
        }
        detail::add_into(*self.parents[0], g);
      });
}

template <class T> struct LossTerms {
  Tensor<T> total;
  double seg = 0.0;
  double balloon = 0.0;
  double curvature = 0.0;
};

//! sum_t [ mse(M^t, M) + l1 * balloon(M^t) + l2 * curvature(P^t) ].
//! `polygons` holds P^1..P^T, aligned with `masks`.
template <class T>
LossTerms<T> total_loss(const std::vector<Tensor<T>> &masks, const Tensor<T> &gt,
                        const std::vector<Tensor<T>> &polygons,
                        const LossWeights &weights) {
  if (masks.empty() || masks.size() != polygons.size())
    throw std::invalid_argument("total_loss: need matching, nonempty mask and "
                                "polygon lists (got " +
                                std::to_string(masks.size()) + " and " +
                                std::to_string(polygons.size()) + ")");
  if (weights.balloon < 0.0 || weights.curvature < 0.0)
    throw std::invalid_argument("total_loss: loss weights must be non-negative");
  LossTerms<T> out;
  for (std::size_t t = 0; t < masks.size(); ++t) {
    const auto seg = mse(masks[t], gt);
    const auto bal = balloon_loss(masks[t]);
    const auto cur = curvature_loss(polygons[t]);
    out.seg += static_cast<double>(seg.item());
    out.balloon += static_cast<double>(bal.item());
    out.curvature += static_cast<double>(cur.item());
    const auto term =
        add(add(seg, scale(bal, static_cast<T>(weights.balloon))),
            scale(cur, static_cast<T>(weights.curvature)));
    out.total = t == 0 ? term : add(out.total, term);
  }
  return out;
}

} // namespace acdr
