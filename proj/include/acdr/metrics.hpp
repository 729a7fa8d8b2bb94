#pragma once

#include "acdr/grid.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

struct F1IoU {
  double f1 = 0.0;
  double iou = 0.0;
};

namespace detail {

inline void require_binary(const Mask &m, const char *what) {
  for (auto v : m.data)
    if (v > 1)
      throw std::invalid_argument(std::string(what) + ": mask is not binary");
}

inline void require_same_size(const Mask &a, const Mask &b, const char *what) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument(std::string(what) + ": mask sizes differ (" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
}

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas).
inline void edt_1d(const double *f, double *d, int n, std::vector<int> &v,
                   std::vector<double> &z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = 0;
  // Skip leading infinite samples; an all-infinite row stays infinite.
  int first = 0;
  while (first < n && f[first] == inf)
    ++first;
  if (first == n) {
    for (int q = 0; q < n; ++q)
      d[q] = inf;
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (int q = first + 1; q < n; ++q) {
    if (f[q] == inf)
      continue;
    double s;
    for (;;) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[static_cast<std::size_t>(k)] && k > 0)
        --k;
      else
        break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q)
      ++k;
    const int p = v[static_cast<std::size_t>(k)];
    d[q] = double(q - p) * (q - p) + f[p];
  }
}

} // namespace detail

//! Pixelwise F1 and IoU; two empty masks score 1.
inline F1IoU f1_iou(const Mask &pred, const Mask &gt) {
  detail::require_same_size(pred, gt, "f1_iou");
  detail::require_binary(pred, "f1_iou");
  detail::require_binary(gt, "f1_iou");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i], g = gt.data[i];
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0)
    return {1.0, 1.0};
  const double t = static_cast<double>(tp);
  return {2.0 * t / (2.0 * t + fp + fn), t / (t + fp + fn)};
}

//! Ground-truth-area-weighted mean IoU (one region per image).
inline double wcov(const std::vector<Mask> &preds, const std::vector<Mask> &gts) {
  if (gts.empty())
    throw std::invalid_argument("wcov: empty ground-truth set");
  if (preds.size() != gts.size())
    throw std::invalid_argument("wcov: prediction and ground-truth counts differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const double area = static_cast<double>(count_ones(gts[i]));
    num += area * f1_iou(preds[i], gts[i]).iou;
    den += area;
  }
  if (den == 0.0)
    throw std::invalid_argument("wcov: all ground-truth regions are empty");
  return num / den;
}

//! Mask minus its 4-connected erosion; pixels outside the image count as 0.
inline Mask boundary(const Mask &m) {
  Mask b(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m(y, x))
        continue;
      const bool interior = m.contains(y - 1, x) && m(y - 1, x) &&
                            m.contains(y + 1, x) && m(y + 1, x) &&
                            m.contains(y, x - 1) && m(y, x - 1) &&
                            m.contains(y, x + 1) && m(y, x + 1);
      b(y, x) = interior ? 0 : 1;
    }
  return b;
}

//! Exact squared Euclidean distance to the nearest nonzero pixel
//! (infinity when there is none).
inline Grid<double> squared_distance_transform(const Mask &m) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const int h = m.height, w = m.width;
  Grid<double> d(h, w);
  std::vector<double> f(static_cast<std::size_t>(std::max(h, w)));
  std::vector<double> out(f.size());
  std::vector<int> v;
  std::vector<double> z;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y)
      f[static_cast<std::size_t>(y)] = m(y, x) ? 0.0 : inf;
    detail::edt_1d(f.data(), out.data(), h, v, z);
    for (int y = 0; y < h; ++y)
      d(y, x) = out[static_cast<std::size_t>(y)];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      f[static_cast<std::size_t>(x)] = d(y, x);
    detail::edt_1d(f.data(), out.data(), w, v, z);
    for (int x = 0; x < w; ++x)
      d(y, x) = out[static_cast<std::size_t>(x)];
  }
  return d;
}

//! Boundary F1 averaged over match distances 1..5 px.
inline double boundf(const Mask &pred, const Mask &gt) {
  detail::require_same_size(pred, gt, "boundf");
  detail::require_binary(pred, "boundf");
  detail::require_binary(gt, "boundf");
  const Mask bp = boundary(pred), bg = boundary(gt);
  const std::size_t np = count_ones(bp), ng = count_ones(bg);
  if (np == 0 && ng == 0)
    return 1.0;
  if (np == 0 || ng == 0)
    return 0.0;
  const auto to_gt = squared_distance_transform(bg);
  const auto to_pred = squared_distance_transform(bp);
  double total = 0.0;
  for (int d = 1; d <= 5; ++d) {
    const double d2 = static_cast<double>(d) * d;
    std::size_t hit_p = 0, hit_g = 0;
    for (std::size_t i = 0; i < bp.size(); ++i) {
      if (bp.data[i] && to_gt.data[i] <= d2)
        ++hit_p;
      if (bg.data[i] && to_pred.data[i] <= d2)
        ++hit_g;
    }
    const double precision = static_cast<double>(hit_p) / np;
    const double recall = static_cast<double>(hit_g) / ng;
    if (precision + recall > 0.0)
      total += 2.0 * precision * recall / (precision + recall);
  }
  return total / 5.0;
}

struct ImageMetrics {
  std::string id;
  double f1 = 0.0;
  double iou = 0.0;
  double boundf = 0.0;
};

struct MetricReport {
  double f1 = 0.0;
  double miou = 0.0;
  double wcov = 0.0;
  double boundf = 0.0;
  std::vector<ImageMetrics> per_image;
};

//! Per-image metrics plus dataset means (F1, mIoU and BoundF are
//! macro-averaged; WCov is area-weighted).
inline MetricReport evaluate_masks(const std::vector<Mask> &preds,
                                   const std::vector<Mask> &gts,
                                   const std::vector<std::string> &ids = {}) {
  if (gts.empty())
    throw std::invalid_argument("evaluate_masks: empty dataset");
  if (preds.size() != gts.size() || (!ids.empty() && ids.size() != gts.size()))
    throw std::invalid_argument("evaluate_masks: mismatched list lengths");
  MetricReport r;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto fi = f1_iou(preds[i], gts[i]);
    ImageMetrics m{ids.empty() ? std::to_string(i) : ids[i], fi.f1, fi.iou,
                   boundf(preds[i], gts[i])};
    r.f1 += m.f1;
    r.miou += m.iou;
    r.boundf += m.boundf;
    r.per_image.push_back(std::move(m));
  }
  const double n = static_cast<double>(gts.size());
  r.f1 /= n;
  r.miou /= n;
  r.boundf /= n;
  r.wcov = wcov(preds, gts);
  return r;
}

inline void write_report_csv(const std::string &path, const MetricReport &r) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path);
  os << std::setprecision(9) << "id,f1,iou,boundf\n";
  for (const auto &m : r.per_image)
    os << m.id << ',' << m.f1 << ',' << m.iou << ',' << m.boundf << '\n';
  os << "mean," << r.f1 << ',' << r.miou << ',' << r.boundf << '\n';
}

inline void print_report(std::ostream &os, const MetricReport &r) {
  const auto flags = os.flags();
  os << std::fixed << std::setprecision(4);
  os << "images  " << r.per_image.size() << '\n'
     << "F1      " << r.f1 << '\n'
     << "mIoU    " << r.miou << '\n'
     << "WCov    " << r.wcov << '\n'
     << "BoundF  " << r.boundf << '\n';
  os.flags(flags);
}

} // namespace acdr
