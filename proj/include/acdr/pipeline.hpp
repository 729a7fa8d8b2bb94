#pragma once

// Training, inference, evaluation and sensitivity sweeps.

#include "acdr/adam.hpp"
#include "acdr/checkpoint.hpp"
#include "acdr/config.hpp"
#include "acdr/contour.hpp"
#include "acdr/data.hpp"
#include "acdr/geometry.hpp"
#include "acdr/losses.hpp"
#include "acdr/metrics.hpp"
#include "acdr/png_io.hpp"
#include "acdr/renderer.hpp"
#include "acdr/unet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

namespace fs = std::filesystem;

inline constexpr const char *kConfigFile = "config.txt";
inline constexpr const char *kBestCheckpoint = "best.ckpt";
inline constexpr const char *kFinalCheckpoint = "final.ckpt";
inline constexpr const char *kTrainLog = "train_log.csv";
inline constexpr const char *kMetricsLog = "metrics.csv";
inline constexpr const char *kTestMetrics = "test_metrics.csv";

class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

//------------------------------------------------------------------------------
// Data

struct DataSplits {
  std::vector<Sample> train, val, test;
};

namespace detail {

inline std::vector<Sample> pick(const std::vector<Sample> &all,
                                const std::vector<std::size_t> &idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx)
    out.push_back(all[i]);
  return out;
}

inline void resize_all(std::vector<Sample> &samples, int size) {
  for (auto &s : samples)
    if (s.mask.height != size || s.mask.width != size)
      s = resize_sample(s, size);
}

} // namespace detail

//! Train/val/test samples at `image_size`. A dataset directory supplies the
//! train/test labels; otherwise a synthetic set is generated and split.
//! Validation is carved from the training part.
inline DataSplits load_splits(const RunConfig &cfg) {
  DataSplits d;
  std::vector<Sample> train_all;
  if (!cfg.data_dir.empty()) {
    train_all = load_dataset(cfg.data_dir, "train");
    d.test = load_dataset(cfg.data_dir, "test");
  } else {
    const auto all = generate(cfg.synthetic());
    const auto [tr, te] = split(all.size(), cfg.train_frac, cfg.data_seed);
    train_all = detail::pick(all, tr);
    d.test = detail::pick(all, te);
  }
  const auto [tr, va] = split(train_all.size(), 1.0 - cfg.val_frac, cfg.data_seed + 1);
  d.train = detail::pick(train_all, tr);
  d.val = detail::pick(train_all, va);
  detail::resize_all(d.train, cfg.image_size);
  detail::resize_all(d.val, cfg.image_size);
  detail::resize_all(d.test, cfg.image_size);
  if (d.train.empty())
    throw std::invalid_argument("train: training split is empty");
  return d;
}

inline Tensor<float> image_batch(const std::vector<Sample> &samples,
                                 std::size_t begin, std::size_t end,
                                 const std::vector<std::size_t> *order = nullptr) {
  const auto &first = samples[order ? (*order)[begin] : begin].image;
  const std::size_t h = static_cast<std::size_t>(first.height);
  const std::size_t w = static_cast<std::size_t>(first.width);
  std::vector<float> values;
  values.reserve((end - begin) * 3 * h * w);
  for (std::size_t i = begin; i < end; ++i) {
    const auto &img = samples[order ? (*order)[i] : i].image;
    if (img.channels != 3 || static_cast<std::size_t>(img.height) != h ||
        static_cast<std::size_t>(img.width) != w)
      throw std::invalid_argument("image_batch: images differ in shape");
    values.insert(values.end(), img.data.begin(), img.data.end());
  }
  return Tensor<float>(Shape{end - begin, 3, h, w}, std::move(values));
}

inline Tensor<float> mask_tensor(const Mask &m) {
  std::vector<float> v(m.data.begin(), m.data.end());
  return Tensor<float>(Shape{static_cast<std::size_t>(m.height),
                             static_cast<std::size_t>(m.width)},
                       std::move(v));
}

//------------------------------------------------------------------------------
// Model state

//! Fixed initial contour and its triangulation, shared by every sample.
struct InitialContour {
  Polygon polygon;
  FaceList faces;
  Tensor<float> points;
};

inline InitialContour make_initial_contour(const RunConfig &cfg, int h, int w) {
  InitialContour c;
  c.polygon = init_circle(h, w, cfg.k, cfg.init_diameter);
  c.faces = delaunay(c.polygon.vertices);
  c.points = to_tensor<float>(c.polygon);
  return c;
}

namespace detail {

inline void write_atomic_checkpoint(const fs::path &path,
                                    const std::vector<NamedArray> &records) {
  const fs::path tmp = path.string() + ".tmp";
  write_checkpoint(tmp.string(), records);
  fs::rename(tmp, path);
}

inline std::vector<NamedArray> optimizer_state(const Adam<float> &adam) {
  std::vector<NamedArray> out;
  out.push_back({"adam.step", {1}, {static_cast<float>(adam.step_count())}});
  for (std::size_t i = 0; i < adam.params().size(); ++i) {
    const auto &m = adam.moments()[i];
    if (m.m.empty())
      continue;
    const auto &name = adam.params()[i].name;
    out.push_back({name + ".adam_m", {m.m.size()}, m.m});
    out.push_back({name + ".adam_v", {m.v.size()}, m.v});
  }
  return out;
}

} // namespace detail

//! Writes `<path>` (model) and `<path>.adam` (optimizer moments).
inline void save_training_state(const fs::path &path, const UNet<float> &model,
                                const Adam<float> &adam) {
  detail::write_atomic_checkpoint(path, model.state());
  detail::write_atomic_checkpoint(path.string() + ".adam",
                                  detail::optimizer_state(adam));
}

inline void load_optimizer_state(const fs::path &path, Adam<float> &adam) {
  const auto records = read_checkpoint(path.string());
  for (const auto &r : records) {
    if (r.name == "adam.step") {
      adam.set_step_count(static_cast<long>(r.values.at(0)));
      continue;
    }
    for (std::size_t i = 0; i < adam.params().size(); ++i) {
      const auto &name = adam.params()[i].name;
      if (r.name == name + ".adam_m")
        adam.moments()[i].m = r.values;
      else if (r.name == name + ".adam_v")
        adam.moments()[i].v = r.values;
    }
  }
}

//------------------------------------------------------------------------------
// Forward passes

//! P^1..P^T as seen by the curvature term.
inline std::vector<Tensor<float>> loss_polygons(const EvolutionTrace<float> &trace,
                                                const RunConfig &cfg) {
  std::vector<Tensor<float>> out(trace.polygons.begin() + 1, trace.polygons.end());
  if (cfg.curvature_units == "image")
    for (auto &p : out)
      p = scale(p, 1.0f / static_cast<float>(cfg.image_size));
  return out;
}

struct PassResult {
  double loss = 0.0; // mean total loss per sample
  double seg = 0.0, balloon = 0.0, curvature = 0.0;
  std::vector<Mask> masks;          // hard masks of the final polygons
  std::vector<Polygon> polygons;    // final polygons
};

//! Gradient-free pass in eval mode over `samples`: losses from soft masks,
//! predictions from the hard mask of the final polygon.
inline PassResult evaluate_pass(UNet<float> &model, const InitialContour &init,
                                const std::vector<Sample> &samples,
                                const RunConfig &cfg) {
  NoGradGuard guard;
  PassResult r;
  std::mt19937_64 unused(0);
  const auto batch = static_cast<std::size_t>(cfg.batch);
  for (std::size_t b = 0; b < samples.size(); b += batch) {
    const std::size_t e = std::min(samples.size(), b + batch);
    const auto field = model.forward(image_batch(samples, b, e), Mode::eval, unused);
    for (std::size_t i = b; i < e; ++i) {
      const auto trace = evolve(init.points, init.faces, select(field, i - b), cfg.T,
                                Mode::train, static_cast<float>(cfg.tau));
      const auto terms = total_loss(trace.masks, mask_tensor(samples[i].mask),
                                    loss_polygons(trace, cfg), cfg.weights());
      r.loss += terms.total.item();
      r.seg += terms.seg;
      r.balloon += terms.balloon;
      r.curvature += terms.curvature;
      const auto final_poly = to_polygon(trace.polygons.back());
      r.masks.push_back(rasterize_hard(final_poly, init.faces, samples[i].mask.height,
                                       samples[i].mask.width));
      r.polygons.push_back(final_poly);
    }
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    r.loss /= n;
    r.seg /= n;
    r.balloon /= n;
    r.curvature /= n;
  }
  return r;
}

inline MetricReport score(const PassResult &pass, const std::vector<Sample> &samples) {
  std::vector<Mask> gts;
  std::vector<std::string> ids;
  for (const auto &s : samples) {
    gts.push_back(s.mask);
    ids.push_back(s.id);
  }
  return evaluate_masks(pass.masks, gts, ids);
}

//------------------------------------------------------------------------------
// Training

struct TrainResult {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double final_train_loss = 0.0;
  fs::path best_checkpoint;
  fs::path final_checkpoint;
};

namespace detail {

// Augmentation settings drawn per sample and epoch.
inline Sample random_augment(const Sample &s, std::mt19937_64 &rng) {
  static constexpr double kScales[] = {0.75, 1.0, 1.25, 1.5};
  static constexpr double kAngles[] = {0, 15, 45, 60, 90, 135, 180, 210, 240, 270};
  std::uniform_int_distribution<int> si(0, 3), ai(0, 9);
  const double scale = kScales[si(rng)];
  const double angle = kAngles[ai(rng)];
  return augment(s, scale, angle);
}

} // namespace detail

//! Trains from scratch; artifacts go to `out`: config.txt, train_log.csv,
//! metrics.csv, best.ckpt and final.ckpt (each with a `.adam` sibling).
inline TrainResult train(const RunConfig &cfg, const fs::path &out,
                         std::ostream *progress = nullptr) {
  cfg.validate();
  cfg.unet.validate_input(static_cast<std::size_t>(cfg.image_size),
                          static_cast<std::size_t>(cfg.image_size));
  const auto data = load_splits(cfg);
  fs::create_directories(out);
  save_config((out / kConfigFile).string(), cfg);

  UNet<float> model(cfg.unet, cfg.seed);
  Adam<float> adam(model.parameters(), AdamOptions{cfg.lr});
  const auto init = make_initial_contour(cfg, cfg.image_size, cfg.image_size);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);

  TrainResult result;
  result.best_checkpoint = out / kBestCheckpoint;
  result.final_checkpoint = out / kFinalCheckpoint;
  save_training_state(result.final_checkpoint, model, adam);
  save_training_state(result.best_checkpoint, model, adam);

  std::ofstream step_log(out / kTrainLog);
  std::ofstream epoch_log(out / kMetricsLog);
  if (!step_log || !epoch_log)
    throw std::runtime_error("train: cannot write logs under " + out.string());
  step_log << std::setprecision(9) << "epoch,step,seg,balloon,curvature,total\n";
  epoch_log << std::setprecision(9)
            << "epoch,train_loss,val_loss,val_miou,val_f1,val_boundf\n";

  const auto batch = static_cast<std::size_t>(cfg.batch);
  const auto weights = cfg.weights();
  int since_best = 0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 epoch_rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    std::shuffle(order.begin(), order.end(), epoch_rng);
    std::vector<Sample> epoch_samples;
    const std::vector<Sample> *source = &data.train;
    if (cfg.augment) {
      epoch_samples.reserve(order.size());
      for (auto i : order)
        epoch_samples.push_back(detail::random_augment(data.train[i], epoch_rng));
      for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
      source = &epoch_samples;
    }

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      const auto field =
          model.forward(image_batch(*source, b, e, &order), Mode::train, dropout_rng);
      Tensor<float> loss;
      double seg = 0, bal = 0, cur = 0;
      for (std::size_t i = b; i < e; ++i) {
        const auto &s = (*source)[order[i]];
        const auto trace = evolve(init.points, init.faces, select(field, i - b), cfg.T,
                                  Mode::train, static_cast<float>(cfg.tau));
        const auto terms =
            total_loss(trace.masks, mask_tensor(s.mask), loss_polygons(trace, cfg), weights);
        loss = i == b ? terms.total : add(loss, terms.total);
        seg += terms.seg;
        bal += terms.balloon;
        cur += terms.curvature;
      }
      const float n = static_cast<float>(e - b);
      loss = scale(loss, 1.0f / n);
      ++step;
      const double value = loss.item();
      if (!std::isfinite(value))
        throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(step) +
                               "; last good checkpoint is " +
                               result.final_checkpoint.string());
      backward(loss);
      try {
        adam.step();
      } catch (const std::runtime_error &err) {
        throw TrainingDiverged(std::string("train: ") + err.what() + " at epoch " +
                               std::to_string(epoch) + "; last good checkpoint is " +
                               result.final_checkpoint.string());
      }
      adam.zero_grad();
      step_log << epoch << ',' << step << ',' << seg / n << ',' << bal / n << ','
               << cur / n << ',' << value << '\n';
      epoch_loss += value * n;
    }
    epoch_loss /= static_cast<double>(order.size());
    result.final_train_loss = epoch_loss;
    result.epochs_run = epoch;

    double val_loss = epoch_loss;
    MetricReport val_report;
    if (!data.val.empty()) {
      const auto pass = evaluate_pass(model, init, data.val, cfg);
      val_loss = pass.loss;
      val_report = score(pass, data.val);
    }
    epoch_log << epoch << ',' << epoch_loss << ',' << val_loss << ',' << val_report.miou
              << ',' << val_report.f1 << ',' << val_report.boundf << '\n';
    epoch_log.flush();
    step_log.flush();
    save_training_state(result.final_checkpoint, model, adam);
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      since_best = 0;
      save_training_state(result.best_checkpoint, model, adam);
    } else {
      ++since_best;
    }
    if (progress) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *progress << "epoch " << epoch << "/" << cfg.epochs << "  train " << std::fixed
                << std::setprecision(5) << epoch_loss << "  val " << val_loss
                << "  val_mIoU " << std::setprecision(4) << val_report.miou << "  ("
                << std::setprecision(1) << secs << " s)\n"
                << std::defaultfloat << std::flush;
    }
    if (cfg.patience > 0 && since_best >= cfg.patience)
      break;
  }
  return result;
}

//------------------------------------------------------------------------------
// Inference

struct Inference {
  Polygon initial;
  Polygon final_polygon;
  Mask mask;
  std::vector<Tensor<float>> polygons; // P^0 .. P^T
  std::vector<Tensor<float>> soft_masks;
  Tensor<float> field;                 // [2, h, w]
};

//! A trained model restored from a run directory.
class Segmenter {
public:
  Segmenter(const fs::path &run_dir, const std::string &checkpoint = kBestCheckpoint)
      : cfg_(load_config((run_dir / kConfigFile).string())),
        model_(cfg_.unet, cfg_.seed),
        init_(make_initial_contour(cfg_, cfg_.image_size, cfg_.image_size)) {
    model_.load_state(read_checkpoint((run_dir / checkpoint).string()));
  }

  Segmenter(const RunConfig &cfg, UNet<float> model)
      : cfg_(cfg), model_(std::move(model)),
        init_(make_initial_contour(cfg_, cfg_.image_size, cfg_.image_size)) {}

  const RunConfig &config() const { return cfg_; }
  UNet<float> &model() { return model_; }
  const InitialContour &initial_contour() const { return init_; }

  Inference run(const Image &image) {
    check_size(image.height, image.width);
    NoGradGuard guard;
    std::mt19937_64 unused(0);
    Sample s;
    s.image = image;
    const auto field = select(model_.forward(image_batch({s}, 0, 1), Mode::eval, unused), 0);
    auto trace = evolve(init_.points, init_.faces, field, cfg_.T, Mode::train,
                        static_cast<float>(cfg_.tau));
    Inference r;
    r.initial = init_.polygon;
    r.final_polygon = to_polygon(trace.polygons.back());
    r.mask = rasterize_hard(r.final_polygon, init_.faces, image.height, image.width);
    r.polygons = std::move(trace.polygons);
    r.soft_masks = std::move(trace.masks);
    r.field = field;
    return r;
  }

  MetricReport evaluate(const std::vector<Sample> &samples) {
    if (samples.empty())
      throw std::invalid_argument("evaluate: empty dataset");
    for (const auto &s : samples)
      check_size(s.mask.height, s.mask.width);
    return score(evaluate_pass(model_, init_, samples, cfg_), samples);
  }

  PassResult predict(const std::vector<Sample> &samples) {
    for (const auto &s : samples)
      check_size(s.mask.height, s.mask.width);
    return evaluate_pass(model_, init_, samples, cfg_);
  }

private:
  void check_size(int h, int w) const {
    if (h != cfg_.image_size || w != cfg_.image_size)
      throw std::invalid_argument("image is " + std::to_string(h) + "x" +
                                  std::to_string(w) + " but the model was trained on " +
                                  std::to_string(cfg_.image_size) + "x" +
                                  std::to_string(cfg_.image_size));
  }

  RunConfig cfg_;
  UNet<float> model_;
  InitialContour init_;
};

//------------------------------------------------------------------------------
// Overlays

namespace detail {

inline void put_pixel(Image &img, int x, int y, const float rgb[3]) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height)
    return;
  for (int c = 0; c < 3; ++c)
    img.at(c, y, x) = rgb[c];
}

inline void draw_line(Image &img, double x0, double y0, double x1, double y1,
                      const float rgb[3]) {
  const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    put_pixel(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))),
              static_cast<int>(std::lround(y0 + t * (y1 - y0))), rgb);
  }
}

inline void draw_polygon(Image &img, const Polygon &p, int s, const float rgb[3]) {
  const double off = (s - 1) / 2.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const auto &a = p[j];
    const auto &b = p[(j + 1) % p.size()];
    draw_line(img, a.x * s + off, a.y * s + off, b.x * s + off, b.y * s + off, rgb);
  }
}

} // namespace detail

inline constexpr float kInitialColor[3] = {0.0f, 0.4f, 1.0f};
inline constexpr float kFinalColor[3] = {1.0f, 0.9f, 0.0f};
inline constexpr float kTruthColor[3] = {0.0f, 0.85f, 0.0f};

//! Image upscaled by `s` with the ground-truth boundary (green), the initial
//! contour (blue) and the final contour (yellow) drawn on top.
inline Image make_overlay(const Image &image, const std::vector<Polygon> &contours,
                          const Mask *truth = nullptr, int s = 4) {
  Image out(3, image.height * s, image.width * s);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = image.at(image.channels == 3 ? c : 0, y / s, x / s);
  if (truth) {
    const Mask edge = boundary(*truth);
    for (int y = 0; y < edge.height; ++y)
      for (int x = 0; x < edge.width; ++x)
        if (edge(y, x))
          for (int dy = 0; dy < s; ++dy)
            for (int dx = 0; dx < s; ++dx)
              if (dy == 0 || dx == 0 || dy == s - 1 || dx == s - 1)
                detail::put_pixel(out, x * s + dx, y * s + dy, kTruthColor);
  }
  for (std::size_t i = 0; i < contours.size(); ++i) {
    const bool first = i == 0, last = i + 1 == contours.size();
    float mid[3] = {0.8f, 0.8f, 0.8f};
    detail::draw_polygon(out, contours[i], s,
                         first ? kInitialColor : (last ? kFinalColor : mid));
  }
  return out;
}

//------------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  std::string value;
  MetricReport report;
  TrainResult train;
};

inline const std::vector<std::string> &sweep_values(const std::string &axis) {
  static const std::vector<std::string> vertices = {"4", "8", "16", "32", "64", "128"};
  static const std::vector<std::string> iterations = {"1", "2", "3", "4", "5"};
  static const std::vector<std::string> resolution = {"16", "32", "64", "128"};
  static const std::vector<std::string> losses = {"seg", "seg+K", "seg+B", "full"};
  if (axis == "vertices") return vertices;
  if (axis == "iterations") return iterations;
  if (axis == "resolution") return resolution;
  if (axis == "losses") return losses;
  throw std::invalid_argument("sweep: unknown axis '" + axis +
                              "' (expected vertices, iterations, resolution or losses)");
}

//! Config for one sweep point. The resolution axis scales the initial
//! circle with the image.
inline RunConfig sweep_config(RunConfig cfg, const std::string &axis,
                              const std::string &value) {
  if (axis == "vertices") {
    cfg.k = detail::parse_number<int>("k", value);
  } else if (axis == "iterations") {
    cfg.T = detail::parse_number<int>("T", value);
  } else if (axis == "resolution") {
    const int res = detail::parse_number<int>("image_size", value);
    cfg.init_diameter = cfg.init_diameter * res / cfg.image_size;
    cfg.image_size = res;
  } else if (axis == "losses") {
    if (value == "seg") cfg.lambda1 = cfg.lambda2 = 0.0;
    else if (value == "seg+K") cfg.lambda1 = 0.0;
    else if (value == "seg+B") cfg.lambda2 = 0.0;
    else if (value != "full")
      throw std::invalid_argument("sweep: unknown loss combination '" + value + "'");
  } else {
    sweep_values(axis); // throws
  }
  return cfg;
}

namespace detail {

inline std::string read_file(const fs::path &p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Mean row of a test_metrics.csv written by write_test_metrics.
inline bool read_test_metrics(const fs::path &p, MetricReport &r) {
  std::ifstream is(p);
  std::string line;
  if (!std::getline(is, line) || line != "f1,miou,wcov,boundf")
    return false;
  if (!std::getline(is, line))
    return false;
  std::istringstream row(line);
  char c1, c2, c3;
  return static_cast<bool>(row >> r.f1 >> c1 >> r.miou >> c2 >> r.wcov >> c3 >> r.boundf);
}

} // namespace detail

inline void write_test_metrics(const fs::path &p, const MetricReport &r) {
  std::ofstream os(p);
  if (!os)
    throw std::runtime_error("cannot write " + p.string());
  os << std::setprecision(9) << "f1,miou,wcov,boundf\n"
     << r.f1 << ',' << r.miou << ',' << r.wcov << ',' << r.boundf << '\n';
}

//! Trains (best-val checkpoint) and scores on the test split. A run
//! directory whose config and test metrics already match is reused.
inline SweepRow train_and_evaluate(const RunConfig &cfg, const fs::path &dir,
                                   std::ostream *progress = nullptr) {
  SweepRow row;
  const auto cfg_path = dir / kConfigFile;
  if (fs::exists(cfg_path) && detail::read_file(cfg_path) == config_to_text(cfg) &&
      detail::read_test_metrics(dir / kTestMetrics, row.report)) {
    if (progress)
      *progress << "reusing " << dir.string() << '\n';
    row.train.best_checkpoint = dir / kBestCheckpoint;
    row.train.final_checkpoint = dir / kFinalCheckpoint;
    return row;
  }
  fs::remove(dir / kTestMetrics);
  row.train = train(cfg, dir, progress);
  Segmenter seg(dir, kBestCheckpoint);
  const auto data = load_splits(cfg);
  row.report = seg.evaluate(data.test);
  write_report_csv((dir / "test_per_image.csv").string(), row.report);
  write_test_metrics(dir / kTestMetrics, row.report);
  return row;
}

inline void write_sweep_table(std::ostream &os, const std::string &axis,
                              const std::vector<SweepRow> &rows, bool csv) {
  const auto flags = os.flags();
  if (csv) {
    os << std::setprecision(9) << axis << ",miou,f1,wcov,boundf,epochs\n";
    for (const auto &r : rows)
      os << r.value << ',' << r.report.miou << ',' << r.report.f1 << ','
         << r.report.wcov << ',' << r.report.boundf << ',' << r.train.epochs_run << '\n';
  } else {
    os << std::left << std::setw(12) << axis << std::right << std::setw(9) << "mIoU"
       << std::setw(9) << "F1" << std::setw(9) << "WCov" << std::setw(9) << "BoundF"
       << '\n'
       << std::fixed << std::setprecision(4);
    for (const auto &r : rows)
      os << std::left << std::setw(12) << r.value << std::right << std::setw(9)
         << r.report.miou << std::setw(9) << r.report.f1 << std::setw(9)
         << r.report.wcov << std::setw(9) << r.report.boundf << '\n';
  }
  os.flags(flags);
}

//! One training run per axis value (all values when `values` is empty);
//! writes `sweep_<axis>.csv` under `out`.
inline std::vector<SweepRow> sweep(RunConfig base, const std::string &axis,
                                   const fs::path &out,
                                   std::vector<std::string> values = {},
                                   std::ostream *progress = nullptr) {
  if (values.empty())
    values = sweep_values(axis);
  if (base.patience == 0)
    base.patience = 10;
  base.validate();
  fs::create_directories(out);
  if (axis == "resolution" && base.data_dir.empty()) {
    // One source set, resampled per resolution.
    const fs::path data = out / "data";
    if (!fs::exists(data / "index.csv")) {
      const auto all = generate(base.synthetic());
      const auto [tr, te] = split(all.size(), base.train_frac, base.data_seed);
      std::vector<std::string> labels(all.size(), "train");
      for (auto i : te)
        labels[i] = "test";
      write_dataset(data, all, labels);
    }
    base.data_dir = data.string();
  }
  std::vector<SweepRow> rows;
  for (const auto &v : values) {
    const auto cfg = sweep_config(base, axis, v);
    if (progress)
      *progress << "== " << axis << " = " << v << '\n';
    auto row = train_and_evaluate(cfg, out / (axis + "_" + v), progress);
    row.value = v;
    rows.push_back(std::move(row));
  }
  std::ofstream table(out / ("sweep_" + axis + ".csv"));
  write_sweep_table(table, axis, rows, true);
  return rows;
}

} // namespace acdr
