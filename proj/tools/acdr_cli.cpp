// Command-line front end: train, infer, eval, sweep, gen-data, viz.

#include "acdr/pipeline.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace acdr;

namespace {

// Config keys exposed as --key (underscores also accepted as dashes).
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App &app, const std::vector<std::string> &keys) {
    app.add_option("--config", config_file, "flat key = value config file")
        ->check(CLI::ExistingFile);
    for (const auto &key : keys) {
      std::string name = "--" + key;
      std::string dashed = key;
      for (auto &c : dashed)
        if (c == '_')
          c = '-';
      if (dashed != key)
        name += ",--" + dashed;
      app.add_option(name, values[key], "default: " + get_config_value(RunConfig{}, key));
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty())
      cfg = load_config(config_file);
    for (const auto &[key, value] : values)
      if (!value.empty())
        set_config_value(cfg, key, value);
    cfg.validate();
    return cfg;
  }
};

std::vector<std::string> data_keys() {
  return {"n_samples", "image_size", "shape_family", "texture",
          "noise_sigma", "data_seed", "train_frac"};
}

void write_polygon_csv(const fs::path &path, const Polygon &p) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(9) << "vertex_index,x,y\n";
  for (std::size_t j = 0; j < p.size(); ++j)
    os << j << ',' << p[j].x << ',' << p[j].y << '\n';
}

int run_train(const ConfigFlags &flags, const fs::path &out) {
  const auto cfg = flags.resolve();
  std::cout << "training into " << out.string() << " ("
            << parameter_count(cfg.unet) << " parameters)\n";
  const auto result = train(cfg, out, &std::cout);
  std::cout << "best epoch " << result.best_epoch << " of " << result.epochs_run
            << ", checkpoint " << result.best_checkpoint.string() << '\n';
  Segmenter seg(out, kBestCheckpoint);
  const auto test = load_splits(cfg).test;
  if (!test.empty()) {
    const auto report = seg.evaluate(test);
    write_report_csv((out / "test_per_image.csv").string(), report);
    write_test_metrics(out / kTestMetrics, report);
    std::cout << "held-out test split:\n";
    print_report(std::cout, report);
  }
  return 0;
}

int run_infer(const fs::path &run, const std::string &checkpoint, const fs::path &image_path,
              const std::string &mask_path, const fs::path &out) {
  Segmenter seg(run, checkpoint);
  const auto image = load_png(image_path.string());
  const auto r = seg.run(image);
  fs::create_directories(out);
  save_mask_png((out / "mask.png").string(), r.mask);
  write_polygon_csv(out / "polygon.csv", r.final_polygon);
  Mask truth;
  if (!mask_path.empty())
    truth = load_mask_png(mask_path);
  save_png((out / "overlay.png").string(),
           make_overlay(image, {r.initial, r.final_polygon},
                        mask_path.empty() ? nullptr : &truth));
  std::cout << "wrote " << (out / "mask.png").string() << ", polygon.csv, overlay.png\n";
  if (!mask_path.empty()) {
    const auto m = f1_iou(r.mask, truth);
    std::cout << std::fixed << std::setprecision(4) << "IoU " << m.iou << "  F1 " << m.f1
              << "  BoundF " << boundf(r.mask, truth) << '\n';
  }
  return 0;
}

int run_eval(const fs::path &run, const std::string &checkpoint, const std::string &data,
             const std::string &split_name, const fs::path &out) {
  Segmenter seg(run, checkpoint);
  std::vector<Sample> samples;
  if (data.empty()) {
    const auto splits = load_splits(seg.config());
    samples = split_name == "train" ? splits.train
              : split_name == "val" ? splits.val
                                    : splits.test;
  } else {
    samples = load_dataset(data, split_name == "all" ? "" : split_name);
    for (auto &s : samples)
      s = resize_sample(s, seg.config().image_size);
  }
  if (samples.empty())
    throw std::invalid_argument("eval: no samples in split '" + split_name + "'");
  const auto report = seg.evaluate(samples);
  fs::create_directories(out);
  write_report_csv((out / "metrics.csv").string(), report);
  print_report(std::cout, report);
  return 0;
}

int run_viz(const fs::path &run, const std::string &checkpoint, const fs::path &image_path,
            const std::string &mask_path, const fs::path &out) {
  Segmenter seg(run, checkpoint);
  const auto image = load_png(image_path.string());
  const auto r = seg.run(image);
  fs::create_directories(out);
  std::vector<Polygon> contours;
  for (const auto &p : r.polygons)
    contours.push_back(to_polygon(p));
  Mask truth;
  if (!mask_path.empty())
    truth = load_mask_png(mask_path);
  save_png((out / "evolution.png").string(),
           make_overlay(image, contours, mask_path.empty() ? nullptr : &truth));
  write_trace_csv((out / "trace.csv").string(), r.polygons);
  for (std::size_t t = 0; t < r.soft_masks.size(); ++t) {
    Grid<float> g(image.height, image.width);
    g.data = r.soft_masks[t].values();
    save_soft_mask_png((out / ("soft_mask_" + std::to_string(t + 1) + ".png")).string(), g);
  }
  // Field magnitude, normalised to the largest displacement.
  const int h = image.height, w = image.width;
  Grid<float> mag(h, w);
  float peak = 0.0f;
  for (int i = 0; i < h * w; ++i) {
    mag.data[i] = std::hypot(r.field[i], r.field[h * w + i]);
    peak = std::max(peak, mag.data[i]);
  }
  for (auto &v : mag.data)
    v = peak > 0.0f ? v / peak : 0.0f;
  save_soft_mask_png((out / "field_magnitude.png").string(), mag);
  std::cout << "wrote evolution.png, trace.csv, soft masks and field_magnitude.png to "
            << out.string() << " (peak displacement " << peak << " px)\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Active contour segmentation with a learned displacement field"};
  app.require_subcommand(1);

  std::string out;
  std::string run_dir, checkpoint = kBestCheckpoint, image, mask, data, split_name = "test";
  std::string axis, values;

  ConfigFlags train_flags, sweep_flags, gen_flags;

  auto *train_cmd = app.add_subcommand("train", "train a model and score the test split");
  train_flags.attach(*train_cmd, config_keys());
  train_cmd->add_option("--out", out, "run directory")->required();

  auto add_model_opts = [&](CLI::App *cmd) {
    cmd->add_option("--run", run_dir, "training run directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--checkpoint", checkpoint, "checkpoint file inside the run directory");
    cmd->add_option("--out", out, "output directory")->required();
  };

  auto *infer_cmd = app.add_subcommand("infer", "segment one image");
  add_model_opts(infer_cmd);
  infer_cmd->add_option("--image", image, "input PNG")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--mask", mask, "optional ground-truth mask PNG")
      ->check(CLI::ExistingFile);

  auto *eval_cmd = app.add_subcommand("eval", "score a trained model on a dataset split");
  add_model_opts(eval_cmd);
  eval_cmd->add_option("--data", data, "dataset directory (default: the run's own data)");
  eval_cmd->add_option("--split", split_name, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto *sweep_cmd = app.add_subcommand("sweep", "sensitivity study along one axis");
  sweep_flags.attach(*sweep_cmd, config_keys());
  sweep_cmd->add_option("--axis", axis, "vertices, iterations, resolution or losses")
      ->required()
      ->check(CLI::IsMember({"vertices", "iterations", "resolution", "losses"}));
  sweep_cmd->add_option("--values", values, "comma-separated subset of axis values");
  sweep_cmd->add_option("--out", out, "sweep directory")->required();

  auto *gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen_flags.attach(*gen_cmd, data_keys());
  gen_cmd->add_option("--out", out, "dataset directory")->required();

  auto *viz_cmd = app.add_subcommand("viz", "dump the contour evolution of one image");
  add_model_opts(viz_cmd);
  viz_cmd->add_option("--image", image, "input PNG")->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--mask", mask, "optional ground-truth mask PNG")
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed())
      return run_train(train_flags, out);
    if (infer_cmd->parsed())
      return run_infer(run_dir, checkpoint, image, mask, out);
    if (eval_cmd->parsed())
      return run_eval(run_dir, checkpoint, data, split_name, out);
    if (viz_cmd->parsed())
      return run_viz(run_dir, checkpoint, image, mask, out);
    if (sweep_cmd->parsed()) {
      const auto cfg = sweep_flags.resolve();
      std::vector<std::string> subset;
      std::stringstream ss(values);
      for (std::string v; std::getline(ss, v, ',');)
        if (!v.empty())
          subset.push_back(v);
      const auto rows = sweep(cfg, axis, out, subset, &std::cout);
      write_sweep_table(std::cout, axis, rows, false);
      return 0;
    }
    if (gen_cmd->parsed()) {
      const auto cfg = gen_flags.resolve();
      const auto samples = generate(cfg.synthetic());
      const auto [tr, te] = split(samples.size(), cfg.train_frac, cfg.data_seed);
      std::vector<std::string> labels(samples.size(), "train");
      for (auto i : te)
        labels[i] = "test";
      write_dataset(out, samples, labels);
      std::cout << "wrote " << samples.size() << " samples (" << tr.size() << " train, "
                << te.size() << " test) to " << out << '\n';
      return 0;
    }
  } catch (const TrainingDiverged &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
