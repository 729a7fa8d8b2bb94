#include "acdr/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace acdr;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
  explicit TempDir(const std::string &tag)
      : path_(fs::temp_directory_path() / ("acdr_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path &path() const { return path_; }

private:
  fs::path path_;
};

RunConfig tiny() {
  RunConfig c;
  c.n_samples = 20;
  c.image_size = 16;
  c.init_diameter = 8;
  c.k = 8;
  c.T = 2;
  c.batch = 4;
  c.epochs = 1;
  c.unet.base_channels = 4;
  c.unet.depth = 2;
  return c;
}

std::string slurp(const fs::path &p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path &p) {
  std::ifstream is(p);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);)
    ++n;
  return n;
}

} // namespace

TEST(Config, TextRoundTrip) {
  RunConfig c = tiny();
  c.lambda1 = 0.1234567890123;
  c.shape_family = "star";
  c.unet.head = FieldHead::sigmoid;
  c.data_dir = "some/where";
  c.augment = true;
  const auto back = parse_config(config_to_text(c));
  EXPECT_EQ(config_to_text(back), config_to_text(c));
  EXPECT_EQ(back.lambda1, c.lambda1);
  EXPECT_EQ(back.unet.head, FieldHead::sigmoid);
  EXPECT_TRUE(back.augment);
}

TEST(Config, ParsesCommentsAndOverridesBase) {
  const auto c = parse_config("# a comment\n\n  k = 32 \nlr=0.01\n", tiny());
  EXPECT_EQ(c.k, 32);
  EXPECT_EQ(c.lr, 0.01);
  EXPECT_EQ(c.T, 2); // kept from the base
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("no_such_key = 1"), std::invalid_argument);
  EXPECT_THROW(parse_config("k = 3.5"), std::invalid_argument);
  EXPECT_THROW(parse_config("k = twelve"), std::invalid_argument);
  EXPECT_THROW(parse_config("just words"), std::invalid_argument);
  EXPECT_THROW(parse_config("field_head = tanh"), std::invalid_argument);
  RunConfig c = tiny();
  c.T = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny();
  c.curvature_units = "furlong";
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(tiny().validate());
}

TEST(Pipeline, OneEpochSmokeRunWritesArtifacts) {
  TempDir dir("smoke");
  const auto cfg = tiny();
  const auto result = train(cfg, dir.path());
  EXPECT_EQ(result.epochs_run, 1);
  for (const char *f : {kConfigFile, kBestCheckpoint, kFinalCheckpoint, kTrainLog, kMetricsLog})
    EXPECT_TRUE(fs::exists(dir.path() / f)) << f;
  EXPECT_TRUE(fs::exists(dir.path() / "best.ckpt.adam"));
  EXPECT_EQ(line_count(dir.path() / kMetricsLog), 2u);
  // 14 training samples in batches of 4.
  EXPECT_EQ(line_count(dir.path() / kTrainLog), 1u + 4);
  EXPECT_EQ(slurp(dir.path() / kConfigFile), config_to_text(cfg));

  Segmenter seg(dir.path(), kFinalCheckpoint);
  const auto data = load_splits(cfg);
  const auto report = seg.evaluate(data.test);
  EXPECT_EQ(report.per_image.size(), data.test.size());
  EXPECT_GE(report.miou, 0.0);
  EXPECT_LE(report.miou, 1.0);
}

TEST(Pipeline, SeededRunsProduceIdenticalLogs) {
  TempDir a("det_a"), b("det_b");
  auto cfg = tiny();
  cfg.epochs = 2;
  cfg.unet.dropout_p = 0.2;
  cfg.augment = true;
  train(cfg, a.path());
  train(cfg, b.path());
  EXPECT_EQ(slurp(a.path() / kMetricsLog), slurp(b.path() / kMetricsLog));
  EXPECT_EQ(slurp(a.path() / kTrainLog), slurp(b.path() / kTrainLog));
}

TEST(Pipeline, SplitsAreDisjointAndSized) {
  const auto d = load_splits(tiny());
  EXPECT_EQ(d.train.size() + d.val.size() + d.test.size(), 20u);
  EXPECT_EQ(d.test.size(), 4u);
  std::set<std::string> ids;
  for (const auto *part : {&d.train, &d.val, &d.test})
    for (const auto &s : *part)
      EXPECT_TRUE(ids.insert(s.id).second) << s.id;
}

TEST(Segmenter, ZeroFieldReturnsInitialCircle) {
  const auto cfg = tiny();
  UNet<float> model(cfg.unet, 0);
  for (const char *name : {"head.weight", "head.bias"})
    for (auto &v : model.parameter(name).mutable_values())
      v = 0.0f;
  Segmenter seg(cfg, std::move(model));
  const auto s = generate(cfg.synthetic())[0];
  const auto r = seg.run(s.image);
  const auto init = make_initial_contour(cfg, 16, 16);
  ASSERT_EQ(r.final_polygon.size(), init.polygon.size());
  for (std::size_t i = 0; i < init.polygon.size(); ++i) {
    EXPECT_NEAR(r.final_polygon[i].x, init.polygon[i].x, 1e-5);
    EXPECT_NEAR(r.final_polygon[i].y, init.polygon[i].y, 1e-5);
  }
  EXPECT_EQ(r.mask, rasterize_hard(init.polygon, init.faces, 16, 16));
  EXPECT_EQ(r.polygons.size(), 3u);
  EXPECT_EQ(r.soft_masks.size(), 2u);
  EXPECT_EQ(r.field.shape(), (Shape{2, 16, 16}));
}

TEST(Segmenter, PolygonHasKVerticesInsideImage) {
  auto cfg = tiny();
  cfg.unet.field_scale = 25.0; // large displacements exercise truncation
  Segmenter seg(cfg, UNet<float>(cfg.unet, 3));
  for (const auto &s : generate(cfg.synthetic())) {
    const auto r = seg.run(s.image);
    ASSERT_EQ(r.final_polygon.size(), 8u);
    for (const auto &p : r.final_polygon.vertices) {
      EXPECT_GE(p.x, 0.0);
      EXPECT_LE(p.x, 15.0);
      EXPECT_GE(p.y, 0.0);
      EXPECT_LE(p.y, 15.0);
    }
  }
}

TEST(Segmenter, RejectsSizeMismatch) {
  const auto cfg = tiny();
  Segmenter seg(cfg, UNet<float>(cfg.unet, 0));
  EXPECT_THROW(seg.run(Image(3, 32, 32)), std::invalid_argument);
  Sample s;
  s.image = Image(3, 8, 8);
  s.mask = Mask(8, 8);
  EXPECT_THROW(seg.evaluate({s}), std::invalid_argument);
  EXPECT_THROW(seg.evaluate({}), std::invalid_argument);
}

TEST(Evaluate, PerfectAndEmptyPredictions) {
  const auto samples = generate(SyntheticSpec{6, 16});
  std::vector<Mask> gts, empty;
  for (const auto &s : samples) {
    gts.push_back(s.mask);
    empty.emplace_back(16, 16);
  }
  const auto perfect = evaluate_masks(gts, gts);
  EXPECT_EQ(perfect.miou, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  EXPECT_EQ(perfect.wcov, 1.0);
  EXPECT_EQ(perfect.boundf, 1.0);
  const auto none = evaluate_masks(empty, gts);
  EXPECT_EQ(none.miou, 0.0);
  EXPECT_EQ(none.boundf, 0.0);
}

TEST(Pipeline, TrainsOnThreeImageDatasetDirectory) {
  TempDir dir("micro");
  const auto samples = generate(SyntheticSpec{3, 16, ShapeFamily::ellipse});
  write_dataset(dir.path() / "data", samples, {"train", "train", "test"});
  auto cfg = tiny();
  cfg.data_dir = (dir.path() / "data").string();
  cfg.val_frac = 0.0;
  const auto row = train_and_evaluate(cfg, dir.path() / "run");
  EXPECT_EQ(row.report.per_image.size(), 1u);
  EXPECT_EQ(row.report.per_image[0].id, samples[2].id);
  EXPECT_TRUE(fs::exists(dir.path() / "run" / kTestMetrics));

  // A matching run directory is reused rather than retrained.
  std::ostringstream log;
  const auto again = train_and_evaluate(cfg, dir.path() / "run", &log);
  EXPECT_NE(log.str().find("reusing"), std::string::npos);
  EXPECT_DOUBLE_EQ(again.report.miou, row.report.miou);
}

TEST(Sweep, EmitsOneRowPerValue) {
  TempDir dir("sweep");
  auto cfg = tiny();
  cfg.n_samples = 12;
  const auto rows = sweep(cfg, "losses", dir.path());
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].value, "seg");
  EXPECT_EQ(rows[3].value, "full");
  EXPECT_EQ(line_count(dir.path() / "sweep_losses.csv"), 5u);
  const auto res = sweep(cfg, "resolution", dir.path(), {"16", "32"});
  EXPECT_EQ(res.size(), 2u);
  EXPECT_TRUE(fs::exists(dir.path() / "data" / "index.csv"));
  EXPECT_THROW(sweep(cfg, "colour", dir.path()), std::invalid_argument);
}

TEST(Sweep, ConfigPerAxis) {
  const RunConfig base;
  EXPECT_EQ(sweep_config(base, "vertices", "32").k, 32);
  EXPECT_EQ(sweep_config(base, "iterations", "5").T, 5);
  const auto r = sweep_config(base, "resolution", "16");
  EXPECT_EQ(r.image_size, 16);
  EXPECT_DOUBLE_EQ(r.init_diameter, 4.0);
  const auto seg = sweep_config(base, "losses", "seg");
  EXPECT_EQ(seg.lambda1, 0.0);
  EXPECT_EQ(seg.lambda2, 0.0);
  EXPECT_EQ(sweep_config(base, "losses", "seg+K").lambda2, base.lambda2);
  EXPECT_EQ(sweep_config(base, "losses", "seg+B").lambda2, 0.0);
  EXPECT_THROW(sweep_config(base, "losses", "seg+X"), std::invalid_argument);
}

TEST(Overlay, UpscalesAndDrawsContours) {
  const auto s = generate(SyntheticSpec{1, 16})[0];
  const auto p = init_circle(16, 16, 8, 8);
  const auto img = make_overlay(s.image, {p, p}, &s.mask);
  EXPECT_EQ(img.width, 64);
  EXPECT_EQ(img.height, 64);
  EXPECT_NE(img, make_overlay(s.image, {}, nullptr));
}
