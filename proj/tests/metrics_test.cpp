#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "medusa/evaluate.hpp"
#include "medusa/visualize.hpp"
#include "oracles.hpp"

using namespace medusa;
namespace fs = std::filesystem;

TEST(Metrics, ReferenceConfusionCounts) {
  const ConfusionMatrix cm{195, 2, 198, 5};
  const ClassificationMetrics m = classification_metrics(cm);
  EXPECT_EQ(m.sensitivity.str(), "97.5");
  EXPECT_EQ(m.ppv.str(), "99.0");
  EXPECT_EQ(m.accuracy.str(), "98.3");
  EXPECT_DOUBLE_EQ(m.sensitivity.value(), 97.5);
  EXPECT_NEAR(m.ppv.value(), 100.0 * 195 / 197, 1e-12);
  EXPECT_DOUBLE_EQ(m.accuracy.value(), 98.25);
}

TEST(Metrics, HalfUpRounding) {
  EXPECT_EQ((Percentage{1, 8}).tenths(), 125);     // 12.5 exactly
  EXPECT_EQ((Percentage{1, 3}).tenths(), 333);     // 33.33
  EXPECT_EQ((Percentage{2, 3}).tenths(), 667);     // 66.67
  EXPECT_EQ((Percentage{393, 400}).tenths(), 983);  // 98.25 -> 98.3
  EXPECT_EQ((Percentage{0, 5}).str(), "0.0");
  EXPECT_EQ((Percentage{5, 5}).str(), "100.0");
}

TEST(Metrics, UndefinedRatioIsFlagged) {
  const ClassificationMetrics m = classification_metrics(ConfusionMatrix{0, 3, 7, 0});
  EXPECT_FALSE(m.sensitivity.defined());
  EXPECT_EQ(m.sensitivity.str(), "n/a");
  EXPECT_THROW(m.sensitivity.value(), StateError);
  EXPECT_TRUE(m.ppv.defined());
  EXPECT_EQ(m.ppv.str(), "0.0");
  EXPECT_EQ(m.accuracy.str(), "70.0");
  EXPECT_THROW(classification_metrics(ConfusionMatrix{}), StateError);
}

TEST(Metrics, PerfectClassifierAndSwapSymmetry) {
  const ClassificationMetrics m = classification_metrics(ConfusionMatrix{40, 0, 60, 0});
  EXPECT_EQ(m.sensitivity.str(), "100.0");
  EXPECT_EQ(m.ppv.str(), "100.0");
  EXPECT_EQ(m.accuracy.str(), "100.0");
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    ConfusionMatrix a{rng.uniform_int(0, 50), rng.uniform_int(0, 50), rng.uniform_int(0, 50), rng.uniform_int(1, 50)};
    ConfusionMatrix b{a.tn, a.fn, a.tp, a.fp};
    EXPECT_DOUBLE_EQ(classification_metrics(a).accuracy.value(), classification_metrics(b).accuracy.value());
  }
}

TEST(Metrics, ConfusionAdd) {
  ConfusionMatrix cm;
  cm.add(1, 1);
  cm.add(1, 0);
  cm.add(0, 1);
  cm.add(0, 0);
  cm.add(0, 0);
  EXPECT_EQ(cm, (ConfusionMatrix{1, 1, 2, 1}));
  EXPECT_EQ(cm.total(), 5);
}

namespace {

template <typename A, typename M>
double mass(const std::vector<A>& attention, const std::vector<M>& mask) {
  return attention_mass<A, M>(attention, mask);
}

}  // namespace

TEST(AttentionMass, Examples) {
  std::vector<double> uniform(16, 0.3);
  std::vector<float> quarter(16, 0.0f);
  for (int i = 0; i < 4; ++i) quarter[i] = 1.0f;
  EXPECT_DOUBLE_EQ(mass(uniform, quarter), 0.25);
  std::vector<double> inside(16, 0.0);
  for (int i = 0; i < 4; ++i) inside[i] = 0.7;
  EXPECT_DOUBLE_EQ(mass(inside, quarter), 1.0);
  EXPECT_THROW(mass(std::vector<double>(16, 0.0), quarter), StateError);
  EXPECT_THROW(mass(std::vector<double>(3, 1.0), quarter), DimensionError);
}

TEST(AttentionMass, OracleAndScaleInvariance) {
  for (int s = 0; s < 10; ++s) {
    Rng rng(s);
    const int h = 7, w = 9;
    std::vector<double> att(h * w);
    std::vector<std::uint8_t> mask(h * w);
    for (auto& v : att) v = rng.uniform(0.01, 0.99);
    for (auto& v : mask) v = rng.bernoulli(0.4) ? 1 : 0;
    double in = 0, tot = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        tot += att[y * w + x];
        if (mask[y * w + x]) in += att[y * w + x];
      }
    const double got = mass(att, mask);
    EXPECT_NEAR(got, in / tot, 1e-12);
    std::vector<double> scaled(att);
    for (auto& v : scaled) v *= 37.5;
    EXPECT_NEAR(mass(scaled, mask), got, 1e-12);
  }
}

TEST(Argmax, TiesGoToClassZero) {
  EXPECT_EQ(argmax_class(std::vector<double>{0.5, 0.5}), 0);
  EXPECT_EQ(argmax_class(std::vector<float>{-1.0f, 2.0f}), 1);
  EXPECT_EQ(argmax_class(std::vector<double>{3.0, 1.0, 3.0}), 0);
}

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.backbone.stage_count = 2;
  c.backbone.stage_channels = {4, 8};
  c.backbone.blocks_per_stage = 1;
  c.backbone.height = c.backbone.width = 32;
  c.global.depth = 2;
  c.global.base_channels = 4;
  return c;
}

Dataset tiny_data(int count) {
  SyntheticConfig c;
  c.width = c.height = 32;
  c.train_count = count;
  c.val_count = c.test_count = 0;
  c.lesion_radius_max = 3;
  c.seed = 11;
  return to_dataset(generate_samples(c));
}

template <typename T>
void warm_up(ModelBundle<T>& bundle, const Dataset& data) {
  NoGradGuard<T> no_grad;
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  forward(bundle, make_batch<T>(data, all).images, ForwardOptions::uniform(Mode::train));
}

}  // namespace

TEST(Evaluate, SinglePositivePredictedPositive) {
  auto bundle = build_variant<float>(Variant::plain, tiny_model(), 1);
  Dataset data = tiny_data(8);
  warm_up(bundle, data);
  for (float& v : bundle.find("backbone.head.weight")->value.mutable_data()) v = 0.0f;
  auto bias = bundle.find("backbone.head.bias")->value.mutable_data();
  bias[0] = 0.0f;
  bias[1] = 5.0f;
  Dataset one;
  one.width = data.width;
  one.height = data.height;
  for (const auto& s : data.samples)
    if (s.label == 1) {
      one.samples.push_back(s);
      break;
    }
  const EvalReport r = evaluate(bundle, one);
  EXPECT_EQ(r.matrix, (ConfusionMatrix{1, 0, 0, 0}));
  EXPECT_EQ(r.metrics.accuracy.str(), "100.0");
  EXPECT_EQ(r.metrics.ppv.str(), "100.0");
  ASSERT_EQ(r.predictions.size(), 1u);
  EXPECT_EQ(r.predictions[0].predicted, 1);
  EXPECT_FALSE(r.attention_present);
  EXPECT_FALSE(r.mean_attention_mass);
}

TEST(Evaluate, DeterministicReportWithAttentionMass) {
  auto bundle = build_variant<float>(Variant::medusa, tiny_model(), 2);
  Dataset data = tiny_data(12);
  warm_up(bundle, data);
  const EvalReport a = evaluate(bundle, data, EvalOptions{true, 5});
  const EvalReport b = evaluate(bundle, data, EvalOptions{true, 5});
  EXPECT_EQ(a.summary_csv(), b.summary_csv());
  EXPECT_EQ(a.predictions_csv(), b.predictions_csv());
  EXPECT_EQ(a.table(), b.table());
  EXPECT_EQ(a.matrix.total(), 12);
  EXPECT_TRUE(a.attention_present);
  EXPECT_TRUE(a.attention_enabled);
  ASSERT_TRUE(a.mean_attention_mass);
  ASSERT_TRUE(a.mean_mask_fraction);
  EXPECT_GT(*a.mean_attention_mass, 0.0);
  EXPECT_LT(*a.mean_attention_mass, 1.0);
  const EvalReport off = evaluate(bundle, data, EvalOptions{false, 5});
  EXPECT_FALSE(off.attention_enabled);
  EXPECT_NE(off.summary_csv(), a.summary_csv());

  const fs::path dir = fs::temp_directory_path() / "medusa_metrics_test_report";
  fs::remove_all(dir);
  a.write(dir);
  for (const char* f : {"report.csv", "predictions.csv", "report.txt"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream in(dir / "predictions.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("id,label,predicted", 0), 0u);
}

TEST(Evaluate, Errors) {
  auto bundle = build_variant<float>(Variant::plain, tiny_model(), 1);
  EXPECT_THROW(evaluate(bundle, Dataset{}), StateError);
  SyntheticConfig c;
  c.width = c.height = 16;
  c.train_count = 2;
  c.val_count = c.test_count = 0;
  c.lesion_radius_max = 2;
  EXPECT_THROW(evaluate(bundle, to_dataset(generate_samples(c))), DimensionError);
}

TEST(Visualize, ColormapOrientation) {
  const std::vector<float> gray(16, 0.4f);
  const Image8 mid = attention_overlay(gray, std::vector<double>(16, 0.5), 4, 4);
  ASSERT_EQ(mid.channels, 3);
  ASSERT_EQ(mid.pixels.size(), 48u);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_LE(std::abs(mid.pixels[3 * i] - mid.pixels[3 * i + 2]), 1);
  const Image8 hot = attention_overlay(gray, std::vector<double>(16, 1.0), 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_GT(hot.pixels[3 * i], hot.pixels[3 * i + 2]);
  const auto c0 = heat_color(0.0);
  EXPECT_EQ(c0[2], 1.0);
  EXPECT_EQ(c0[0], 0.0);
}

TEST(Visualize, ChannelGridNormalizesEachMap) {
  Tensor<double> maps(Shape{2, 3, 2, 2});
  auto d = maps.mutable_data();
  for (std::size_t i = 0; i < 4; ++i) {
    d[i] = static_cast<double>(i);            // ramp
    d[4 + i] = 100.0 + 10.0 * i;              // same ramp, other scale
    d[8 + i] = 7.0;                           // constant
  }
  const Image8 g = channel_grid(maps, 0);
  // 3 maps -> 2 columns x 2 rows of 2x2 tiles with 1-pixel gaps
  EXPECT_EQ(g.width, 5);
  EXPECT_EQ(g.height, 5);
  EXPECT_EQ(g.channels, 1);
  auto px = [&](int x, int y) { return g.pixels[static_cast<std::size_t>(y) * g.width + x]; };
  EXPECT_EQ(px(0, 0), 0);
  EXPECT_EQ(px(1, 1), 255);
  EXPECT_EQ(px(3, 0), 0);
  EXPECT_EQ(px(4, 1), 255);
  EXPECT_EQ(px(0, 0), px(3, 0));
  EXPECT_EQ(px(1, 0), px(4, 0));
  EXPECT_EQ(px(0, 3), 0);
  EXPECT_EQ(px(1, 4), 0);
}
