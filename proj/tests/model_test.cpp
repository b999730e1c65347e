#include <gtest/gtest.h>

#include <cmath>

#include "medusa/model.hpp"
#include "oracles.hpp"

using namespace medusa;
using oracle::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.backbone.stage_count = 2;
  c.backbone.stage_channels = {4, 8};
  c.backbone.blocks_per_stage = 1;
  c.backbone.height = 16;
  c.backbone.width = 16;
  c.global.depth = 2;
  c.global.base_channels = 2;
  return c;
}

// Populates running statistics so eval mode is usable.
template <typename T>
void warm_up(ModelBundle<T>& bundle, const Tensor<T>& x) {
  NoGradGuard<T> no_grad;
  forward(bundle, x, ForwardOptions::uniform(Mode::train));
}

void zero_heads(ModelBundle<double>& bundle) {
  for (auto& h : bundle.heads) {
    for (double& v : h.conv().weight().value.mutable_data()) v = 0.0;
    for (double& v : h.conv().bias().value.mutable_data()) v = 0.0;
  }
}

std::vector<double> as_vector(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Backbone, StageShapesFollowDownsampling) {
  BackboneConfig c;
  auto b = Backbone<float>::build(c, 1);
  Rng rng(2);
  Tensor<float> x(c.input_shape(2));
  for (float& v : x.mutable_data()) v = static_cast<float>(rng.uniform());
  NoGradGuard<float> no_grad;
  const auto gates = identity_gates<float>(3);
  StageFeatures<float> f = b.forward_features(x, gates, Mode::train);
  ASSERT_EQ(f.features.size(), 3u);
  EXPECT_EQ(f.features[0].shape(), (Shape{2, 16, 64, 64}));
  EXPECT_EQ(f.features[1].shape(), (Shape{2, 32, 32, 32}));
  EXPECT_EQ(f.features[2].shape(), (Shape{2, 64, 16, 16}));
  EXPECT_EQ(f.logits.shape(), (Shape{2, 2, 1, 1}));
  for (float v : f.logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backbone, SameSeedSameParameters) {
  auto a = build_variant<double>(Variant::plain, small_config(), 9);
  auto b = build_variant<double>(Variant::plain, small_config(), 9);
  auto c = build_variant<double>(Variant::plain, small_config(), 10);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_NE(snapshot(a), snapshot(c));
}

TEST(Backbone, SingleStageIsValid) {
  BackboneConfig c;
  c.stage_count = 1;
  c.stage_channels = {4};
  c.height = c.width = 8;
  c.blocks_per_stage = 1;
  auto b = Backbone<double>::build(c, 3);
  Rng rng(1);
  NoGradGuard<double> no_grad;
  Tensor<double> logits = b.forward(random_tensor(c.input_shape(3), rng, 0, 1), Mode::train);
  EXPECT_EQ(logits.shape(), (Shape{3, 2, 1, 1}));
}

TEST(Backbone, GateCountMismatchIsConfigError) {
  auto b = Backbone<double>::build(small_config().backbone, 1);
  Rng rng(1);
  const auto gates = identity_gates<double>(3);
  EXPECT_THROW(b.forward_features(random_tensor(small_config().backbone.input_shape(1), rng), gates, Mode::train),
               ConfigError);
}

TEST(Backbone, ZeroingGatePropagatesZeroImage) {
  ModelConfig cfg = small_config();
  auto b = Backbone<double>::build(cfg.backbone, 4);
  Rng rng(5);
  Tensor<double> x = random_tensor(cfg.backbone.input_shape(2), rng, 0, 1);
  {
    NoGradGuard<double> no_grad;
    b.forward(x, Mode::train);
  }
  std::vector<StageGate<double>> gates = identity_gates<double>(2);
  gates[0] = [](const Tensor<double>& f) { return Tensor<double>(f.shape()); };
  StageFeatures<double> gated = b.forward_features(x, gates, Mode::eval);
  Tensor<double> zero_stage1(gated.features[0].shape());
  Tensor<double> expect = b.classify(b.run_stage(1, zero_stage1, Mode::eval));
  EXPECT_EQ(as_vector(gated.logits), as_vector(expect));
}

TEST(Backbone, IdenticalImagesGiveIdenticalRowsInEval) {
  ModelConfig cfg = small_config();
  auto bundle = build_variant<double>(Variant::plain, cfg, 2);
  Rng rng(3);
  Tensor<double> one = random_tensor(cfg.backbone.input_shape(1), rng, 0, 1);
  warm_up(bundle, random_tensor(cfg.backbone.input_shape(4), rng, 0, 1));
  std::vector<double> both = as_vector(one);
  both.insert(both.end(), both.begin(), both.end());
  Tensor<double> x(cfg.backbone.input_shape(2), both);
  Tensor<double> logits = forward(bundle, x, ForwardOptions::uniform(Mode::eval)).logits;
  EXPECT_EQ(logits[0], logits[2]);
  EXPECT_EQ(logits[1], logits[3]);
}

TEST(GlobalModule, LatentAndOutputExtents) {
  GlobalConfig g{3, 8};
  auto m = GlobalAttention<float>::build(1, 64, 64, g, 7);
  Rng rng(1);
  Tensor<float> x(Shape{2, 1, 64, 64});
  for (float& v : x.mutable_data()) v = static_cast<float>(rng.uniform());
  NoGradGuard<float> no_grad;
  GlobalOutput<float> out = m.forward(x, Mode::train);
  EXPECT_EQ(out.latent.shape().h, 8);
  EXPECT_EQ(out.latent.shape().w, 8);
  EXPECT_EQ(out.a_g.shape(), (Shape{2, 1, 64, 64}));
  for (float v : out.sigma_a_g.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(GlobalModule, DepthOneKeepsResolution) {
  auto m = GlobalAttention<double>::build(1, 8, 8, GlobalConfig{1, 2}, 1);
  Rng rng(1);
  NoGradGuard<double> no_grad;
  GlobalOutput<double> out = m.forward(random_tensor(Shape{1, 1, 8, 8}, rng), Mode::train);
  EXPECT_EQ(out.latent.shape().h, 4);
  EXPECT_EQ(out.a_g.shape(), (Shape{1, 1, 8, 8}));
}

TEST(GlobalModule, Errors) {
  EXPECT_THROW(GlobalAttention<double>::build(1, 12, 12, GlobalConfig{3, 2}, 1), ConfigError);
  EXPECT_THROW(GlobalAttention<double>::build(1, 8, 8, GlobalConfig{0, 2}, 1), ConfigError);
  auto m = GlobalAttention<double>::build(1, 8, 8, GlobalConfig{1, 2}, 1);
  Rng rng(1);
  EXPECT_THROW(m.forward(random_tensor(Shape{1, 1, 8, 4}, rng), Mode::train), DimensionError);
}

TEST(GlobalModule, DeterministicBuildAndIdenticalImages) {
  ModelConfig cfg = small_config();
  auto a = build_global_module<double>(cfg, 5);
  auto b = build_global_module<double>(cfg, 5);
  StateRefs<double> ra, rb;
  a.collect(ra);
  b.collect(rb);
  EXPECT_EQ(snapshot(ra), snapshot(rb));

  Rng rng(8);
  Tensor<double> warm = random_tensor(Shape{3, 1, 16, 16}, rng, 0, 1);
  NoGradGuard<double> no_grad;
  a.forward(warm, Mode::train);
  std::vector<double> img = oracle::random_values(256, rng, 0, 1);
  std::vector<double> pair = img;
  pair.insert(pair.end(), img.begin(), img.end());
  Tensor<double> s = a.forward(Tensor<double>(Shape{2, 1, 16, 16}, pair), Mode::eval).sigma_a_g;
  for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(s[i], s[256 + i]);
}

TEST(ScaleHead, SameResolutionKeepsSigmaExactly) {
  Rng rng(3);
  ScaleHead<double> head(0, 3, rng);
  Tensor<double> sigma = random_tensor(Shape{2, 1, 6, 6}, rng, 0.01, 0.99);
  Tensor<double> f = random_tensor(Shape{2, 3, 6, 6}, rng);
  HeadOutput<double> out = head.forward(sigma, f);
  EXPECT_EQ(as_vector(out.a_prime), as_vector(sigma));
}

TEST(ScaleHead, ZeroHeadGivesHalf) {
  Rng rng(3);
  ScaleHead<double> head(1, 4, rng);
  for (double& v : head.conv().weight().value.mutable_data()) v = 0.0;
  Tensor<double> sigma(Shape{1, 1, 8, 8}, 0.5);
  HeadOutput<double> out = head.forward(sigma, random_tensor(Shape{1, 4, 4, 4}, rng));
  for (double v : out.a_bar.data()) EXPECT_EQ(v, 0.5);
}

TEST(ScaleHead, MatchesComposedOracle) {
  for (int s = 0; s < 10; ++s) {
    Rng rng(100 + s);
    const int c = 1 + s % 3;
    ScaleHead<double> head(0, c, rng);
    Tensor<double> bias = random_tensor(Shape{1, c, 1, 1}, rng);
    std::copy(bias.data().begin(), bias.data().end(), head.conv().bias().value.mutable_data().begin());
    const Shape ss{2, 1, 8, 8}, fs{2, c, 4 + s % 3, 5};
    Tensor<double> sigma = random_tensor(ss, rng, 0.01, 0.99);
    Tensor<double> f = random_tensor(fs, rng);
    HeadOutput<double> out = head.forward(sigma, f);

    std::vector<double> ap = oracle::bilinear(oracle::values(sigma), ss, fs.h, fs.w);
    const Shape cs{2, c + 1, fs.h, fs.w};
    std::vector<double> cat(cs.numel());
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < fs.h; ++y)
        for (int x = 0; x < fs.w; ++x) {
          cat[oracle::at(cs, n, 0, y, x)] = ap[oracle::at(Shape{2, 1, fs.h, fs.w}, n, 0, y, x)];
          for (int ch = 0; ch < c; ++ch) cat[oracle::at(cs, n, ch + 1, y, x)] = f.at(n, ch, y, x);
        }
    const Tensor<double>& w = head.conv().weight().value;
    std::vector<double> conv = oracle::conv2d(cat, cs, oracle::values(w), w.shape(), oracle::values(bias), 1, true,
                                              nullptr);
    for (double& v : conv) v = oracle::sigmoid(v);
    EXPECT_LT(oracle::max_abs_diff(ap, out.a_prime.data()), 1e-10);
    EXPECT_LT(oracle::max_abs_diff(conv, out.a_bar.data()), 1e-10) << "seed " << s;
  }
}

TEST(ScaleHead, ChannelMismatch) {
  Rng rng(1);
  ScaleHead<double> head(0, 3, rng);
  EXPECT_THROW(head.forward(Tensor<double>(Shape{1, 1, 4, 4}, 0.5), Tensor<double>(Shape{1, 2, 4, 4})),
               DimensionError);
}

TEST(ApplyAttention, ResidualIdentities) {
  for (int s = 0; s < 10; ++s) {
    Rng rng(s);
    Tensor<double> f = random_tensor(Shape{2, 3, 4, 5}, rng, -3, 3);
    EXPECT_EQ(as_vector(apply_attention(f, Tensor<double>(f.shape(), 0.0))), as_vector(f));
    Tensor<double> doubled = apply_attention(f, Tensor<double>(f.shape(), 1.0));
    for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(doubled[i], 2.0 * f[i]);
    Tensor<double> a = random_tensor(f.shape(), rng, 0, 1);
    Tensor<double> out = apply_attention(f, a);
    for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(out[i], a[i] * f[i] + f[i], 1e-12);
  }
  EXPECT_THROW(apply_attention(Tensor<double>(Shape{1, 2, 2, 2}), Tensor<double>(Shape{1, 1, 2, 2})), DimensionError);
}

TEST(MedusaForward, ShapesRangesAndSingleBody) {
  ModelConfig cfg = small_config();
  auto bundle = build_variant<double>(Variant::medusa, cfg, 11);
  ASSERT_EQ(bundle.heads.size(), 2u);
  Rng rng(4);
  Tensor<double> x = random_tensor(cfg.backbone.input_shape(3), rng, 0, 1);
  NoGradGuard<double> no_grad;
  ForwardResult<double> r = medusa_forward(bundle, x, ForwardOptions::uniform(Mode::train));
  ASSERT_TRUE(r.attention);
  const auto& att = *r.attention;
  ASSERT_EQ(att.a_prime.size(), 2u);
  for (std::size_t j = 0; j < 2; ++j) {
    const Shape fs = r.stages.features[j].shape();
    EXPECT_EQ(att.a_prime[j].shape(), (Shape{3, 1, fs.h, fs.w}));
    EXPECT_EQ(att.a_bar[j].shape(), fs);
    EXPECT_EQ(att.f_bar[j].shape(), fs);
    EXPECT_EQ(as_vector(att.a_prime[j]), as_vector(bilinear_resize(att.sigma_a_g, fs.h, fs.w)));
    for (std::size_t i = 0; i < fs.numel(); ++i) {
      const double a = att.a_bar[j][i], f = r.stages.features[j][i], fb = att.f_bar[j][i];
      ASSERT_GT(a, 0.0);
      ASSERT_LT(a, 1.0);
      if (f > 0) {
        EXPECT_GT(fb, f);
        EXPECT_LT(fb, 2 * f);
      }
    }
  }
}

TEST(MedusaForward, DisabledMatchesPlainBackbone) {
  ModelConfig cfg = small_config();
  auto medusa = build_variant<double>(Variant::medusa, cfg, 21);
  auto plain = build_variant<double>(Variant::plain, cfg, 21);
  Rng rng(6);
  Tensor<double> x = random_tensor(cfg.backbone.input_shape(3), rng, 0, 1);
  warm_up(plain, x);
  {
    // identity gates see the same batch statistics as the plain backbone
    NoGradGuard<double> no_grad;
    medusa_forward(medusa, x, ForwardOptions::uniform(Mode::train, false));
  }
  const auto before = snapshot(medusa, true);
  Tensor<double> disabled =
      medusa_forward(medusa, x, ForwardOptions::uniform(Mode::eval, false)).logits;
  Tensor<double> base = forward(plain, x, ForwardOptions::uniform(Mode::eval)).logits;
  EXPECT_EQ(as_vector(disabled), as_vector(base));
  EXPECT_EQ(snapshot(medusa, true), before);
}

TEST(MedusaForward, ZeroHeadsScaleFeaturesByOneAndAHalf) {
  ModelConfig cfg = small_config();
  auto bundle = build_variant<double>(Variant::medusa, cfg, 13);
  zero_heads(bundle);
  Rng rng(4);
  NoGradGuard<double> no_grad;
  ForwardResult<double> r =
      medusa_forward(bundle, random_tensor(cfg.backbone.input_shape(2), rng, 0, 1), ForwardOptions::uniform(Mode::train));
  for (std::size_t j = 0; j < 2; ++j) {
    for (double v : r.attention->a_bar[j].data()) EXPECT_EQ(v, 0.5);
    for (std::size_t i = 0; i < r.stages.features[j].numel(); ++i)
      EXPECT_EQ(r.attention->f_bar[j][i], 1.5 * r.stages.features[j][i]);
  }
}

TEST(MedusaForward, MissingComponentIsRejected) {
  auto bundle = build_variant<double>(Variant::medusa, small_config(), 1);
  bundle.heads.pop_back();
  Rng rng(1);
  EXPECT_THROW(medusa_forward(bundle, random_tensor(small_config().backbone.input_shape(1), rng),
                              ForwardOptions::uniform(Mode::train)),
               IncompatibleError);
}

TEST(SEHead, ZeroExciteGivesHalf) {
  Rng rng(2);
  SEHead<double> head(0, 8, 4, rng);
  for (double& v : head.excite().weight().value.mutable_data()) v = 0.0;
  Tensor<double> f = random_tensor(Shape{2, 8, 3, 3}, rng);
  Tensor<double> out = head.forward(f);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(out[i], 0.5 * f[i]);
}

TEST(SEHead, MatchesLoopOracle) {
  for (int s = 0; s < 10; ++s) {
    Rng rng(40 + s);
    const int c = 8, r = 4, n = 2, hw = 9;
    SEHead<double> head(0, c, r, rng);
    for (double& v : head.squeeze().bias().value.mutable_data()) v = rng.uniform(-0.5, 0.5);
    for (double& v : head.excite().bias().value.mutable_data()) v = rng.uniform(-0.5, 0.5);
    Tensor<double> f = random_tensor(Shape{n, c, 3, 3}, rng, -2, 2);
    const auto w1 = oracle::values(head.squeeze().weight().value), b1 = oracle::values(head.squeeze().bias().value);
    const auto w2 = oracle::values(head.excite().weight().value), b2 = oracle::values(head.excite().bias().value);
    Tensor<double> out = head.forward(f);
    for (int i = 0; i < n; ++i) {
      std::vector<double> pooled(c, 0.0), hidden(c / r, 0.0);
      for (int k = 0; k < c; ++k) {
        for (int p = 0; p < hw; ++p) pooled[k] += f[(static_cast<std::size_t>(i) * c + k) * hw + p];
        pooled[k] /= hw;
      }
      for (int u = 0; u < c / r; ++u) {
        double acc = b1[u];
        for (int k = 0; k < c; ++k) acc += pooled[k] * w1[static_cast<std::size_t>(k) * (c / r) + u];
        hidden[u] = std::max(acc, 0.0);
      }
      for (int k = 0; k < c; ++k) {
        double acc = b2[k];
        for (int u = 0; u < c / r; ++u) acc += hidden[u] * w2[static_cast<std::size_t>(u) * c + k];
        const double gate = oracle::sigmoid(acc);
        ASSERT_GT(gate, 0.0);
        ASSERT_LT(gate, 1.0);
        for (int p = 0; p < hw; ++p) {
          const std::size_t idx = (static_cast<std::size_t>(i) * c + k) * hw + p;
          EXPECT_NEAR(out[idx], gate * f[idx], 1e-12);
        }
      }
    }
  }
}

TEST(SEHead, ChannelMismatch) {
  Rng rng(2);
  SEHead<double> head(0, 8, 4, rng);
  EXPECT_THROW(head.forward(Tensor<double>(Shape{1, 4, 2, 2})), DimensionError);
  EXPECT_THROW(SEHead<double>(0, 6, 4, rng), ConfigError);
}

TEST(Variants, SharedBackboneSeedAndHeadCounts) {
  ModelConfig cfg;
  auto plain = build_variant<float>(Variant::plain, cfg, 3);
  auto se = build_variant<float>(Variant::se, cfg, 3);
  auto med = build_variant<float>(Variant::medusa, cfg, 3);
  EXPECT_EQ(snapshot(plain), snapshot(med.component_refs(Component::backbone)));
  EXPECT_EQ(snapshot(plain), snapshot(se.component_refs(Component::backbone)));
  ASSERT_EQ(se.se_heads.size(), 3u);
  EXPECT_EQ(se.se_heads[0].bottleneck(), 4);
  EXPECT_EQ(se.se_heads[1].bottleneck(), 8);
  EXPECT_EQ(se.se_heads[2].bottleneck(), 16);
  EXPECT_EQ(med.heads.size(), 3u);
  EXPECT_FALSE(plain.global);
  EXPECT_TRUE(plain.heads.empty() && plain.se_heads.empty());
  auto se_again = build_variant<float>(Variant::se, cfg, 3);
  EXPECT_EQ(snapshot(se_again), snapshot(se));
}

TEST(Variants, UnknownNameIsConfigError) {
  EXPECT_EQ(parse_variant("se"), Variant::se);
  EXPECT_THROW(parse_variant("cbam"), ConfigError);
}
