#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "medusa/data.hpp"
#include "medusa/netpbm.hpp"
#include "medusa/random.hpp"

using namespace medusa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("medusa_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SyntheticConfig small(std::uint64_t seed) {
  SyntheticConfig c;
  c.train_count = 24;
  c.val_count = 8;
  c.test_count = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Synthetic, ExactClassBalance) {
  SyntheticConfig c;
  c.train_count = 400;
  c.val_count = 0;
  c.test_count = 0;
  c.width = c.height = 32;
  c.lesion_radius_max = 3;
  const auto samples = generate_samples(c);
  ASSERT_EQ(samples.size(), 400u);
  EXPECT_EQ(std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.label == 1; }), 200);
}

TEST(Synthetic, GeometryHoldsForEverySample) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticConfig c = small(seed);
    c.distractor_probability = 0.8;
    int with_distractors = 0;
    for (const auto& s : generate_samples(c)) {
      const std::size_t n = static_cast<std::size_t>(s.width) * s.height;
      ASSERT_EQ(s.image.size(), n);
      if (s.label == 1) {
        EXPECT_GE(s.lesion_count, c.lesion_count_min);
        EXPECT_LE(s.lesion_count, c.lesion_count_max);
      } else {
        EXPECT_EQ(s.lesion_count, 0);
      }
      bool any_lesion = false, any_distractor = false;
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_GE(s.image[i], 0.0);
        ASSERT_LE(s.image[i], 1.0);
        ASSERT_TRUE(s.mask[i] == 0 || s.mask[i] == 1);
        if (s.lesions[i]) {
          any_lesion = true;
          ASSERT_EQ(s.mask[i], 1) << "lesion pixel outside the mask";
        }
        if (s.distractors[i]) {
          any_distractor = true;
          ASSERT_EQ(s.mask[i], 0) << "distractor pixel inside the mask";
        }
      }
      EXPECT_EQ(any_lesion, s.label == 1);
      with_distractors += any_distractor ? 1 : 0;
    }
    EXPECT_GT(with_distractors, 0);
  }
}

TEST(Synthetic, SampleIndependentOfGenerationOrder) {
  SyntheticConfig c = small(4);
  const auto all = generate_samples(c);
  const auto& pick = all[5];
  const auto again = generate_sample(c, pick.split, pick.index, pick.label);
  EXPECT_EQ(again.image, pick.image);
  EXPECT_EQ(again.mask, pick.mask);
}

TEST(Synthetic, InvalidConfig) {
  SyntheticConfig c;
  c.positive_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SyntheticConfig{};
  c.lesion_radius_min = 5;
  c.lesion_radius_max = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SyntheticConfig{};
  c.distractor_probability = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Dataset, GenerationIsByteReproducible) {
  const fs::path a = temp_dir("repro_a"), b = temp_dir("repro_b");
  const Manifest ma = generate_dataset(small(7), a);
  generate_dataset(small(7), b);
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  for (const auto& r : ma.rows) {
    EXPECT_EQ(slurp(a / r.image), slurp(b / r.image)) << r.image;
    EXPECT_EQ(slurp(a / r.mask), slurp(b / r.mask)) << r.mask;
  }
  const fs::path c = temp_dir("repro_c");
  generate_dataset(small(8), c);
  EXPECT_NE(slurp(a / ma.rows[0].image), slurp(c / ma.rows[0].image));
}

TEST(Dataset, ManifestShapeAndDisjointSplits) {
  const fs::path d = temp_dir("manifest");
  const Manifest m = generate_dataset(small(1), d);
  std::ifstream in(d / "manifest.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "image,mask,label,split");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 40);
  std::set<std::string> seen;
  for (const auto& r : m.rows) {
    EXPECT_TRUE(seen.insert(r.image).second);
    EXPECT_TRUE(fs::exists(d / r.image));
    EXPECT_TRUE(fs::exists(d / r.mask));
  }
  const Manifest back = read_manifest(d / "manifest.csv");
  ASSERT_EQ(back.rows.size(), m.rows.size());
  EXPECT_EQ(back.rows[3].split, m.rows[3].split);
}

TEST(Dataset, RoundTripEqualsBytesOver255) {
  const fs::path d = temp_dir("roundtrip");
  const SyntheticConfig c = small(2);
  const auto samples = generate_samples(c);
  generate_dataset(c, d);
  const Dataset loaded = load_dataset(d / "manifest.csv");
  ASSERT_EQ(loaded.size(), samples.size());
  EXPECT_TRUE(loaded.has_masks());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Image8 raw = read_pgm(d / read_manifest(d / "manifest.csv").rows[k].image);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
      ASSERT_EQ(loaded.samples[k].image[i], static_cast<float>(raw.pixels[i]) / 255.0f);
      ASSERT_LE(std::abs(loaded.samples[k].image[i] - samples[k].image[i]), 1.0 / 510 + 1e-7);
      ASSERT_EQ(loaded.samples[k].mask[i], static_cast<float>(samples[k].mask[i]));
    }
  }
  EXPECT_EQ(load_dataset(d / "manifest.csv", Split::val).size(), 8u);
}

TEST(Dataset, QuantizeRoundsToNearest) {
  EXPECT_EQ(quantize(0.0), 0);
  EXPECT_EQ(quantize(1.0), 255);
  EXPECT_EQ(quantize(0.5), 128);
  EXPECT_EQ(quantize(-0.2), 0);
  EXPECT_EQ(quantize(1.7), 255);
  for (int i = 0; i <= 1000; ++i) {
    const double v = i / 1000.0;
    EXPECT_LE(std::abs(quantize(v) / 255.0 - v), 1.0 / 510 + 1e-12);
  }
}

TEST(Dataset, MissingFileNamesTheRow) {
  const fs::path d = temp_dir("missing");
  const Manifest m = generate_dataset(small(3), d);
  fs::remove(d / m.rows[4].image);
  try {
    load_dataset(d / "manifest.csv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.row(), 5u);
    EXPECT_NE(std::string(e.what()).find("row 5"), std::string::npos);
  }
}

TEST(Dataset, MalformedP5IsStructuredError) {
  const fs::path d = temp_dir("malformed");
  const Manifest m = generate_dataset(small(3), d);
  for (const std::string bad : {"P2\n64 64\n255\n", "P5\n64 x\n255\n", "P5\n64 64\n65535\n", "P5\n64 64\n255\nabc"}) {
    std::ofstream(d / m.rows[2].image, std::ios::binary) << bad;
    try {
      load_dataset(d / "manifest.csv");
      FAIL() << "accepted " << bad;
    } catch (const DataError& e) {
      EXPECT_EQ(e.row(), 3u) << bad;
    }
    EXPECT_THROW(read_pgm(d / m.rows[2].image), IoError);
  }
}

TEST(Dataset, BadManifestRows) {
  const fs::path d = temp_dir("badrows");
  std::ofstream(d / "m.csv") << "image,mask,label,split\na.pgm,,2,train\n";
  try {
    read_manifest(d / "m.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.row(), 1u);
  }
  std::ofstream(d / "h.csv") << "img,label\n";
  EXPECT_THROW(read_manifest(d / "h.csv"), DataError);
  std::ofstream(d / "s.csv") << "image,mask,label,split\na.pgm,,1,holdout\n";
  EXPECT_THROW(read_manifest(d / "s.csv"), DataError);
  EXPECT_THROW(read_manifest(d / "absent.csv"), IoError);
}

TEST(Batching, ShortFinalBatchIsKept) {
  auto b = batch_indices(100, 16, std::nullopt);
  ASSERT_EQ(b.size(), 7u);
  EXPECT_EQ(b.back().size(), 4u);
  auto s1 = batch_indices(100, 16, 5), s2 = batch_indices(100, 16, 5), s3 = batch_indices(100, 16, 6);
  EXPECT_EQ(s1, s2);
  EXPECT_NE(s1, s3);
  std::vector<std::size_t> flat;
  for (const auto& x : s1) flat.insert(flat.end(), x.begin(), x.end());
  std::sort(flat.begin(), flat.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(flat[i], i);
}

TEST(Batching, StreamBuildsTensors) {
  const auto samples = generate_samples(small(1));
  const Dataset d = to_dataset(samples, Split::train);
  BatchStream<float> stream(d, 10, 3);
  EXPECT_EQ(stream.batch_count(), 3u);
  std::size_t total = 0;
  while (!stream.done()) {
    Batch<float> b = stream.next();
    EXPECT_EQ(b.images.shape().c, 1);
    EXPECT_EQ(b.images.shape().h, 64);
    EXPECT_EQ(b.masks.shape(), b.images.shape());
    total += b.labels.size();
  }
  EXPECT_EQ(total, 24u);
}

TEST(SegAblation, IdentitiesAndOracle) {
  Rng rng(9);
  std::vector<float> img(50), ones(50, 1.0f), zeros(50, 0.0f), mask(50);
  for (auto& v : img) v = static_cast<float>(rng.uniform());
  for (auto& v : mask) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
  EXPECT_EQ(apply_seg_ablation(img, ones, SegAblation::type1), img);
  EXPECT_EQ(apply_seg_ablation(img, zeros, SegAblation::type1), zeros);
  EXPECT_EQ(apply_seg_ablation(img, zeros, SegAblation::type2), img);
  const auto t2 = apply_seg_ablation(img, mask, SegAblation::type2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double expect = std::clamp(static_cast<double>(img[i]) + img[i] * mask[i], 0.0, 1.0);
    EXPECT_NEAR(t2[i], expect, 1e-7);
  }
  EXPECT_THROW(apply_seg_ablation(img, std::vector<float>(3), SegAblation::type1), DimensionError);
  EXPECT_EQ(parse_seg_ablation("type2"), SegAblation::type2);
  EXPECT_THROW(parse_seg_ablation("type3"), ConfigError);
  Dataset no_masks;
  no_masks.width = no_masks.height = 1;
  no_masks.samples.push_back(Sample{{0.5f}, {}, 1, "x"});
  EXPECT_THROW(apply_seg_ablation(no_masks, SegAblation::type1), ConfigError);
}
