#include "medusa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "medusa/netpbm.hpp"
#include "medusa/random.hpp"

namespace medusa {
namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

void SyntheticConfig::validate() const {
  if (width < 8 || height < 8) throw ConfigError("synthetic images must be at least 8x8");
  if (train_count < 0 || val_count < 0 || test_count < 0) throw ConfigError("sample counts must be >= 0");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) throw ConfigError("positive_fraction outside [0, 1]");
  if (!(distractor_probability >= 0.0 && distractor_probability <= 1.0)) {
    throw ConfigError("distractor_probability outside [0, 1]");
  }
  if (lesion_count_min < 1 || lesion_count_max < lesion_count_min) throw ConfigError("empty lesion count range");
  if (lesion_radius_min <= 0.0 || lesion_radius_max < lesion_radius_min) throw ConfigError("empty lesion radius range");
  if (lesion_contrast_min < 0.0 || lesion_contrast_max < lesion_contrast_min || lesion_contrast_max > 1.0) {
    throw ConfigError("empty lesion contrast range");
  }
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
}

int SyntheticConfig::count(Split s) const {
  switch (s) {
    case Split::train:
      return train_count;
    case Split::val:
      return val_count;
    case Split::test:
      return test_count;
  }
  return 0;
}

std::uint8_t quantize(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

namespace {

struct Canvas {
  int w, h;
  std::vector<double>& image;
  const std::vector<std::uint8_t>& mask;

  std::size_t at(int x, int y) const { return static_cast<std::size_t>(y) * w + x; }
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < w && y < h; }
};

// Pixels whose center lies within `radius` of (cx, cy).
template <typename F>
void for_disc(int w, int h, double cx, double cy, double radius, F&& f) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (d < radius) f(x, y, d);
    }
}

// Finds a disc center whose pixels all lie in (want_mask == 1) or all
// outside (want_mask == 0) the organ mask and fully within the image.
std::optional<std::pair<double, double>> place_disc(const Canvas& c, double radius, std::uint8_t want_mask, Rng& rng) {
  for (int attempt = 0; attempt < 400; ++attempt) {
    const double cx = rng.uniform(radius, c.w - radius);
    const double cy = rng.uniform(radius, c.h - radius);
    bool ok = true;
    for_disc(c.w, c.h, cx, cy, radius, [&](int x, int y, double) {
      if (c.mask[c.at(x, y)] != want_mask) ok = false;
    });
    if (ok) return std::make_pair(cx, cy);
  }
  return std::nullopt;
}

void paint_disc(Canvas& c, double cx, double cy, double radius, double contrast, std::vector<std::uint8_t>& marks) {
  for_disc(c.w, c.h, cx, cy, radius, [&](int x, int y, double d) {
    c.image[c.at(x, y)] += contrast * std::min(1.0, radius - d);
    marks[c.at(x, y)] = 1;
  });
}

void paint_bar(Canvas& c, Rng& rng, std::vector<std::uint8_t>& marks) {
  const double x0 = rng.uniform(0.0, c.w);
  const double y0 = rng.uniform(0.0, c.h);
  const double angle = rng.uniform(0.0, 3.14159265358979);
  const double length = rng.uniform(0.15, 0.45) * c.w;
  const double intensity = rng.uniform(0.25, 0.4);
  const int steps = static_cast<int>(length * 2.0);
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / std::max(1, steps);
    const int x = static_cast<int>(std::floor(x0 + t * length * std::cos(angle)));
    const int y = static_cast<int>(std::floor(y0 + t * length * std::sin(angle)));
    if (!c.inside(x, y) || c.mask[c.at(x, y)] != 0 || marks[c.at(x, y)]) continue;
    c.image[c.at(x, y)] += intensity;
    marks[c.at(x, y)] = 1;
  }
}

std::uint64_t sample_stream(Split split, int index) {
  return (static_cast<std::uint64_t>(split) + 1) << 32 | static_cast<std::uint32_t>(index);
}

}  // namespace

SyntheticSample generate_sample(const SyntheticConfig& config, Split split, int index, int label) {
  const int w = config.width;
  const int h = config.height;
  Rng rng(derive_seed(config.seed, sample_stream(split, index)));
  SyntheticSample s;
  s.label = label;
  s.split = split;
  s.index = index;
  s.width = w;
  s.height = h;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  s.image.assign(n, 0.0);
  s.mask.assign(n, 0);
  s.lesions.assign(n, 0);
  s.distractors.assign(n, 0);

  // Two elliptical lobes.
  struct Ellipse {
    double cx, cy, rx, ry;
  };
  Ellipse lobes[2];
  for (int side = 0; side < 2; ++side) {
    lobes[side] = {(side == 0 ? 0.30 : 0.70) * w + rng.uniform(-0.03, 0.03) * w, 0.52 * h + rng.uniform(-0.04, 0.04) * h,
                   rng.uniform(0.14, 0.18) * w, rng.uniform(0.27, 0.33) * h};
  }
  const double organ_level = rng.uniform(0.22, 0.32);
  const double body_level = rng.uniform(0.55, 0.65);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      bool in = false;
      for (const auto& e : lobes) {
        const double dx = (x + 0.5 - e.cx) / e.rx;
        const double dy = (y + 0.5 - e.cy) / e.ry;
        if (dx * dx + dy * dy < 1.0) in = true;
      }
      s.mask[i] = in ? 1 : 0;
      const double u = (x + 0.5) / w - 0.5;
      const double v = (y + 0.5) / h;
      s.image[i] = in ? organ_level + 0.08 * v : body_level - 0.25 * u * u + 0.05 * v;
    }

  Canvas canvas{w, h, s.image, s.mask};
  if (label == 1) {
    const int count = rng.uniform_int(config.lesion_count_min, config.lesion_count_max);
    for (int k = 0; k < count; ++k) {
      double radius = rng.uniform(config.lesion_radius_min, config.lesion_radius_max);
      const double contrast = rng.uniform(config.lesion_contrast_min, config.lesion_contrast_max);
      auto center = place_disc(canvas, radius, 1, rng);
      while (!center && radius > 1.0) {
        radius *= 0.8;
        center = place_disc(canvas, radius, 1, rng);
      }
      if (!center) continue;
      paint_disc(canvas, center->first, center->second, radius, contrast, s.lesions);
      ++s.lesion_count;
    }
  }
  if (rng.bernoulli(config.distractor_probability)) {
    if (rng.bernoulli(0.5)) {
      paint_bar(canvas, rng, s.distractors);
    } else {
      const double radius = rng.uniform(config.lesion_radius_min, config.lesion_radius_max);
      const double contrast = rng.uniform(config.lesion_contrast_min, config.lesion_contrast_max);
      if (auto center = place_disc(canvas, radius, 0, rng)) {
        paint_disc(canvas, center->first, center->second, radius, contrast, s.distractors);
      }
    }
  }
  for (double& v : s.image) v = std::clamp(v + config.noise_sigma * rng.normal(), 0.0, 1.0);
  return s;
}

std::vector<SyntheticSample> generate_samples(const SyntheticConfig& config) {
  config.validate();
  std::vector<SyntheticSample> out;
  for (Split split : {Split::train, Split::val, Split::test}) {
    const int n = config.count(split);
    const auto positives = static_cast<int>(std::llround(n * config.positive_fraction));
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    std::fill(labels.begin(), labels.begin() + positives, 1);
    Rng rng(derive_seed(config.seed, 0xD1CEull + static_cast<std::uint64_t>(split)));
    rng.shuffle(labels);
    for (int i = 0; i < n; ++i) out.push_back(generate_sample(config, split, i, labels[static_cast<std::size_t>(i)]));
  }
  return out;
}

namespace {

std::string sample_name(const SyntheticSample& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05d.pgm", std::string(to_string(s.split)).c_str(), s.index);
  return buf;
}

}  // namespace

Manifest generate_dataset(const SyntheticConfig& config, const fs::path& out_dir) {
  const auto samples = generate_samples(config);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
  Manifest manifest;
  manifest.directory = out_dir;
  for (const auto& s : samples) {
    const std::string name = sample_name(s);
    Image8 image{config.width, config.height, 1, {}};
    image.pixels.reserve(s.image.size());
    for (double v : s.image) image.pixels.push_back(quantize(v));
    write_pgm(out_dir / "images" / name, image);
    Image8 mask{config.width, config.height, 1, {}};
    for (std::uint8_t m : s.mask) mask.pixels.push_back(m ? 255 : 0);
    write_pgm(out_dir / "masks" / name, mask);
    manifest.rows.push_back({"images/" + name, "masks/" + name, s.label, s.split});
  }
  write_manifest(out_dir / "manifest.csv", manifest.rows);
  return manifest;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "image,mask,label,split\n";
  for (const auto& r : rows) out << r.image << ',' << r.mask << ',' << r.label << ',' << to_string(r.split) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest manifest;
  manifest.directory = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw DataError(0, "empty manifest " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image,mask,label,split") throw DataError(0, "expected header 'image,mask,label,split', got '" + line + "'");
  std::set<std::string> seen;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 4) throw DataError(row, "expected 4 fields, got " + std::to_string(fields.size()));
    ManifestRow r;
    r.image = fields[0];
    r.mask = fields[1];
    if (fields[2] == "0" || fields[2] == "1") {
      r.label = fields[2][0] - '0';
    } else {
      throw DataError(row, "label must be 0 or 1, got '" + fields[2] + "'");
    }
    try {
      r.split = parse_split(fields[3]);
    } catch (const ConfigError& e) {
      throw DataError(row, e.what());
    }
    if (!seen.insert(r.image).second) throw DataError(row, "image path '" + r.image + "' listed twice");
    manifest.rows.push_back(std::move(r));
  }
  return manifest;
}

bool Dataset::has_masks() const {
  return !samples.empty() && std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return !s.mask.empty(); });
}

Dataset load_dataset(const fs::path& manifest_path, std::optional<Split> split) {
  const Manifest manifest = read_manifest(manifest_path);
  Dataset data;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const ManifestRow& r = manifest.rows[i];
    if (split && r.split != *split) continue;
    const std::size_t row = i + 1;
    Sample s;
    s.label = r.label;
    s.id = r.image;
    Image8 image;
    try {
      const fs::path p = manifest.directory / r.image;
      if (!fs::exists(p)) throw IoError("missing image file " + p.string());
      image = read_pgm(p);
    } catch (const IoError& e) {
      throw DataError(row, e.what());
    }
    if (data.samples.empty()) {
      data.width = image.width;
      data.height = image.height;
    } else if (image.width != data.width || image.height != data.height) {
      throw DataError(row, "image extents differ from the first row");
    }
    s.image.reserve(image.pixels.size());
    for (std::uint8_t b : image.pixels) s.image.push_back(static_cast<float>(b) / 255.0f);
    if (!r.mask.empty()) {
      Image8 mask;
      try {
        const fs::path p = manifest.directory / r.mask;
        if (!fs::exists(p)) throw IoError("missing mask file " + p.string());
        mask = read_pgm(p);
      } catch (const IoError& e) {
        throw DataError(row, e.what());
      }
      if (mask.width != image.width || mask.height != image.height) throw DataError(row, "mask extents differ from image");
      s.mask.reserve(mask.pixels.size());
      for (std::uint8_t b : mask.pixels) s.mask.push_back(b >= 128 ? 1.0f : 0.0f);
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

Dataset to_dataset(const std::vector<SyntheticSample>& samples, std::optional<Split> split) {
  Dataset data;
  for (const auto& src : samples) {
    if (split && src.split != *split) continue;
    Sample s;
    s.label = src.label;
    s.id = sample_name(src);
    for (double v : src.image) s.image.push_back(static_cast<float>(quantize(v)) / 255.0f);
    for (std::uint8_t m : src.mask) s.mask.push_back(m ? 1.0f : 0.0f);
    data.samples.push_back(std::move(s));
  }
  if (!samples.empty()) {
    data.width = samples.front().width;
    data.height = samples.front().height;
  }
  return data;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, int batch_size, std::optional<std::uint64_t> seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (seed) {
    Rng rng(*seed);
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("empty batch");
  const Shape shape{static_cast<int>(indices.size()), 1, data.height, data.width};
  Batch<T> b{Tensor<T>(shape), Tensor<T>(shape), {}};
  auto img = b.images.mutable_data();
  auto msk = b.masks.mutable_data();
  const std::size_t plane = shape.plane();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = data.samples.at(indices[k]);
    if (s.image.size() != plane) throw DimensionError("sample '" + s.id + "' has the wrong pixel count");
    std::copy(s.image.begin(), s.image.end(), img.begin() + static_cast<std::ptrdiff_t>(k * plane));
    if (!s.mask.empty()) std::copy(s.mask.begin(), s.mask.end(), msk.begin() + static_cast<std::ptrdiff_t>(k * plane));
    b.labels.push_back(s.label);
  }
  return b;
}

template Batch<float> make_batch<float>(const Dataset&, std::span<const std::size_t>);
template Batch<double> make_batch<double>(const Dataset&, std::span<const std::size_t>);

SegAblation parse_seg_ablation(std::string_view name) {
  if (name == "type1") return SegAblation::type1;
  if (name == "type2") return SegAblation::type2;
  throw ConfigError("unknown segmentation ablation '" + std::string(name) + "' (expected type1 or type2)");
}

std::vector<float> apply_seg_ablation(std::span<const float> image, std::span<const float> mask, SegAblation kind) {
  if (image.size() != mask.size()) throw DimensionError("image and mask differ in size");
  std::vector<float> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float segmented = image[i] * mask[i];
    out[i] = kind == SegAblation::type1 ? segmented : std::clamp(image[i] + segmented, 0.0f, 1.0f);
  }
  return out;
}

Dataset apply_seg_ablation(const Dataset& data, SegAblation kind) {
  if (!data.has_masks()) throw ConfigError("segmentation ablation needs masks for every sample");
  Dataset out = data;
  for (auto& s : out.samples) s.image = apply_seg_ablation(s.image, s.mask, kind);
  return out;
}

}  // namespace medusa
