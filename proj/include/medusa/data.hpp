#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medusa/tensor.hpp"

namespace medusa {

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

/// Synthetic analog of a chest radiograph task: an organ region (two
/// ellipses), lesion blobs inside it for positive samples, and distractors
/// (bright bars and lesion-like blobs) strictly outside it for either class.
struct SyntheticConfig {
  int width = 64;
  int height = 64;
  int train_count = 1600;
  int val_count = 200;
  int test_count = 200;
  double positive_fraction = 0.5;
  int lesion_count_min = 1;
  int lesion_count_max = 3;
  double lesion_radius_min = 2.0;
  double lesion_radius_max = 6.0;
  double lesion_contrast_min = 0.08;  // fraction of the [0, 1] range
  double lesion_contrast_max = 0.25;
  double distractor_probability = 0.3;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  /// Throws ConfigError for empty ranges or probabilities outside [0, 1].
  void validate() const;
  int count(Split s) const;
};

struct SyntheticSample {
  std::vector<double> image;  // pre-quantization values in [0, 1]
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> lesions;      // 1 where a lesion was painted
  std::vector<std::uint8_t> distractors;  // 1 where a distractor was painted
  int label = 0;
  int lesion_count = 0;
  Split split = Split::train;
  int index = 0;  // position within its split
  int width = 0;
  int height = 0;
};

/// Every split in train, val, test order. Sample i of a split is drawn from
/// its own sub-generator, so results do not depend on generation order.
std::vector<SyntheticSample> generate_samples(const SyntheticConfig& config);
SyntheticSample generate_sample(const SyntheticConfig& config, Split split, int index, int label);

std::uint8_t quantize(double value);

struct ManifestRow {
  std::string image;
  std::string mask;  // empty when the dataset carries no masks
  int label = 0;
  Split split = Split::train;
};

struct Manifest {
  std::filesystem::path directory;  // paths in rows are relative to it
  std::vector<ManifestRow> rows;
};

/// Writes images/ and masks/ as P5 plus manifest.csv into out_dir.
Manifest generate_dataset(const SyntheticConfig& config, const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
/// Parses manifest.csv (header image,mask,label,split). Throws DataError
/// naming the offending row.
Manifest read_manifest(const std::filesystem::path& path);

struct Sample {
  std::vector<float> image;  // byte / 255
  std::vector<float> mask;   // empty if the manifest has no mask
  int label = 0;
  std::string id;
};

struct Dataset {
  int width = 0;
  int height = 0;
  std::vector<Sample> samples;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  bool has_masks() const;
};

/// Loads the rows of `split` (all rows when nullopt). Missing files and
/// malformed rasters raise DataError with the 1-based data row number.
Dataset load_dataset(const std::filesystem::path& manifest_path, std::optional<Split> split = std::nullopt);
/// In-memory equivalent of generate_dataset followed by load_dataset.
Dataset to_dataset(const std::vector<SyntheticSample>& samples, std::optional<Split> split = std::nullopt);

/// Index batches over n samples, shuffled by `seed` unless it is nullopt.
/// The final short batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, int batch_size, std::optional<std::uint64_t> seed);

template <typename T>
struct Batch {
  Tensor<T> images;  // N x 1 x H x W
  Tensor<T> masks;   // same shape; zeros if the dataset has no masks
  std::vector<int> labels;
};

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Seeded-shuffle batch iterator over a dataset.
template <typename T>
class BatchStream {
 public:
  BatchStream(const Dataset& data, int batch_size, std::optional<std::uint64_t> seed)
      : data_(data), order_(batch_indices(data.size(), batch_size, seed)) {}

  std::size_t batch_count() const { return order_.size(); }
  bool done() const { return next_ >= order_.size(); }
  Batch<T> next() { return make_batch<T>(data_, order_.at(next_++)); }

 private:
  const Dataset& data_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t next_ = 0;
};

enum class SegAblation { type1, type2 };
SegAblation parse_seg_ablation(std::string_view name);

/// type1: image * mask. type2: clamp(image + image * mask, 0, 1).
std::vector<float> apply_seg_ablation(std::span<const float> image, std::span<const float> mask, SegAblation kind);
/// Applies the ablation to every sample. Throws ConfigError without masks.
Dataset apply_seg_ablation(const Dataset& data, SegAblation kind);

}  // namespace medusa
