#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medusa/data.hpp"
#include "medusa/metrics.hpp"
#include "medusa/model.hpp"

namespace medusa {

struct Prediction {
  std::string id;
  int label = 0;
  int predicted = 0;
  std::vector<double> logits;
};

struct EvalReport {
  std::string variant;
  bool attention_present = false;  // the bundle carries an attention mechanism
  bool attention_enabled = false;  // and it was active during evaluation
  std::string seg_ablation = "none";
  ConfusionMatrix matrix;
  ClassificationMetrics metrics;
  // Medusa bundles evaluated on masked data only.
  std::optional<double> mean_attention_mass;
  std::optional<double> mean_mask_fraction;
  std::vector<Prediction> predictions;

  /// key,value summary rows.
  std::string summary_csv() const;
  /// id,label,predicted,logit0,logit1,... rows.
  std::string predictions_csv() const;
  std::string table() const;
  /// Writes report.csv, predictions.csv and report.txt into `dir`.
  void write(const std::filesystem::path& dir) const;
};

struct EvalOptions {
  bool attention_enabled = true;
  int batch_size = 16;
};

/// Eval-mode forward over the dataset in file order. Throws DimensionError
/// when the images do not match the bundle's input geometry and StateError
/// for an empty dataset.
template <typename T>
EvalReport evaluate(ModelBundle<T>& bundle, const Dataset& data, const EvalOptions& options = {});

}  // namespace medusa
