#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "medusa/data.hpp"
#include "medusa/model.hpp"
#include "medusa/optim.hpp"

namespace medusa {

/// Learning rate used by the original full-scale protocol.
inline constexpr double kPaperLearningRate = 0.00008;

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 16;
  int epochs = 20;
  int cadence = 1;  // phase length in epochs for alternating training
  std::uint64_t seed = 0;
  bool attention_enabled = true;

  /// Throws ConfigError for non-positive values or cadence < 1.
  void validate() const;
};

struct PretrainConfig {
  double lr = 1e-3;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SegScore {
  double bce = 0.0;             // mean per-pixel BCE between sigma(A_G) and the mask
  double pixel_accuracy = 0.0;  // sigma(A_G) > 0.5 agreeing with the mask
};

struct PretrainEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  SegScore val;
};

struct PretrainResult {
  SegScore initial;  // validation score before the first update
  std::vector<PretrainEpoch> log;
};

/// Segmentation score of the module. Eval mode needs running statistics;
/// train mode normalizes with batch statistics and updates them.
template <typename T>
SegScore segmentation_score(GlobalAttention<T>& module, const Dataset& data, int batch_size, Mode mode = Mode::eval);

/// Minimizes the BCE between sigma(A_G) and the organ masks. Zero epochs
/// leave the module untouched. Throws StateError for empty or mask-less data.
template <typename T>
PretrainResult pretrain_global(GlobalAttention<T>& module, const Dataset& train, const Dataset& val,
                               const PretrainConfig& config);

enum class Phase { backbone, attention, joint };
std::string_view to_string(Phase p);

struct EpochLog {
  int epoch = 0;  // 1-based
  Phase phase = Phase::joint;
  double loss = 0.0;  // mean training loss over the epoch's samples
  double val_accuracy = 0.0;  // percent; NaN without validation data
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<std::string> warnings;
};

template <typename T>
using EpochCallback = std::function<void(const EpochLog&, ModelBundle<T>&, const AdamState<T>&)>;

/// Phase of a 0-based epoch under alternating training: the backbone phase
/// first, switching every `cadence` epochs.
Phase alternating_phase(int epoch, int cadence);

/// Alternating schedule. The backbone phase freezes the global module and
/// heads; the attention phase freezes the backbone. The loss still flows
/// through the frozen side, and a frozen component whose normalization
/// statistics exist runs in eval mode so its buffers stay fixed too.
/// Leaves every parameter unfrozen on return.
template <typename T>
TrainResult alternating_train(ModelBundle<T>& bundle, AdamState<T>& adam, const Dataset& train, const Dataset& val,
                              const TrainConfig& config, const EpochCallback<T>& on_epoch = {});

/// Every parameter trained every epoch (plain and SE baselines).
template <typename T>
TrainResult train_joint(ModelBundle<T>& bundle, AdamState<T>& adam, const Dataset& train, const Dataset& val,
                        const TrainConfig& config, const EpochCallback<T>& on_epoch = {});

/// Percent of correctly classified samples, eval mode.
template <typename T>
double validation_accuracy(ModelBundle<T>& bundle, const Dataset& val, bool attention_enabled, int batch_size);

}  // namespace medusa
