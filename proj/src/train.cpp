#include "medusa/train.hpp"

#include <cmath>
#include <limits>

#include "medusa/metrics.hpp"

namespace medusa {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cadence < 1) throw ConfigError("cadence must be >= 1");
}

void PretrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("pretrain lr must be positive");
  if (batch_size < 1) throw ConfigError("pretrain batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("pretrain epochs must be >= 0");
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::backbone:
      return "backbone";
    case Phase::attention:
      return "attention";
    case Phase::joint:
      return "joint";
  }
  return "unknown";
}

Phase alternating_phase(int epoch, int cadence) {
  return (epoch / cadence) % 2 == 0 ? Phase::backbone : Phase::attention;
}

namespace {

template <typename T>
bool norms_ready(const StateRefs<T>& refs) {
  for (auto* bn : refs.norms) {
    if (!bn->state().initialized) return false;
  }
  return true;
}

template <typename T>
void require_masks(const Dataset& data, const char* what) {
  if (data.empty()) throw StateError(std::string(what) + " dataset is empty");
  if (!data.has_masks()) throw StateError(std::string(what) + " dataset has no masks");
}

}  // namespace

template <typename T>
SegScore segmentation_score(GlobalAttention<T>& module, const Dataset& data, int batch_size, Mode mode) {
  if (data.empty()) throw StateError("segmentation score of an empty dataset");
  NoGradGuard<T> no_grad;
  double bce = 0.0;
  std::size_t hits = 0;
  std::size_t pixels = 0;
  for (const auto& idx : batch_indices(data.size(), batch_size, std::nullopt)) {
    Batch<T> b = make_batch<T>(data, idx);
    GlobalOutput<T> g = module.forward(b.images, mode);
    bce += static_cast<double>(bce_with_logits(g.a_g, b.masks).item()) * static_cast<double>(b.masks.numel());
    const auto s = g.sigma_a_g.data();
    const auto m = b.masks.data();
    for (std::size_t i = 0; i < s.size(); ++i) hits += ((s[i] > T(0.5)) == (m[i] > T(0.5))) ? 1 : 0;
    pixels += s.size();
  }
  return {bce / static_cast<double>(pixels), static_cast<double>(hits) / static_cast<double>(pixels)};
}

template <typename T>
PretrainResult pretrain_global(GlobalAttention<T>& module, const Dataset& train, const Dataset& val,
                               const PretrainConfig& config) {
  config.validate();
  require_masks<T>(train, "pretraining");
  PretrainResult result;
  if (config.epochs == 0) return result;

  StateRefs<T> refs;
  module.collect(refs);
  const bool val_ready = !val.empty() && val.has_masks();
  if (val_ready) {
    if (norms_ready(refs)) {
      result.initial = segmentation_score(module, val, config.batch_size);
    } else {
      // No running statistics yet: score with batch statistics, then put
      // the buffers back.
      std::vector<BatchNormState<T>> saved;
      for (auto* bn : refs.norms) {
        BatchNormState<T> s = bn->state();
        s.running_mean = s.running_mean.clone();
        s.running_var = s.running_var.clone();
        saved.push_back(s);
      }
      result.initial = segmentation_score(module, val, config.batch_size, Mode::train);
      for (std::size_t i = 0; i < saved.size(); ++i) refs.norms[i]->state() = saved[i];
    }
  }

  AdamState<T> adam(config.lr);
  const std::uint64_t order_seed = derive_seed(config.seed, 0x5e9);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    BatchStream<T> stream(train, config.batch_size, derive_seed(order_seed, static_cast<std::uint64_t>(epoch)));
    while (!stream.done()) {
      Batch<T> b = stream.next();
      Tape<T> tape;
      GlobalOutput<T> g = module.forward(b.images, Mode::train);
      Tensor<T> loss = bce_with_logits(g.a_g, b.masks);
      tape.backward(loss);
      adam.step(refs.params);
      zero_grad<T>(refs.params);
      loss_sum += static_cast<double>(loss.item()) * b.labels.size();
    }
    PretrainEpoch e;
    e.epoch = epoch + 1;
    e.train_loss = loss_sum / static_cast<double>(train.size());
    if (val_ready) {
      e.val = segmentation_score(module, val, config.batch_size);
    }
    result.log.push_back(e);
  }
  return result;
}

template <typename T>
double validation_accuracy(ModelBundle<T>& bundle, const Dataset& val, bool attention_enabled, int batch_size) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard<T> no_grad;
  std::size_t correct = 0;
  const ForwardOptions fo = ForwardOptions::uniform(Mode::eval, attention_enabled);
  for (const auto& idx : batch_indices(val.size(), batch_size, std::nullopt)) {
    Batch<T> b = make_batch<T>(val, idx);
    ForwardResult<T> r = forward(bundle, b.images, fo);
    const int k = r.logits.shape().c;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto row = r.logits.data().subspan(i * static_cast<std::size_t>(k), static_cast<std::size_t>(k));
      correct += argmax_class(row) == b.labels[i] ? 1 : 0;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(val.size());
}

namespace {

// One pass over the training split with the current freeze state.
template <typename T>
double run_epoch(ModelBundle<T>& bundle, AdamState<T>& adam, const Dataset& train, const TrainConfig& config,
                 const ForwardOptions& fo, int epoch) {
  StateRefs<T> refs = bundle.refs();
  const std::uint64_t order_seed = derive_seed(config.seed, 0x7a1);
  BatchStream<T> stream(train, config.batch_size, derive_seed(order_seed, static_cast<std::uint64_t>(epoch)));
  double loss_sum = 0.0;
  while (!stream.done()) {
    Batch<T> b = stream.next();
    Tape<T> tape;
    ForwardResult<T> r = forward(bundle, b.images, fo);
    Tensor<T> loss = softmax_cross_entropy(r.logits, std::span<const int>(b.labels));
    tape.backward(loss);
    adam.step(refs.params);
    zero_grad<T>(refs.params);
    loss_sum += static_cast<double>(loss.item()) * b.labels.size();
  }
  return loss_sum / static_cast<double>(train.size());
}

template <typename T>
void check_data(ModelBundle<T>& bundle, const Dataset& train, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw StateError("training dataset is empty");
  const auto& bc = bundle.config.backbone;
  if (train.width != bc.width || train.height != bc.height) {
    throw DimensionError("training images do not match the model input geometry");
  }
}

}  // namespace

template <typename T>
TrainResult alternating_train(ModelBundle<T>& bundle, AdamState<T>& adam, const Dataset& train, const Dataset& val,
                              const TrainConfig& config, const EpochCallback<T>& on_epoch) {
  check_data(bundle, train, config);
  if (bundle.variant == Variant::plain) throw IncompatibleError("alternating training needs attention components");
  TrainResult result;
  if (config.cadence >= config.epochs) {
    result.warnings.push_back("cadence " + std::to_string(config.cadence) + " >= epochs " +
                              std::to_string(config.epochs) + ": alternating training degenerates to a single phase");
  }
  adam.lr = config.lr;
  const bool attention_trainable = config.attention_enabled || bundle.variant == Variant::se;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Phase phase = alternating_phase(epoch, config.cadence);
    const bool train_backbone = phase == Phase::backbone;
    const bool train_attention = phase == Phase::attention && attention_trainable;
    bundle.set_frozen(Component::backbone, !train_backbone);
    bundle.set_frozen(Component::attention, !train_attention);

    ForwardOptions fo;
    fo.attention_enabled = config.attention_enabled;
    fo.backbone_mode = train_backbone || !norms_ready(bundle.component_refs(Component::backbone)) ? Mode::train : Mode::eval;
    fo.attention_mode =
        train_attention || !norms_ready(bundle.component_refs(Component::attention)) ? Mode::train : Mode::eval;

    EpochLog log;
    log.epoch = epoch + 1;
    log.phase = phase;
    if (train_backbone || train_attention) {
      log.loss = run_epoch(bundle, adam, train, config, fo, epoch);
    } else {
      // attention phase with attention disabled: nothing to update
      log.loss = std::numeric_limits<double>::quiet_NaN();
    }
    bundle.set_frozen(Component::backbone, false);
    bundle.set_frozen(Component::attention, false);
    log.val_accuracy = validation_accuracy(bundle, val, config.attention_enabled, config.batch_size);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, bundle, adam);
  }
  return result;
}

template <typename T>
TrainResult train_joint(ModelBundle<T>& bundle, AdamState<T>& adam, const Dataset& train, const Dataset& val,
                        const TrainConfig& config, const EpochCallback<T>& on_epoch) {
  check_data(bundle, train, config);
  TrainResult result;
  adam.lr = config.lr;
  const bool freeze_attention = bundle.variant == Variant::medusa && !config.attention_enabled;
  bundle.set_frozen(Component::backbone, false);
  bundle.set_frozen(Component::attention, freeze_attention);
  ForwardOptions fo;
  fo.attention_enabled = config.attention_enabled;
  fo.backbone_mode = Mode::train;
  fo.attention_mode = Mode::train;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    log.phase = Phase::joint;
    log.loss = run_epoch(bundle, adam, train, config, fo, epoch);
    log.val_accuracy = validation_accuracy(bundle, val, config.attention_enabled, config.batch_size);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, bundle, adam);
  }
  bundle.set_frozen(Component::attention, false);
  return result;
}

#define MEDUSA_INSTANTIATE_TRAIN(T)                                                                                   \
  template SegScore segmentation_score<T>(GlobalAttention<T>&, const Dataset&, int, Mode);                               \
  template PretrainResult pretrain_global<T>(GlobalAttention<T>&, const Dataset&, const Dataset&,                    \
                                             const PretrainConfig&);                                                 \
  template double validation_accuracy<T>(ModelBundle<T>&, const Dataset&, bool, int);                                \
  template TrainResult alternating_train<T>(ModelBundle<T>&, AdamState<T>&, const Dataset&, const Dataset&,          \
                                            const TrainConfig&, const EpochCallback<T>&);                            \
  template TrainResult train_joint<T>(ModelBundle<T>&, AdamState<T>&, const Dataset&, const Dataset&,                \
                                      const TrainConfig&, const EpochCallback<T>&);

MEDUSA_INSTANTIATE_TRAIN(float)
MEDUSA_INSTANTIATE_TRAIN(double)

}  // namespace medusa
