#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medusa/attention.hpp"
#include "medusa/backbone.hpp"
#include "medusa/baselines.hpp"

namespace medusa {

enum class Variant { plain, se, medusa };

std::string_view to_string(Variant v);
/// Throws ConfigError for anything but "plain", "se" or "medusa".
Variant parse_variant(std::string_view name);

struct ModelConfig {
  BackboneConfig backbone;
  GlobalConfig global;
  int se_reduction = 4;
  bool operator==(const ModelConfig&) const = default;
};

/// Parameter groups that alternating training freezes in turn.
enum class Component { backbone, attention };

struct ForwardOptions {
  bool attention_enabled = true;
  Mode backbone_mode = Mode::eval;
  Mode attention_mode = Mode::eval;

  static ForwardOptions uniform(Mode mode, bool attention_enabled = true) {
    return ForwardOptions{attention_enabled, mode, mode};
  }
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  StageFeatures<T> stages;
  std::optional<AttentionOutputs<T>> attention;  // medusa variant only
};

/// Backbone plus the variant's attention components and every
/// normalization statistic they carry.
template <typename T>
struct ModelBundle {
  Variant variant = Variant::plain;
  ModelConfig config;
  Backbone<T> backbone;
  std::optional<GlobalAttention<T>> global;
  std::vector<ScaleHead<T>> heads;
  std::vector<SEHead<T>> se_heads;

  StateRefs<T> refs();
  /// Backbone parameters, or everything else (global module, scale heads,
  /// SE heads).
  StateRefs<T> component_refs(Component component);
  void set_frozen(Component component, bool frozen);
  Parameter<T>* find(std::string_view name);
};

/// Builds a variant. The backbone is always drawn from `seed` itself, so
/// variants sharing a seed share their initial backbone.
template <typename T>
ModelBundle<T> build_variant(Variant kind, const ModelConfig& config, std::uint64_t seed);

/// Builds the encoder-decoder for a backbone's input geometry, seeded the
/// same way build_variant seeds it.
template <typename T>
GlobalAttention<T> build_global_module(const ModelConfig& config, std::uint64_t seed);

/// Runs the global module once, then gates every stage with its scale head
/// (F_bar = A_bar * F + F). With attention disabled the gates are identity,
/// but sigma(A_G) is still computed and returned.
template <typename T>
ForwardResult<T> medusa_forward(ModelBundle<T>& bundle, const Tensor<T>& x, const ForwardOptions& options);

/// Variant-dispatching forward pass.
template <typename T>
ForwardResult<T> forward(ModelBundle<T>& bundle, const Tensor<T>& x, const ForwardOptions& options);

template <typename T>
using Snapshot = std::map<std::string, std::vector<T>>;

/// Copies of every parameter (and, optionally, running statistic) keyed by name.
template <typename T>
Snapshot<T> snapshot(ModelBundle<T>& bundle, bool include_buffers = false);
template <typename T>
Snapshot<T> snapshot(StateRefs<T> refs, bool include_buffers = false);

}  // namespace medusa
