#include "medusa/model.hpp"

namespace medusa {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::plain:
      return "plain";
    case Variant::se:
      return "se";
    case Variant::medusa:
      return "medusa";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "plain") return Variant::plain;
  if (name == "se") return Variant::se;
  if (name == "medusa") return Variant::medusa;
  throw ConfigError("unknown model variant '" + std::string(name) + "' (expected plain, se or medusa)");
}

template <typename T>
StateRefs<T> ModelBundle<T>::refs() {
  StateRefs<T> r = component_refs(Component::backbone);
  StateRefs<T> a = component_refs(Component::attention);
  r.params.insert(r.params.end(), a.params.begin(), a.params.end());
  r.norms.insert(r.norms.end(), a.norms.begin(), a.norms.end());
  return r;
}

template <typename T>
StateRefs<T> ModelBundle<T>::component_refs(Component component) {
  StateRefs<T> r;
  if (component == Component::backbone) {
    backbone.collect(r);
    return r;
  }
  if (global) global->collect(r);
  for (auto& h : heads) h.collect(r);
  for (auto& h : se_heads) h.collect(r);
  return r;
}

template <typename T>
void ModelBundle<T>::set_frozen(Component component, bool frozen) {
  for (auto* p : component_refs(component).params) p->set_frozen(frozen);
}

template <typename T>
Parameter<T>* ModelBundle<T>::find(std::string_view name) {
  for (auto* p : refs().params) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename T>
GlobalAttention<T> build_global_module(const ModelConfig& config, std::uint64_t seed) {
  const auto& b = config.backbone;
  return GlobalAttention<T>::build(b.in_channels, b.height, b.width, config.global, derive_seed(seed, 1));
}

template <typename T>
ModelBundle<T> build_variant(Variant kind, const ModelConfig& config, std::uint64_t seed) {
  ModelBundle<T> bundle;
  bundle.variant = kind;
  bundle.config = config;
  bundle.backbone = Backbone<T>::build(config.backbone, seed);
  const auto& channels = config.backbone.stage_channels;
  if (kind == Variant::medusa) {
    bundle.global = build_global_module<T>(config, seed);
    Rng rng(derive_seed(seed, 2));
    for (std::size_t j = 0; j < channels.size(); ++j) bundle.heads.emplace_back(static_cast<int>(j), channels[j], rng);
  } else if (kind == Variant::se) {
    Rng rng(derive_seed(seed, 3));
    for (std::size_t j = 0; j < channels.size(); ++j) {
      bundle.se_heads.emplace_back(static_cast<int>(j), channels[j], config.se_reduction, rng);
    }
  }
  return bundle;
}

template <typename T>
ForwardResult<T> medusa_forward(ModelBundle<T>& bundle, const Tensor<T>& x, const ForwardOptions& options) {
  const int J = bundle.backbone.stage_count();
  if (!bundle.global) throw IncompatibleError("medusa forward needs a global attention module");
  if (bundle.heads.size() != static_cast<std::size_t>(J)) {
    throw IncompatibleError("medusa forward needs " + std::to_string(J) + " scale heads, bundle has " +
                            std::to_string(bundle.heads.size()));
  }
  GlobalOutput<T> g = bundle.global->forward(x, options.attention_mode);
  AttentionOutputs<T> att;
  att.a_g = g.a_g;
  att.sigma_a_g = g.sigma_a_g;

  std::vector<StageGate<T>> gates;
  for (int j = 0; j < J; ++j) {
    if (!options.attention_enabled) {
      gates.push_back([](const Tensor<T>& f) { return f; });
      continue;
    }
    gates.push_back([&, j](const Tensor<T>& f) {
      HeadOutput<T> h = bundle.heads[static_cast<std::size_t>(j)].forward(att.sigma_a_g, f);
      Tensor<T> f_bar = apply_attention(f, h.a_bar);
      att.a_prime.push_back(h.a_prime);
      att.a_bar.push_back(h.a_bar);
      att.f_bar.push_back(f_bar);
      return f_bar;
    });
  }
  ForwardResult<T> out;
  out.stages = bundle.backbone.forward_features(x, gates, options.backbone_mode);
  out.logits = out.stages.logits;
  if (!options.attention_enabled) att.f_bar = out.stages.gated;
  out.attention = std::move(att);
  return out;
}

template <typename T>
ForwardResult<T> forward(ModelBundle<T>& bundle, const Tensor<T>& x, const ForwardOptions& options) {
  if (bundle.variant == Variant::medusa) return medusa_forward(bundle, x, options);
  std::vector<StageGate<T>> gates;
  const int J = bundle.backbone.stage_count();
  if (bundle.variant == Variant::se && options.attention_enabled) {
    if (bundle.se_heads.size() != static_cast<std::size_t>(J)) {
      throw IncompatibleError("se variant needs " + std::to_string(J) + " SE heads");
    }
    for (auto& h : bundle.se_heads) gates.push_back([&h](const Tensor<T>& f) { return h.forward(f); });
  } else {
    gates = identity_gates<T>(J);
  }
  ForwardResult<T> out;
  out.stages = bundle.backbone.forward_features(x, gates, options.backbone_mode);
  out.logits = out.stages.logits;
  return out;
}

template <typename T>
Snapshot<T> snapshot(StateRefs<T> refs, bool include_buffers) {
  Snapshot<T> s;
  for (auto* p : refs.params) {
    auto d = p->value.data();
    s[p->name] = std::vector<T>(d.begin(), d.end());
  }
  if (include_buffers) {
    for (auto* bn : refs.norms) {
      auto m = bn->state().running_mean.data();
      auto v = bn->state().running_var.data();
      s[bn->name() + ".running_mean"] = std::vector<T>(m.begin(), m.end());
      s[bn->name() + ".running_var"] = std::vector<T>(v.begin(), v.end());
    }
  }
  return s;
}

template <typename T>
Snapshot<T> snapshot(ModelBundle<T>& bundle, bool include_buffers) {
  return snapshot(bundle.refs(), include_buffers);
}

#define MEDUSA_INSTANTIATE_MODEL(T)                                                                    \
  template struct ModelBundle<T>;                                                                      \
  template ModelBundle<T> build_variant<T>(Variant, const ModelConfig&, std::uint64_t);                \
  template GlobalAttention<T> build_global_module<T>(const ModelConfig&, std::uint64_t);               \
  template ForwardResult<T> medusa_forward(ModelBundle<T>&, const Tensor<T>&, const ForwardOptions&);  \
  template ForwardResult<T> forward(ModelBundle<T>&, const Tensor<T>&, const ForwardOptions&);         \
  template Snapshot<T> snapshot(StateRefs<T>, bool);                                                   \
  template Snapshot<T> snapshot(ModelBundle<T>&, bool);

MEDUSA_INSTANTIATE_MODEL(float)
MEDUSA_INSTANTIATE_MODEL(double)

}  // namespace medusa
