#include "medusa/backbone.hpp"

#include <string>

namespace medusa {

void BackboneConfig::validate() const {
  if (stage_count < 1) throw ConfigError("stage_count must be >= 1");
  if (stage_channels.size() != static_cast<std::size_t>(stage_count)) {
    throw ConfigError("stage_channels has " + std::to_string(stage_channels.size()) + " entries, expected " +
                      std::to_string(stage_count));
  }
  for (int c : stage_channels) {
    if (c < 1) throw ConfigError("stage channel counts must be >= 1");
  }
  if (in_channels < 1 || height < 1 || width < 1) throw ConfigError("input extents must be >= 1");
  const int factor = 1 << (stage_count - 1);
  if (height % factor != 0 || width % factor != 0) {
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by " +
                      std::to_string(factor) + " for " + std::to_string(stage_count) + " stages");
  }
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

template <typename T>
ResidualBlock<T>::ResidualBlock(const std::string& prefix, int cin, int cout, int stride, Rng& rng)
    : conv1_(prefix + ".conv1", cin, cout, 3, stride, rng),
      conv2_(prefix + ".conv2", cout, cout, 3, 1, rng),
      bn1_(prefix + ".bn1", cout),
      bn2_(prefix + ".bn2", cout),
      project_(stride != 1 || cin != cout) {
  if (project_) {
    proj_ = Conv2d<T>(prefix + ".proj", cin, cout, 1, stride, rng);
    proj_bn_ = BatchNorm<T>(prefix + ".proj_bn", cout);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x, Mode mode) {
  Tensor<T> y = relu(bn1_(conv1_(x), mode));
  y = bn2_(conv2_(y), mode);
  const Tensor<T> shortcut = project_ ? proj_bn_(proj_(x), mode) : x;
  return relu(add(y, shortcut));
}

template <typename T>
void ResidualBlock<T>::collect(StateRefs<T>& refs) {
  conv1_.collect(refs);
  bn1_.collect(refs);
  conv2_.collect(refs);
  bn2_.collect(refs);
  if (project_) {
    proj_.collect(refs);
    proj_bn_.collect(refs);
  }
}

template <typename T>
Backbone<T> Backbone<T>::build(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Backbone b;
  b.config_ = config;
  const int c0 = config.stage_channels.front();
  b.stem_ = ConvBnRelu<T>("backbone.stem", config.in_channels, c0, 1, rng);
  int cin = c0;
  for (int j = 0; j < config.stage_count; ++j) {
    const int cout = config.stage_channels[static_cast<std::size_t>(j)];
    std::vector<ResidualBlock<T>> blocks;
    for (int bi = 0; bi < config.blocks_per_stage; ++bi) {
      const int stride = (j > 0 && bi == 0) ? 2 : 1;
      blocks.emplace_back("backbone.stage" + std::to_string(j + 1) + ".block" + std::to_string(bi), cin, cout, stride,
                          rng);
      cin = cout;
    }
    b.stages_.push_back(std::move(blocks));
  }
  b.head_ = Linear<T>("backbone.head", cin, config.num_classes, rng);
  return b;
}

template <typename T>
Tensor<T> Backbone<T>::run_stage(int j, const Tensor<T>& input, Mode mode) {
  if (j < 0 || j >= config_.stage_count) throw ConfigError("stage index " + std::to_string(j) + " out of range");
  Tensor<T> x = input;
  if (j == 0) {
    const Shape expect = config_.input_shape(input.shape().n);
    if (input.shape() != expect) {
      throw DimensionError("backbone expects input " + expect.str() + ", got " + input.shape().str());
    }
    x = stem_(x, mode);
  }
  for (auto& block : stages_[static_cast<std::size_t>(j)]) x = block(x, mode);
  return x;
}

template <typename T>
Tensor<T> Backbone<T>::classify(const Tensor<T>& last) {
  return head_(pool2d(last, PoolKind::global_avg));
}

template <typename T>
StageFeatures<T> Backbone<T>::forward_features(const Tensor<T>& x, std::span<const StageGate<T>> gates, Mode mode) {
  if (gates.size() != static_cast<std::size_t>(config_.stage_count)) {
    throw ConfigError("got " + std::to_string(gates.size()) + " stage gates for " +
                      std::to_string(config_.stage_count) + " stages");
  }
  StageFeatures<T> out;
  Tensor<T> current = x;
  for (int j = 0; j < config_.stage_count; ++j) {
    Tensor<T> f = run_stage(j, current, mode);
    Tensor<T> g = gates[static_cast<std::size_t>(j)](f);
    if (g.shape() != f.shape()) {
      throw DimensionError("gate for stage " + std::to_string(j + 1) + " changed shape " + f.shape().str() + " -> " +
                           g.shape().str());
    }
    out.features.push_back(f);
    out.gated.push_back(g);
    current = g;
  }
  out.logits = classify(current);
  return out;
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& x, Mode mode) {
  const auto gates = identity_gates<T>(config_.stage_count);
  return forward_features(x, gates, mode).logits;
}

template <typename T>
void Backbone<T>::collect(StateRefs<T>& refs) {
  stem_.collect(refs);
  for (auto& stage : stages_)
    for (auto& block : stage) block.collect(refs);
  head_.collect(refs);
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace medusa
