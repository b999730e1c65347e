#include "medusa/attention.hpp"

#include <string>

namespace medusa {

template <typename T>
GlobalAttention<T> GlobalAttention<T>::build(int in_channels, int height, int width, const GlobalConfig& config,
                                             std::uint64_t seed) {
  if (config.depth < 1) throw ConfigError("global module depth must be >= 1");
  if (config.base_channels < 1) throw ConfigError("global module base_channels must be >= 1");
  const int factor = 1 << config.depth;
  if (height % factor != 0 || width % factor != 0) {
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by 2^" +
                      std::to_string(config.depth));
  }
  Rng rng(seed);
  GlobalAttention g;
  g.config_ = config;
  g.in_channels_ = in_channels;
  g.height_ = height;
  g.width_ = width;
  auto width_at = [&](int level) { return config.base_channels << level; };
  int cin = in_channels;
  for (int l = 0; l < config.depth; ++l) {
    const std::string p = "global.down" + std::to_string(l);
    g.down_.push_back({ConvBnRelu<T>(p + ".a", cin, width_at(l), 1, rng),
                       ConvBnRelu<T>(p + ".b", width_at(l), width_at(l), 1, rng)});
    cin = width_at(l);
  }
  g.bottleneck_ = {ConvBnRelu<T>("global.bottleneck.a", cin, width_at(config.depth), 1, rng),
                   ConvBnRelu<T>("global.bottleneck.b", width_at(config.depth), width_at(config.depth), 1, rng)};
  g.up_.resize(static_cast<std::size_t>(config.depth));
  for (int l = config.depth - 1; l >= 0; --l) {
    const std::string p = "global.up" + std::to_string(l);
    auto& level = g.up_[static_cast<std::size_t>(l)];
    level.up = ConvBnRelu<T>(p + ".up", width_at(l + 1), width_at(l), 1, rng);
    level.fuse = {ConvBnRelu<T>(p + ".a", 2 * width_at(l), width_at(l), 1, rng),
                  ConvBnRelu<T>(p + ".b", width_at(l), width_at(l), 1, rng)};
  }
  g.out_ = Conv2d<T>("global.out", width_at(0), 1, 1, 1, rng);
  return g;
}

template <typename T>
GlobalOutput<T> GlobalAttention<T>::forward(const Tensor<T>& x, Mode mode) {
  const Shape expect = input_shape(x.shape().n);
  if (x.shape() != expect) {
    throw DimensionError("global module expects " + expect.str() + ", got " + x.shape().str());
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (auto& level : down_) {
    h = level(h, mode);
    skips.push_back(h);
    h = pool2d(h, PoolKind::max, 2, 2);
  }
  GlobalOutput<T> out;
  h = bottleneck_(h, mode);
  out.latent = h;
  for (int l = config_.depth - 1; l >= 0; --l) {
    const Tensor<T>& skip = skips[static_cast<std::size_t>(l)];
    auto& level = up_[static_cast<std::size_t>(l)];
    h = level.up(bilinear_resize(h, skip.shape().h, skip.shape().w), mode);
    h = level.fuse(concat_channels(h, skip), mode);
  }
  out.a_g = out_(h);
  out.sigma_a_g = sigmoid(out.a_g);
  return out;
}

template <typename T>
void GlobalAttention<T>::collect(StateRefs<T>& refs) {
  for (auto& level : down_) {
    level.first.collect(refs);
    level.second.collect(refs);
  }
  bottleneck_.first.collect(refs);
  bottleneck_.second.collect(refs);
  for (int l = config_.depth - 1; l >= 0; --l) {
    auto& level = up_[static_cast<std::size_t>(l)];
    level.up.collect(refs);
    level.fuse.first.collect(refs);
    level.fuse.second.collect(refs);
  }
  out_.collect(refs);
}

template <typename T>
ScaleHead<T>::ScaleHead(int index, int channels, Rng& rng)
    : index_(index), conv_("heads.stage" + std::to_string(index + 1), channels + 1, channels, 3, 1, rng) {}

template <typename T>
HeadOutput<T> ScaleHead<T>::forward(const Tensor<T>& sigma_a_g, const Tensor<T>& f_j) const {
  if (sigma_a_g.shape().c != 1) throw DimensionError("global attention map must have one channel");
  if (f_j.shape().c + 1 != conv_.in_channels()) {
    throw DimensionError("head " + std::to_string(index_ + 1) + " expects " + std::to_string(conv_.in_channels() - 1) +
                         " feature channels, got " + f_j.shape().str());
  }
  if (sigma_a_g.shape().n != f_j.shape().n) throw DimensionError("attention map and features differ in batch size");
  HeadOutput<T> out;
  out.a_prime = bilinear_resize(sigma_a_g, f_j.shape().h, f_j.shape().w);
  out.a_bar = sigmoid(conv_(concat_channels(out.a_prime, f_j)));
  return out;
}

template <typename T>
Tensor<T> apply_attention(const Tensor<T>& f_j, const Tensor<T>& a_bar_j) {
  if (f_j.shape() != a_bar_j.shape()) {
    throw DimensionError("attention map " + a_bar_j.shape().str() + " does not match features " + f_j.shape().str());
  }
  return add(mul(a_bar_j, f_j), f_j);
}

template class GlobalAttention<float>;
template class GlobalAttention<double>;
template class ScaleHead<float>;
template class ScaleHead<double>;
template Tensor<float> apply_attention(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> apply_attention(const Tensor<double>&, const Tensor<double>&);

}  // namespace medusa
