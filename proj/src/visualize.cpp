#include "medusa/visualize.hpp"

#include <algorithm>
#include <cmath>

namespace medusa {

namespace {
std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }
}  // namespace

std::array<double, 3> heat_color(double value) {
  const double a = std::clamp(value, 0.0, 1.0);
  return {a, 0.0, 1.0 - a};
}

Image8 attention_overlay(std::span<const float> gray, std::span<const double> attention, int width, int height) {
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (width < 1 || height < 1 || gray.size() != n || attention.size() != n) {
    throw DimensionError("overlay needs a gray image and attention map of " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  Image8 img{width, height, 3, std::vector<std::uint8_t>(3 * n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = heat_color(attention[i]);
    for (int k = 0; k < 3; ++k) img.pixels[3 * i + k] = to_byte(0.5 * gray[i] + 0.5 * c[k]);
  }
  return img;
}

template <typename T>
Image8 channel_grid(const Tensor<T>& maps, int n) {
  const Shape& s = maps.shape();
  if (n < 0 || n >= s.n) throw DimensionError("sample index out of range for " + s.str());
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(s.c))));
  const int rows = (s.c + cols - 1) / cols;
  Image8 img;
  img.width = cols * s.w + (cols - 1);
  img.height = rows * s.h + (rows - 1);
  img.channels = 1;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  for (int c = 0; c < s.c; ++c) {
    const T* map = maps.data().data() + s.index(n, c, 0, 0);
    const auto [lo, hi] = std::minmax_element(map, map + s.plane());
    const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
    const int x0 = (c % cols) * (s.w + 1);
    const int y0 = (c / cols) * (s.h + 1);
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        const double v = range > 0.0 ? (static_cast<double>(map[y * s.w + x]) - *lo) / range : 0.0;
        img.pixels[static_cast<std::size_t>(y0 + y) * img.width + (x0 + x)] = to_byte(v);
      }
    }
  }
  return img;
}

template Image8 channel_grid<float>(const Tensor<float>&, int);
template Image8 channel_grid<double>(const Tensor<double>&, int);

}  // namespace medusa
