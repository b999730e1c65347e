#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "medusa/netpbm.hpp"
#include "medusa/tensor.hpp"

namespace medusa {

/// Linear blue (0) to red (1) colormap, components in [0, 1].
std::array<double, 3> heat_color(double value);

/// RGB overlay 0.5 * gray + 0.5 * heat_color(attention) per pixel. Both
/// fields are row-major width x height with values in [0, 1].
Image8 attention_overlay(std::span<const float> gray, std::span<const double> attention, int width, int height);

/// Tiles every channel of sample `n` of an N x C x H x W tensor into a
/// grayscale grid, each map min-max normalized on its own (a constant map
/// renders black). Tiles are separated by a one-pixel gap.
template <typename T>
Image8 channel_grid(const Tensor<T>& maps, int n);

}  // namespace medusa
