#include "medusa/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace medusa {

namespace {
thread_local DecisionTrace* active_trace = nullptr;
}  // namespace

DecisionTrace::DecisionTrace() : previous_(active_trace) { active_trace = this; }
DecisionTrace::~DecisionTrace() { active_trace = previous_; }
DecisionTrace* DecisionTrace::active() { return active_trace; }

void DecisionTrace::mix(std::uint64_t value) {
  digest_ ^= value + 0x9e3779b97f4a7c15ULL + (digest_ << 6) + (digest_ >> 2);
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int cin, h, w, k, stride, pad, ho, wo;
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
  std::size_t rows() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(ho) * wo; }
};

template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* cols) {
  for (int ci = 0; ci < g.cin; ++ci) {
    const T* plane = src + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* line = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? line[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dst) {
  for (int ci = 0; ci < g.cin; ++ci) {
    T* plane = dst + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* line = plane + static_cast<std::size_t>(iy) * g.w;
          const T* srow = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) line[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  T s;
  if (x >= T(0)) {
    s = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    s = e / (T(1) + e);
  }
  // Keep the result strictly inside (0, 1) even where the logistic
  // function saturates in floating point.
  constexpr T lo = std::numeric_limits<T>::denorm_min();
  const T hi = std::nextafter(T(1), T(0));
  return std::clamp(s, lo, hi);
}

struct AxisSample {
  int i0, i1;
  double frac;
};

std::vector<AxisSample> half_pixel_axis(int in, int out) {
  std::vector<AxisSample> axis(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    double frac = src - i0;
    if (i1 == i0) frac = 0.0;
    axis[static_cast<std::size_t>(o)] = {i0, i1, frac};
  }
  return axis;
}

// Strides for broadcasting `s` up to `out`; a zero stride repeats the element.
std::array<std::size_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t sw = 1;
  const std::size_t sh = static_cast<std::size_t>(s.w);
  const std::size_t sc = sh * s.h;
  const std::size_t sn = sc * s.c;
  return {s.n == out.n ? sn : 0, s.c == out.c ? sc : 0, s.h == out.h ? sh : 0, s.w == out.w ? sw : 0};
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto pick = [&](int x, int y) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw DimensionError("cannot broadcast " + a.str() + " with " + b.str());
  };
  return Shape{pick(a.n, b.n), pick(a.c, b.c), pick(a.h, b.h), pick(a.w, b.w)};
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::array<std::size_t, 4>& sa, const std::array<std::size_t, 4>& sb,
                        F&& f) {
  std::size_t o = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int h = 0; h < out.h; ++h) {
        const std::size_t ba = n * sa[0] + c * sa[1] + h * sa[2];
        const std::size_t bb = n * sb[0] + c * sb[1] + h * sb[2];
        for (int w = 0; w < out.w; ++w, ++o) f(o, ba + w * sa[3], bb + w * sb[3]);
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride, Padding padding) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
  if (ks.h != ks.w) throw DimensionError("conv2d kernel must be square, got " + ks.str());
  if (ks.c != is.c) {
    throw DimensionError("conv2d kernel expects " + std::to_string(ks.c) + " input channels, input " + is.str());
  }
  if (bias.numel() != static_cast<std::size_t>(ks.n)) {
    throw DimensionError("conv2d bias needs " + std::to_string(ks.n) + " values");
  }
  const int k = ks.h;
  if (padding == Padding::same && k % 2 == 0) throw ConfigError("same padding needs an odd kernel size");
  const int pad = padding == Padding::same ? k / 2 : 0;
  const int ho = (is.h + 2 * pad - k) / stride + 1;
  const int wo = (is.w + 2 * pad - k) / stride + 1;
  if (is.h + 2 * pad < k || is.w + 2 * pad < k) throw DimensionError("conv2d kernel larger than input " + is.str());

  const ConvGeometry g{is.c, is.h, is.w, k, stride, pad, ho, wo};
  const int cout = ks.n;
  Tensor<T> out(Shape{is.n, cout, ho, wo});
  const std::size_t in_stride = static_cast<std::size_t>(is.c) * is.h * is.w;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * g.cols();

  ConstMapMat<T> wmat(kernel.data().data(), cout, static_cast<Eigen::Index>(g.rows()));
  Buffer<T> cols(g.direct() ? 0 : g.rows() * g.cols());
  for (int n = 0; n < is.n; ++n) {
    const T* src = input.data().data() + n * in_stride;
    const T* colp = src;
    if (!g.direct()) {
      im2col(src, g, cols.data());
      colp = cols.data();
    }
    ConstMapMat<T> cmat(colp, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    MapMat<T> omat(out.mutable_data().data() + n * out_stride, cout, static_cast<Eigen::Index>(g.cols()));
    omat.noalias() = wmat * cmat;
    for (int co = 0; co < cout; ++co) omat.row(co).array() += bias[static_cast<std::size_t>(co)];
  }
  check_finite(out, "conv2d");

  if (should_record({&input, &kernel, &bias})) {
    auto in_node = input.node();
    auto k_node = kernel.node();
    auto b_node = bias.node();
    Tape<T>::active()->record(
        "conv2d", out, {input, kernel, bias}, [in_node, k_node, b_node, g, cout, in_stride, out_stride](
                                                  std::span<const T> gout) {
          const int batch = in_node->shape.n;
          const auto krows = static_cast<Eigen::Index>(g.rows());
          const auto ncols = static_cast<Eigen::Index>(g.cols());
          if (b_node->requires_grad) {
            std::vector<T> gb(static_cast<std::size_t>(cout), T(0));
            for (int n = 0; n < batch; ++n) {
              ConstMapMat<T> gm(gout.data() + n * out_stride, cout, ncols);
              for (int co = 0; co < cout; ++co) gb[static_cast<std::size_t>(co)] += gm.row(co).sum();
            }
            accumulate_grad<T>(*b_node, gb);
          }
          const bool need_k = k_node->requires_grad;
          const bool need_in = in_node->requires_grad;
          if (!need_k && !need_in) return;
          RowMat<T> gk = RowMat<T>::Zero(cout, krows);
          Buffer<T> gin(need_in ? in_node->data.size() : 0, T(0));
          Buffer<T> cols(g.direct() ? 0 : g.rows() * g.cols());
          RowMat<T> gcols;
          ConstMapMat<T> wmat(k_node->data.data(), cout, krows);
          for (int n = 0; n < batch; ++n) {
            ConstMapMat<T> gm(gout.data() + n * out_stride, cout, ncols);
            if (need_k) {
              const T* src = in_node->data.data() + n * in_stride;
              const T* colp = src;
              if (!g.direct()) {
                im2col(src, g, cols.data());
                colp = cols.data();
              }
              ConstMapMat<T> cmat(colp, krows, ncols);
              gk.noalias() += gm * cmat.transpose();
            }
            if (need_in) {
              if (g.direct()) {
                MapMat<T> gi(gin.data() + n * in_stride, krows, ncols);
                gi.noalias() = wmat.transpose() * gm;
              } else {
                gcols.noalias() = wmat.transpose() * gm;
                col2im(gcols.data(), g, gin.data() + n * in_stride);
              }
            }
          }
          if (need_k) accumulate_grad<T>(*k_node, std::span<const T>(gk.data(), static_cast<std::size_t>(gk.size())));
          if (need_in) accumulate_grad<T>(*in_node, gin);
        });
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize target extents must be >= 1");
  const Shape& is = input.shape();
  const Shape os{is.n, is.c, out_h, out_w};
  const auto ys = half_pixel_axis(is.h, out_h);
  const auto xs = half_pixel_axis(is.w, out_w);
  Tensor<T> out(os);
  auto dst = out.mutable_data();
  const auto src = input.data();
  std::size_t o = 0;
  for (int p = 0; p < is.n * is.c; ++p) {
    const T* plane = src.data() + static_cast<std::size_t>(p) * is.plane();
    for (int y = 0; y < out_h; ++y) {
      const AxisSample& sy = ys[static_cast<std::size_t>(y)];
      const T* r0 = plane + static_cast<std::size_t>(sy.i0) * is.w;
      const T* r1 = plane + static_cast<std::size_t>(sy.i1) * is.w;
      const T fy = static_cast<T>(sy.frac);
      for (int x = 0; x < out_w; ++x, ++o) {
        const AxisSample& sx = xs[static_cast<std::size_t>(x)];
        const T fx = static_cast<T>(sx.frac);
        const T a = r0[sx.i0], b = r0[sx.i1], c = r1[sx.i0], d = r1[sx.i1];
        const T top = a + fx * (b - a);
        const T bottom = c + fx * (d - c);
        const T v = top + fy * (bottom - top);
        const T lo = std::min(std::min(a, b), std::min(c, d));
        const T hi = std::max(std::max(a, b), std::max(c, d));
        dst[o] = std::clamp(v, lo, hi);
      }
    }
  }
  check_finite(out, "bilinear_resize");
  if (should_record({&input})) {
    auto in_node = input.node();
    Tape<T>::active()->record("bilinear_resize", out, {input}, [in_node, ys, xs, os](std::span<const T> gout) {
      const Shape& is = in_node->shape;
      std::vector<T> gin(in_node->data.size(), T(0));
      std::size_t o = 0;
      for (int p = 0; p < os.n * os.c; ++p) {
        T* plane = gin.data() + static_cast<std::size_t>(p) * is.plane();
        for (int y = 0; y < os.h; ++y) {
          const AxisSample& sy = ys[static_cast<std::size_t>(y)];
          const T fy = static_cast<T>(sy.frac);
          T* r0 = plane + static_cast<std::size_t>(sy.i0) * is.w;
          T* r1 = plane + static_cast<std::size_t>(sy.i1) * is.w;
          for (int x = 0; x < os.w; ++x, ++o) {
            const AxisSample& sx = xs[static_cast<std::size_t>(x)];
            const T fx = static_cast<T>(sx.frac);
            const T g = gout[o];
            r0[sx.i0] += g * (T(1) - fy) * (T(1) - fx);
            r0[sx.i1] += g * (T(1) - fy) * fx;
            r1[sx.i0] += g * fy * (T(1) - fx);
            r1[sx.i1] += g * fy * fx;
          }
        }
      }
      accumulate_grad<T>(*in_node, gin);
    });
  }
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  Tensor<T> out(input.shape());
  auto dst = out.mutable_data();
  const auto src = input.data();
  if (kind == Activation::sigmoid) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid_scalar(src[i]);
  } else {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] < T(0) ? T(0) : src[i];
    if (auto* trace = DecisionTrace::active()) {
      std::uint64_t bits = 0;
      for (std::size_t i = 0; i < src.size(); ++i) {
        bits = (bits << 1) | (src[i] > T(0) ? 1u : 0u);
        if (i % 64 == 63) trace->mix(bits);
      }
      trace->mix(bits);
    }
  }
  check_finite(out, "activation");
  if (should_record({&input})) {
    auto in_node = input.node();
    Buffer<T> saved = kind == Activation::sigmoid ? out.node()->data : Buffer<T>{};
    Tape<T>::active()->record(kind == Activation::sigmoid ? "sigmoid" : "relu", out, {input},
                              [in_node, kind, saved = std::move(saved)](std::span<const T> gout) {
                                if (!in_node->requires_grad) return;
                                std::vector<T> gin(gout.size());
                                if (kind == Activation::sigmoid) {
                                  for (std::size_t i = 0; i < gout.size(); ++i)
                                    gin[i] = gout[i] * saved[i] * (T(1) - saved[i]);
                                } else {
                                  for (std::size_t i = 0; i < gout.size(); ++i)
                                    gin[i] = in_node->data[i] > T(0) ? gout[i] : T(0);
                                }
                                accumulate_grad<T>(*in_node, gin);
                              });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                      Mode mode) {
  const Shape& s = input.shape();
  const auto C = static_cast<std::size_t>(s.c);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.numel() != C) {
    throw DimensionError("batchnorm2d parameters do not match " + std::to_string(C) + " channels");
  }
  if (mode == Mode::eval && !state.initialized) {
    throw StateError("batchnorm2d eval mode before running statistics were populated");
  }
  const std::size_t plane = s.plane();
  const std::size_t count = static_cast<std::size_t>(s.n) * plane;
  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = input.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = input.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      auto rm = state.running_mean.mutable_data();
      auto rv = state.running_var.mutable_data();
      rm[c] = static_cast<T>((1.0 - state.momentum) * rm[c] + state.momentum * mu);
      rv[c] = static_cast<T>((1.0 - state.momentum) * rv[c] + state.momentum * unbiased);
    }
    state.initialized = true;
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps));
    }
  }
  Tensor<T> out(s);
  std::vector<T> xhat(input.numel());
  {
    auto dst = out.mutable_data();
    const auto src = input.data();
    for (int n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T xh = (src[base + i] - mean[c]) * inv_std[c];
          xhat[base + i] = xh;
          dst[base + i] = gamma[c] * xh + beta[c];
        }
      }
  }
  check_finite(out, "batchnorm2d");
  if (should_record({&input, &gamma, &beta})) {
    auto in_node = input.node();
    auto g_node = gamma.node();
    auto b_node = beta.node();
    Tape<T>::active()->record(
        "batchnorm2d", out, {input, gamma, beta},
        [in_node, g_node, b_node, xhat = std::move(xhat), inv_std, mode, plane, count](std::span<const T> gout) {
          const Shape& s = in_node->shape;
          const auto C = static_cast<std::size_t>(s.c);
          std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
          for (int n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                sum_g[c] += gout[base + i];
                sum_gx[c] += static_cast<double>(gout[base + i]) * xhat[base + i];
              }
            }
          if (g_node->requires_grad) {
            std::vector<T> gg(C);
            for (std::size_t c = 0; c < C; ++c) gg[c] = static_cast<T>(sum_gx[c]);
            accumulate_grad<T>(*g_node, gg);
          }
          if (b_node->requires_grad) {
            std::vector<T> gb(C);
            for (std::size_t c = 0; c < C; ++c) gb[c] = static_cast<T>(sum_g[c]);
            accumulate_grad<T>(*b_node, gb);
          }
          if (!in_node->requires_grad) return;
          std::vector<T> gin(gout.size());
          const double m = static_cast<double>(count);
          for (int n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
              const T scale = g_node->data[c] * inv_std[c];
              if (mode == Mode::eval) {
                for (std::size_t i = 0; i < plane; ++i) gin[base + i] = scale * gout[base + i];
              } else {
                const T mg = static_cast<T>(sum_g[c] / m);
                const T mgx = static_cast<T>(sum_gx[c] / m);
                for (std::size_t i = 0; i < plane; ++i)
                  gin[base + i] = scale * (gout[base + i] - mg - xhat[base + i] * mgx);
              }
            }
          accumulate_grad<T>(*in_node, gin);
        });
  }
  return out;
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, int k, int stride) {
  const Shape& s = input.shape();
  if (kind == PoolKind::global_avg) {
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = s.plane();
    for (std::size_t p = 0; p < out.numel(); ++p) {
      T acc = T(0);
      for (std::size_t i = 0; i < plane; ++i) acc += input[p * plane + i];
      out.mutable_data()[p] = acc / static_cast<T>(plane);
    }
    check_finite(out, "pool2d");
    if (should_record({&input})) {
      auto in_node = input.node();
      Tape<T>::active()->record("global_avg_pool", out, {input}, [in_node, plane](std::span<const T> gout) {
        std::vector<T> gin(in_node->data.size());
        for (std::size_t p = 0; p < gout.size(); ++p) {
          const T g = gout[p] / static_cast<T>(plane);
          std::fill(gin.begin() + static_cast<std::ptrdiff_t>(p * plane),
                    gin.begin() + static_cast<std::ptrdiff_t>((p + 1) * plane), g);
        }
        accumulate_grad<T>(*in_node, gin);
      });
    }
    return out;
  }
  if (k < 1 || stride < 1) throw ConfigError("pool2d window and stride must be >= 1");
  if (k > s.h || k > s.w) throw ConfigError("pool2d window " + std::to_string(k) + " larger than input " + s.str());
  const int ho = (s.h - k) / stride + 1;
  const int wo = (s.w - k) / stride + 1;
  Tensor<T> out(Shape{s.n, s.c, ho, wo});
  std::vector<std::size_t> argmax(kind == PoolKind::max ? out.numel() : 0);
  auto dst = out.mutable_data();
  std::size_t o = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * s.plane();
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x, ++o) {
        if (kind == PoolKind::max) {
          std::size_t best = base + static_cast<std::size_t>(y * stride) * s.w + x * stride;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const std::size_t idx = base + static_cast<std::size_t>(y * stride + dy) * s.w + (x * stride + dx);
              if (input[idx] > input[best]) best = idx;
            }
          argmax[o] = best;
          dst[o] = input[best];
        } else {
          T acc = T(0);
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              acc += input[base + static_cast<std::size_t>(y * stride + dy) * s.w + (x * stride + dx)];
          dst[o] = acc / static_cast<T>(k * k);
        }
      }
  }
  check_finite(out, "pool2d");
  if (auto* trace = DecisionTrace::active(); trace != nullptr && kind == PoolKind::max) {
    for (std::size_t a : argmax) trace->mix(a);
  }
  if (should_record({&input})) {
    auto in_node = input.node();
    const Shape os = out.shape();
    Tape<T>::active()->record(kind == PoolKind::max ? "max_pool" : "avg_pool", out, {input},
                              [in_node, kind, k, stride, os, argmax = std::move(argmax)](std::span<const T> gout) {
                                const Shape& s = in_node->shape;
                                std::vector<T> gin(in_node->data.size(), T(0));
                                if (kind == PoolKind::max) {
                                  for (std::size_t o = 0; o < gout.size(); ++o) gin[argmax[o]] += gout[o];
                                } else {
                                  const T inv = T(1) / static_cast<T>(k * k);
                                  std::size_t o = 0;
                                  for (int p = 0; p < os.n * os.c; ++p) {
                                    const std::size_t base = static_cast<std::size_t>(p) * s.plane();
                                    for (int y = 0; y < os.h; ++y)
                                      for (int x = 0; x < os.w; ++x, ++o)
                                        for (int dy = 0; dy < k; ++dy)
                                          for (int dx = 0; dx < k; ++dx)
                                            gin[base + static_cast<std::size_t>(y * stride + dy) * s.w +
                                                (x * stride + dx)] += gout[o] * inv;
                                  }
                                }
                                accumulate_grad<T>(*in_node, gin);
                              });
  }
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const int n = input.shape().n;
  const auto d = static_cast<Eigen::Index>(input.numel() / static_cast<std::size_t>(n));
  const Shape& ws = weight.shape();
  if (ws.n != 1 || ws.c != 1 || ws.h != d) {
    throw DimensionError("dense weight " + ws.str() + " does not accept " + std::to_string(d) + " features");
  }
  const int kdim = ws.w;
  if (bias.numel() != static_cast<std::size_t>(kdim)) throw DimensionError("dense bias length mismatch");
  Tensor<T> out(Shape{n, kdim, 1, 1});
  ConstMapMat<T> x(input.data().data(), n, d);
  ConstMapMat<T> wm(weight.data().data(), d, kdim);
  MapMat<T> y(out.mutable_data().data(), n, kdim);
  y.noalias() = x * wm;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < kdim; ++j) y(i, j) += bias[static_cast<std::size_t>(j)];
  check_finite(out, "dense");
  if (should_record({&input, &weight, &bias})) {
    auto in_node = input.node();
    auto w_node = weight.node();
    auto b_node = bias.node();
    Tape<T>::active()->record("dense", out, {input, weight, bias},
                              [in_node, w_node, b_node, n, d, kdim](std::span<const T> gout) {
                                ConstMapMat<T> g(gout.data(), n, kdim);
                                if (b_node->requires_grad) {
                                  std::vector<T> gb(static_cast<std::size_t>(kdim), T(0));
                                  for (int i = 0; i < n; ++i)
                                    for (int j = 0; j < kdim; ++j) gb[static_cast<std::size_t>(j)] += g(i, j);
                                  accumulate_grad<T>(*b_node, gb);
                                }
                                if (w_node->requires_grad) {
                                  ConstMapMat<T> x(in_node->data.data(), n, d);
                                  RowMat<T> gw = x.transpose() * g;
                                  accumulate_grad<T>(*w_node, std::span<const T>(gw.data(), gw.size()));
                                }
                                if (in_node->requires_grad) {
                                  ConstMapMat<T> wm(w_node->data.data(), d, kdim);
                                  RowMat<T> gx = g * wm.transpose();
                                  accumulate_grad<T>(*in_node, std::span<const T>(gx.data(), gx.size()));
                                }
                              });
  }
  return out;
}

template <typename T>
Tensor<T> combine(const Tensor<T>& a, const Tensor<T>& b, CombineMode mode) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (mode == CombineMode::concat_channels) {
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
      throw DimensionError("concat_channels needs equal N, H, W: " + as.str() + " vs " + bs.str());
    }
    Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
    const std::size_t ca = static_cast<std::size_t>(as.c) * as.plane();
    const std::size_t cb = static_cast<std::size_t>(bs.c) * bs.plane();
    auto dst = out.mutable_data();
    for (int n = 0; n < as.n; ++n) {
      std::copy_n(a.data().data() + n * ca, ca, dst.data() + n * (ca + cb));
      std::copy_n(b.data().data() + n * cb, cb, dst.data() + n * (ca + cb) + ca);
    }
    if (should_record({&a, &b})) {
      auto an = a.node();
      auto bn = b.node();
      Tape<T>::active()->record("concat_channels", out, {a, b}, [an, bn, ca, cb](std::span<const T> gout) {
        const int batch = an->shape.n;
        if (an->requires_grad) {
          std::vector<T> g(an->data.size());
          for (int n = 0; n < batch; ++n) std::copy_n(gout.data() + n * (ca + cb), ca, g.data() + n * ca);
          accumulate_grad<T>(*an, g);
        }
        if (bn->requires_grad) {
          std::vector<T> g(bn->data.size());
          for (int n = 0; n < batch; ++n) std::copy_n(gout.data() + n * (ca + cb) + ca, cb, g.data() + n * cb);
          accumulate_grad<T>(*bn, g);
        }
      });
    }
    return out;
  }

  const Shape os = broadcast_shape(as, bs);
  const auto sa = broadcast_strides(as, os);
  const auto sb = broadcast_strides(bs, os);
  Tensor<T> out(os);
  auto dst = out.mutable_data();
  const auto da = a.data();
  const auto db = b.data();
  if (mode == CombineMode::mul) {
    for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) { dst[o] = da[ia] * db[ib]; });
  } else {
    for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) { dst[o] = da[ia] + db[ib]; });
  }
  check_finite(out, mode == CombineMode::mul ? "mul" : "add");
  if (should_record({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Tape<T>::active()->record(mode == CombineMode::mul ? "mul" : "add", out, {a, b},
                              [an, bn, os, sa, sb, mode](std::span<const T> gout) {
                                std::vector<T> ga(an->requires_grad ? an->data.size() : 0, T(0));
                                std::vector<T> gb(bn->requires_grad ? bn->data.size() : 0, T(0));
                                const bool need_a = an->requires_grad;
                                const bool need_b = bn->requires_grad;
                                for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                  if (mode == CombineMode::mul) {
                                    if (need_a) ga[ia] += gout[o] * bn->data[ib];
                                    if (need_b) gb[ib] += gout[o] * an->data[ia];
                                  } else {
                                    if (need_a) ga[ia] += gout[o];
                                    if (need_b) gb[ib] += gout[o];
                                  }
                                });
                                if (need_a) accumulate_grad<T>(*an, ga);
                                if (need_b) accumulate_grad<T>(*bn, gb);
                              });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  T acc = T(0);
  for (T v : input.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  check_finite(out, "sum");
  if (should_record({&input})) {
    auto in_node = input.node();
    Tape<T>::active()->record("sum", out, {input}, [in_node](std::span<const T> gout) {
      std::vector<T> gin(in_node->data.size(), gout[0]);
      accumulate_grad<T>(*in_node, gin);
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const int n = logits.shape().n;
  const auto k = static_cast<int>(logits.numel() / static_cast<std::size_t>(n));
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  std::vector<T> probs(logits.numel());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      throw DimensionError("class index " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* row = logits.data().data() + static_cast<std::size_t>(i) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    total += static_cast<double>(lse - row[label]);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(i) * k + j] = std::exp(row[j] - lse);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / n));
  check_finite(out, "softmax_cross_entropy");
  if (should_record({&logits})) {
    auto in_node = logits.node();
    std::vector<int> labs(labels.begin(), labels.end());
    Tape<T>::active()->record("softmax_cross_entropy", out, {logits},
                              [in_node, probs = std::move(probs), labs = std::move(labs), n, k](std::span<const T> gout) {
                                std::vector<T> gin(probs);
                                for (int i = 0; i < n; ++i) gin[static_cast<std::size_t>(i) * k + labs[i]] -= T(1);
                                const T scale = gout[0] / static_cast<T>(n);
                                for (T& v : gin) v *= scale;
                                accumulate_grad<T>(*in_node, gin);
                              });
  }
  return out;
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
  if (logits.shape() != target.shape()) {
    throw DimensionError("bce_with_logits shape mismatch: " + logits.shape().str() + " vs " + target.shape().str());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const T z = logits[i];
    const T t = target[i];
    total += static_cast<double>(std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z))));
  }
  const auto count = static_cast<double>(logits.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / count));
  check_finite(out, "bce_with_logits");
  if (should_record({&logits, &target})) {
    auto zn = logits.node();
    auto tn = target.node();
    Tape<T>::active()->record("bce_with_logits", out, {logits, target}, [zn, tn, count](std::span<const T> gout) {
      const T scale = gout[0] / static_cast<T>(count);
      if (zn->requires_grad) {
        std::vector<T> g(zn->data.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = (sigmoid_scalar(zn->data[i]) - tn->data[i]) * scale;
        accumulate_grad<T>(*zn, g);
      }
      if (tn->requires_grad) {
        std::vector<T> g(tn->data.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = -zn->data[i] * scale;
        accumulate_grad<T>(*tn, g);
      }
    });
  }
  return out;
}

#define MEDUSA_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, Padding);              \
  template Tensor<T> bilinear_resize(const Tensor<T>&, int, int);                                              \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                                 \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, Mode); \
  template Tensor<T> pool2d(const Tensor<T>&, PoolKind, int, int);                                             \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> combine(const Tensor<T>&, const Tensor<T>&, CombineMode);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                                    \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);                           \
  template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);

MEDUSA_INSTANTIATE_OPS(float)
MEDUSA_INSTANTIATE_OPS(double)

}  // namespace medusa
