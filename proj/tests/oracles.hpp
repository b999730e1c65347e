// Naive scalar-loop reference implementations used by the unit tests.
// Written independently of the library kernels: no im2col, no Eigen.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "medusa/random.hpp"
#include "medusa/tensor.hpp"

namespace oracle {

using medusa::Shape;

inline std::size_t at(const Shape& s, int n, int c, int h, int w) {
  return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
}

// Same-padded (pad = k/2) or valid cross-correlation.
inline std::vector<double> conv2d(const std::vector<double>& x, Shape xs, const std::vector<double>& k, Shape ks,
                                  const std::vector<double>& b, int stride, bool same, Shape* out_shape) {
  const int pad = same ? ks.h / 2 : 0;
  const int ho = (xs.h + 2 * pad - ks.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ks.w) / stride + 1;
  Shape os{xs.n, ks.n, ho, wo};
  std::vector<double> y(os.numel(), 0.0);
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ks.n; ++o)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double acc = b[o];
          for (int c = 0; c < xs.c; ++c)
            for (int u = 0; u < ks.h; ++u)
              for (int v = 0; v < ks.w; ++v) {
                const int r = i * stride + u - pad;
                const int q = j * stride + v - pad;
                if (r < 0 || q < 0 || r >= xs.h || q >= xs.w) continue;
                acc += k[at(ks, o, c, u, v)] * x[at(xs, n, c, r, q)];
              }
          y[at(os, n, o, i, j)] = acc;
        }
  if (out_shape) *out_shape = os;
  return y;
}

// Half-pixel-center bilinear sampling, written as the textbook weighted sum.
inline std::vector<double> bilinear(const std::vector<double>& x, Shape xs, int oh, int ow) {
  Shape os{xs.n, xs.c, oh, ow};
  std::vector<double> y(os.numel());
  auto src = [](int o, int in_size, int out_size, int& i0, int& i1, double& f) {
    double p = (o + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
    p = std::clamp(p, 0.0, static_cast<double>(in_size - 1));
    i0 = static_cast<int>(std::floor(p));
    i1 = std::min(i0 + 1, in_size - 1);
    f = p - i0;
  };
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          int y0, y1, x0, x1;
          double fy, fx;
          src(i, xs.h, oh, y0, y1, fy);
          src(j, xs.w, ow, x0, x1, fx);
          y[at(os, n, c, i, j)] = (1 - fy) * (1 - fx) * x[at(xs, n, c, y0, x0)] + (1 - fy) * fx * x[at(xs, n, c, y0, x1)] +
                                  fy * (1 - fx) * x[at(xs, n, c, y1, x0)] + fy * fx * x[at(xs, n, c, y1, x1)];
        }
  return y;
}

inline std::vector<double> max_pool(const std::vector<double>& x, Shape xs, int k, int s) {
  const int ho = (xs.h - k) / s + 1, wo = (xs.w - k) / s + 1;
  Shape os{xs.n, xs.c, ho, wo};
  std::vector<double> y(os.numel());
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double m = -INFINITY;
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) m = std::max(m, x[at(xs, n, c, i * s + u, j * s + v)]);
          y[at(os, n, c, i, j)] = m;
        }
  return y;
}

inline std::vector<double> avg_pool(const std::vector<double>& x, Shape xs, int k, int s) {
  const int ho = (xs.h - k) / s + 1, wo = (xs.w - k) / s + 1;
  Shape os{xs.n, xs.c, ho, wo};
  std::vector<double> y(os.numel());
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double acc = 0;
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) acc += x[at(xs, n, c, i * s + u, j * s + v)];
          y[at(os, n, c, i, j)] = acc / (k * k);
        }
  return y;
}

// y[n][k] = b[k] + sum_d x[n][d] * W[d][k]
inline std::vector<double> dense(const std::vector<double>& x, int n, int d, const std::vector<double>& w,
                                 const std::vector<double>& b, int k) {
  std::vector<double> y(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < k; ++o) {
      double acc = b[o];
      for (int j = 0; j < d; ++j) acc += x[static_cast<std::size_t>(i) * d + j] * w[static_cast<std::size_t>(j) * k + o];
      y[static_cast<std::size_t>(i) * k + o] = acc;
    }
  return y;
}

inline double softmax_ce(const std::vector<double>& logits, int k, const std::vector<int>& labels) {
  const int n = static_cast<int>(labels.size());
  long double total = 0;
  for (int i = 0; i < n; ++i) {
    long double z = 0;
    for (int o = 0; o < k; ++o) z += std::exp(static_cast<long double>(logits[i * k + o]));
    total += std::log(z) - logits[i * k + labels[i]];
  }
  return static_cast<double>(total / n);
}

inline double bce(const std::vector<double>& logits, const std::vector<double>& target) {
  long double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double p = 1.0L / (1.0L + std::exp(-static_cast<long double>(logits[i])));
    total -= target[i] * std::log(p) + (1 - target[i]) * std::log1p(-p);
  }
  return static_cast<double>(total / logits.size());
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline std::vector<double> random_values(std::size_t n, medusa::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.uniform(lo, hi);
  return v;
}

inline medusa::Tensor<double> random_tensor(Shape s, medusa::Rng& rng, double lo = -1.0, double hi = 1.0) {
  return medusa::Tensor<double>(s, random_values(s.numel(), rng, lo, hi));
}

inline std::vector<double> values(const medusa::Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const std::vector<double>& a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
