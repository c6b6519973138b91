#pragma once

#include <doctest.h>

// Test-only helpers: seeded generators, tiny models and brute-force oracles that do not
// share code paths with the library kernels.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ldaprune/dataset.hpp"
#include "ldaprune/error.hpp"
#include "ldaprune/model.hpp"
#include "ldaprune/tensor.hpp"

namespace testsupport {

using ldaprune::Shape;
using ldaprune::Tensor;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, float lo = -1.0f,
                            float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(shape);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

// Six nested loops, double accumulation, explicit bounds checks.
inline std::vector<double> naive_conv(const Tensor& in, const Tensor& k,
                                      const std::vector<float>& bias, int stride, int pad,
                                      int& out_h, int& out_w) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const int O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  out_h = (H + 2 * pad - KH) / stride + 1;
  out_w = (W + 2 * pad - KW) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(O) * out_h * out_w);
  for (int o = 0; o < O; ++o)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < KH; ++i)
            for (int j = 0; j < KW; ++j) {
              const int iy = y * stride + i - pad, ix = x * stride + j - pad;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              s += static_cast<double>(in[(static_cast<std::size_t>(c) * H + iy) * W + ix]) *
                   k[((static_cast<std::size_t>(o) * C + c) * KH + i) * KW + j];
            }
        out[(static_cast<std::size_t>(o) * out_h + y) * out_w + x] = s;
      }
  return out;
}

// Small VGG-style net on 1x8x8 inputs: conv-relu-pool, conv-relu-pool, dense, softmax.
inline ldaprune::ModelDescriptor tiny_net(std::uint64_t seed, int c1 = 3, int c2 = 4) {
  using ldaprune::LayerSpec;
  std::vector<LayerSpec> specs = {
      LayerSpec::make_conv(c1, 1, 3, 1, 1), LayerSpec::make_relu(), LayerSpec::make_maxpool(2, 2),
      LayerSpec::make_conv(c2, c1, 3, 1, 1), LayerSpec::make_relu(), LayerSpec::make_maxpool(2, 2),
      LayerSpec::make_flatten(), LayerSpec::make_dense(2, c2 * 2 * 2), LayerSpec::make_softmax()};
  return ldaprune::build_model({1, 8, 8}, specs, seed);
}

inline std::vector<ldaprune::LabeledImage> random_images(const Shape& shape, std::size_t n,
                                                         std::uint64_t seed) {
  std::vector<ldaprune::LabeledImage> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({random_tensor(shape, seed + i, 0.0f, 1.0f), static_cast<int>(i % 2),
                   "img-" + std::to_string(i)});
  return out;
}

// Relative difference with a floor on the denominator.
inline double rel_diff(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Kind of the ldaprune::Error thrown by `f`; fails the test if nothing is thrown.
template <typename F>
ldaprune::ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const ldaprune::Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ldaprune::ErrorKind::Io;
}

}  // namespace testsupport
