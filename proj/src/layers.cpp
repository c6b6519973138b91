#include "ldaprune/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ldaprune/error.hpp"

namespace ldaprune {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind kind : {LayerKind::Conv, LayerKind::Relu, LayerKind::MaxPool, LayerKind::Flatten,
                         LayerKind::Dense, LayerKind::Softmax})
    if (to_string(kind) == name) return kind;
  fail(ErrorKind::Format, "unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::make_conv(int out_channels, int in_channels, int kernel, int stride, int pad) {
  LayerSpec spec;
  spec.kind = LayerKind::Conv;
  spec.conv = {out_channels, in_channels, kernel, kernel, stride, pad};
  return spec;
}

LayerSpec LayerSpec::make_maxpool(int window, int stride) {
  LayerSpec spec;
  spec.kind = LayerKind::MaxPool;
  spec.pool = {window, stride};
  return spec;
}

LayerSpec LayerSpec::make_dense(int out_dim, int in_dim) {
  LayerSpec spec;
  spec.kind = LayerKind::Dense;
  spec.dense = {out_dim, in_dim};
  return spec;
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::Conv)
    return {conv.out_channels, conv.in_channels, conv.kernel_h, conv.kernel_w};
  if (kind == LayerKind::Dense) return {dense.out_dim, dense.in_dim};
  return {};
}

Shape LayerSpec::bias_shape() const {
  if (kind == LayerKind::Conv) return {conv.out_channels};
  if (kind == LayerKind::Dense) return {dense.out_dim};
  return {};
}

int conv_output_extent(int input, int kernel, int stride, int pad) {
  require(stride >= 1, ErrorKind::Config, "stride must be >= 1");
  require(pad >= 0, ErrorKind::Config, "padding must be >= 0");
  const int span = input + 2 * pad - kernel;
  require(span >= 0, ErrorKind::Config,
          "kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
              std::to_string(input + 2 * pad));
  return span / stride + 1;
}

Shape LayerSpec::output_shape(const Shape& input) const {
  switch (kind) {
    case LayerKind::Conv: {
      require(input.size() == 3, ErrorKind::Dimension,
              "conv expects a (C,H,W) input, got " + shape_to_string(input));
      require(input[0] == conv.in_channels, ErrorKind::Dimension,
              "conv expects " + std::to_string(conv.in_channels) + " input channels, got " +
                  std::to_string(input[0]));
      return {conv.out_channels, conv_output_extent(input[1], conv.kernel_h, conv.stride, conv.pad),
              conv_output_extent(input[2], conv.kernel_w, conv.stride, conv.pad)};
    }
    case LayerKind::MaxPool: {
      require(input.size() == 3, ErrorKind::Dimension,
              "maxpool expects a (C,H,W) input, got " + shape_to_string(input));
      require(pool.window >= 1 && pool.stride >= 1, ErrorKind::Config,
              "maxpool window and stride must be >= 1");
      require(pool.window <= input[1] && pool.window <= input[2], ErrorKind::Config,
              "maxpool window " + std::to_string(pool.window) + " exceeds input " +
                  shape_to_string(input));
      return {input[0], (input[1] - pool.window) / pool.stride + 1,
              (input[2] - pool.window) / pool.stride + 1};
    }
    case LayerKind::Flatten:
      return {static_cast<int>(shape_numel(input))};
    case LayerKind::Dense:
      require(static_cast<int>(shape_numel(input)) == dense.in_dim, ErrorKind::Dimension,
              "dense expects " + std::to_string(dense.in_dim) + " inputs, got " +
                  shape_to_string(input));
      return {dense.out_dim};
    case LayerKind::Relu:
    case LayerKind::Softmax:
      return input;
  }
  return input;
}

namespace {

// Output columns x with 0 <= x*stride + offset < width.
std::pair<int, int> valid_range(int out_extent, int in_extent, int stride, int offset) {
  int lo = 0;
  while (lo < out_extent && lo * stride + offset < 0) ++lo;
  int hi = out_extent;
  while (hi > lo && (hi - 1) * stride + offset >= in_extent) --hi;
  return {lo, hi};
}

}  // namespace

namespace {

struct ConvGeometry {
  int channels, height, width;
  int kh, kw, stride, pad;
  int out_h, out_w;

  std::size_t rows() const { return static_cast<std::size_t>(channels) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(out_h) * out_w; }
};

// cols[(c*kh + i)*kw + j][y*out_w + x] = input[c, y*stride + i - pad, x*stride + j - pad].
std::vector<float> im2col(const float* input, const ConvGeometry& g) {
  std::vector<float> cols(g.rows() * g.cols(), 0.0f);
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = input + static_cast<std::size_t>(c) * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      const auto [y0, y1] = valid_range(g.out_h, g.height, g.stride, i - g.pad);
      for (int j = 0; j < g.kw; ++j) {
        const auto [x0, x1] = valid_range(g.out_w, g.width, g.stride, j - g.pad);
        float* dst = cols.data() + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * g.cols();
        for (int y = y0; y < y1; ++y) {
          const float* row = plane + static_cast<std::size_t>(y * g.stride + i - g.pad) * g.width;
          float* out = dst + static_cast<std::size_t>(y) * g.out_w;
          for (int x = x0; x < x1; ++x) out[x] = row[x * g.stride + j - g.pad];
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: accumulates column entries back into image positions.
void col2im(const std::vector<double>& cols, const ConvGeometry& g, float* output) {
  std::vector<double> acc(static_cast<std::size_t>(g.channels) * g.height * g.width, 0.0);
  for (int c = 0; c < g.channels; ++c) {
    double* plane = acc.data() + static_cast<std::size_t>(c) * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      const auto [y0, y1] = valid_range(g.out_h, g.height, g.stride, i - g.pad);
      for (int j = 0; j < g.kw; ++j) {
        const auto [x0, x1] = valid_range(g.out_w, g.width, g.stride, j - g.pad);
        const double* src =
            cols.data() + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * g.cols();
        for (int y = y0; y < y1; ++y) {
          double* row = plane + static_cast<std::size_t>(y * g.stride + i - g.pad) * g.width;
          const double* in = src + static_cast<std::size_t>(y) * g.out_w;
          for (int x = x0; x < x1; ++x) row[x * g.stride + j - g.pad] += in[x];
        }
      }
    }
  }
  for (std::size_t n = 0; n < acc.size(); ++n) output[n] = static_cast<float>(acc[n]);
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
                      int stride, int pad) {
  require(input.rank() == 3, ErrorKind::Dimension,
          "conv input must be (C,H,W), got " + shape_to_string(input.shape()));
  require(kernel.rank() == 4, ErrorKind::Dimension,
          "conv kernel must be (O,C,kh,kw), got " + shape_to_string(kernel.shape()));
  const int out_channels = kernel.dim(0);
  require(kernel.dim(1) == input.dim(0), ErrorKind::Dimension,
          "kernel in-channels " + std::to_string(kernel.dim(1)) + " != input channels " +
              std::to_string(input.dim(0)));
  require(bias.size() == static_cast<std::size_t>(out_channels), ErrorKind::Dimension,
          "bias length " + std::to_string(bias.size()) + " != out channels " +
              std::to_string(out_channels));
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernel.dim(2), kernel.dim(3),
                 stride, pad, 0, 0};
  g.out_h = conv_output_extent(g.height, g.kh, stride, pad);
  g.out_w = conv_output_extent(g.width, g.kw, stride, pad);

  const std::vector<float> cols = im2col(input.data().data(), g);
  Tensor output({out_channels, g.out_h, g.out_w});
  std::vector<double> acc(g.cols());
  const float* k = kernel.data().data();
  for (int o = 0; o < out_channels; ++o) {
    std::fill(acc.begin(), acc.end(), static_cast<double>(bias[o]));
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double w = k[static_cast<std::size_t>(o) * g.rows() + r];
      if (w == 0.0) continue;
      const float* src = cols.data() + r * g.cols();
      for (std::size_t n = 0; n < acc.size(); ++n) acc[n] += w * src[n];
    }
    float* dst = output.data().data() + static_cast<std::size_t>(o) * g.cols();
    for (std::size_t n = 0; n < acc.size(); ++n) dst[n] = static_cast<float>(acc[n]);
  }
  return output;
}

Tensor transposed_conv(const Tensor& signal, const Tensor& kernel, int stride, int pad,
                       const Shape& input_shape) {
  require(signal.rank() == 3 && kernel.rank() == 4 && input_shape.size() == 3,
          ErrorKind::Dimension, "transposed conv expects (O,H',W') signal and (O,C,kh,kw) kernel");
  const int out_channels = kernel.dim(0);
  require(input_shape[0] == kernel.dim(1), ErrorKind::Dimension,
          "target channels " + std::to_string(input_shape[0]) + " != kernel in-channels " +
              std::to_string(kernel.dim(1)));
  require(signal.dim(0) == out_channels, ErrorKind::Dimension,
          "signal channels " + std::to_string(signal.dim(0)) + " != kernel out-channels " +
              std::to_string(out_channels));
  ConvGeometry g{input_shape[0], input_shape[1], input_shape[2], kernel.dim(2), kernel.dim(3),
                 stride, pad, 0, 0};
  g.out_h = conv_output_extent(g.height, g.kh, stride, pad);
  g.out_w = conv_output_extent(g.width, g.kw, stride, pad);
  require(signal.dim(1) == g.out_h && signal.dim(2) == g.out_w, ErrorKind::Dimension,
          "signal extent " + shape_to_string(signal.shape()) +
              " does not match the forward conv output for input " + shape_to_string(input_shape));

  // cols[r][n] = sum_o kernel[o][r] * signal[o][n], then scattered back by col2im.
  std::vector<double> cols(g.rows() * g.cols(), 0.0);
  const float* k = kernel.data().data();
  const float* sig = signal.data().data();
  for (int o = 0; o < out_channels; ++o) {
    const float* src = sig + static_cast<std::size_t>(o) * g.cols();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double w = k[static_cast<std::size_t>(o) * g.rows() + r];
      if (w == 0.0) continue;
      double* dst = cols.data() + r * g.cols();
      for (std::size_t n = 0; n < g.cols(); ++n) dst[n] += w * src[n];
    }
  }
  Tensor result(input_shape);
  col2im(cols, g, result.data().data());
  return result;
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output, const Shape& kernel_shape,
                          int stride, int pad) {
  require(kernel_shape.size() == 4 && input.rank() == 3 && grad_output.rank() == 3,
          ErrorKind::Dimension, "conv weight gradient shape mismatch");
  require(input.dim(0) == kernel_shape[1] && grad_output.dim(0) == kernel_shape[0],
          ErrorKind::Dimension, "conv weight gradient channel mismatch");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernel_shape[2], kernel_shape[3],
                 stride, pad, grad_output.dim(1), grad_output.dim(2)};
  require(g.out_h == conv_output_extent(g.height, g.kh, stride, pad) &&
              g.out_w == conv_output_extent(g.width, g.kw, stride, pad),
          ErrorKind::Dimension, "conv weight gradient extent mismatch");

  const std::vector<float> cols = im2col(input.data().data(), g);
  Tensor grad(kernel_shape);
  const float* gout = grad_output.data().data();
  for (int o = 0; o < kernel_shape[0]; ++o) {
    const float* go = gout + static_cast<std::size_t>(o) * g.cols();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const float* src = cols.data() + r * g.cols();
      // Four fixed interleaved partial sums: same result on every run, shorter dependency chain.
      double part[4] = {0.0, 0.0, 0.0, 0.0};
      std::size_t n = 0;
      for (; n + 4 <= g.cols(); n += 4)
        for (int u = 0; u < 4; ++u) part[u] += static_cast<double>(go[n + u]) * src[n + u];
      for (; n < g.cols(); ++n) part[0] += static_cast<double>(go[n]) * src[n];
      grad[static_cast<std::size_t>(o) * g.rows() + r] =
          static_cast<float>((part[0] + part[1]) + (part[2] + part[3]));
    }
  }
  return grad;
}

Tensor relu_forward(const Tensor& input) {
  Tensor output = input;
  for (float& v : output.data()) v = v > 0.0f ? v : 0.0f;
  return output;
}

PoolResult maxpool_forward(const Tensor& input, int window, int stride) {
  const Shape out_shape = LayerSpec::make_maxpool(window, stride).output_shape(input.shape());
  const int channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const int out_h = out_shape[1], out_w = out_shape[2];

  PoolResult result{Tensor(out_shape), PoolSwitches{input.shape(), out_shape, {}}};
  result.switches.argmax.resize(result.output.size());
  std::size_t cell = 0;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x, ++cell) {
        // Row-major scan with strict comparison keeps the smallest flat index on ties.
        std::size_t best = (static_cast<std::size_t>(c) * height + y * stride) * width + x * stride;
        float best_value = input[best];
        for (int i = 0; i < window; ++i) {
          for (int j = 0; j < window; ++j) {
            const std::size_t idx =
                (static_cast<std::size_t>(c) * height + y * stride + i) * width + x * stride + j;
            if (input[idx] > best_value) {
              best_value = input[idx];
              best = idx;
            }
          }
        }
        result.output[cell] = best_value;
        result.switches.argmax[cell] = static_cast<std::int32_t>(best);
      }
    }
  }
  return result;
}

std::vector<float> dense_forward(std::span<const float> input, const Tensor& weights,
                                 std::span<const float> bias) {
  require(weights.rank() == 2, ErrorKind::Dimension, "dense weights must be a matrix");
  const int out_dim = weights.dim(0), in_dim = weights.dim(1);
  require(input.size() == static_cast<std::size_t>(in_dim), ErrorKind::Dimension,
          "dense expects " + std::to_string(in_dim) + " inputs, got " +
              std::to_string(input.size()));
  require(bias.size() == static_cast<std::size_t>(out_dim), ErrorKind::Dimension,
          "dense bias length " + std::to_string(bias.size()) + " != " + std::to_string(out_dim));
  std::vector<float> out(static_cast<std::size_t>(out_dim));
  for (int r = 0; r < out_dim; ++r) {
    const float* row = weights.data().data() + static_cast<std::size_t>(r) * in_dim;
    double sum = bias[r];
    for (int c = 0; c < in_dim; ++c) sum += static_cast<double>(row[c]) * input[c];
    out[r] = static_cast<float>(sum);
  }
  return out;
}

std::vector<float> softmax(std::span<const float> scores) {
  require(!scores.empty(), ErrorKind::Dimension, "softmax needs at least one score");
  for (float s : scores)
    require(!std::isnan(s), ErrorKind::Numeric, "softmax input contains NaN");
  const float top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> e(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    e[i] = std::exp(static_cast<double>(scores[i]) - top);
    total += e[i];
  }
  std::vector<float> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = static_cast<float>(e[i] / total);
  return out;
}

}  // namespace ldaprune
