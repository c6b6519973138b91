#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldaprune/tensor.hpp"

namespace ldaprune {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Dense, Softmax };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct ConvParams {
  int out_channels = 0;
  int in_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int pad = 0;
  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct PoolParams {
  int window = 2;
  int stride = 2;
  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

struct DenseParams {
  int out_dim = 0;
  int in_dim = 0;
  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  ConvParams conv;
  PoolParams pool;
  DenseParams dense;

  static LayerSpec make_conv(int out_channels, int in_channels, int kernel, int stride = 1,
                             int pad = 0);
  static LayerSpec make_relu() { return {LayerKind::Relu, {}, {}, {}}; }
  static LayerSpec make_maxpool(int window, int stride);
  static LayerSpec make_flatten() { return {LayerKind::Flatten, {}, {}, {}}; }
  static LayerSpec make_dense(int out_dim, int in_dim);
  static LayerSpec make_softmax() { return {LayerKind::Softmax, {}, {}, {}}; }

  bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
  Shape weight_shape() const;
  Shape bias_shape() const;
  // Output shape for the given input shape; throws Config/Dimension errors.
  Shape output_shape(const Shape& input) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Winning flat input index for each pooled output cell of one maxpool layer.
struct PoolSwitches {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::int32_t> argmax;
};

struct PoolResult {
  Tensor output;
  PoolSwitches switches;
};

int conv_output_extent(int input, int kernel, int stride, int pad);

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
                      int stride, int pad);
// Adjoint of the bias-free conv2d_forward: scatters each output cell back through the kernel.
Tensor transposed_conv(const Tensor& signal, const Tensor& kernel, int stride, int pad,
                       const Shape& input_shape);
// Gradient of conv2d_forward w.r.t. its kernel, given the output gradient.
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output, const Shape& kernel_shape,
                          int stride, int pad);

Tensor relu_forward(const Tensor& input);
PoolResult maxpool_forward(const Tensor& input, int window, int stride);
std::vector<float> dense_forward(std::span<const float> input, const Tensor& weights,
                                 std::span<const float> bias);
std::vector<float> softmax(std::span<const float> scores);

}  // namespace ldaprune
