#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ldaprune/layers.hpp"
#include "ldaprune/tensor.hpp"

namespace ldaprune {

struct Layer {
  LayerSpec spec;
  Tensor weight;  // empty for parameter-free layers
  Tensor bias;
  friend bool operator==(const Layer&, const Layer&) = default;
};

// Opaque auxiliary payload stored alongside the network (e.g. a fitted classifier head).
struct AuxSection {
  std::string kind;
  std::vector<std::uint8_t> blob;
  friend bool operator==(const AuxSection&, const AuxSection&) = default;
};

struct ModelDescriptor {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  Shape input_shape;  // (C,H,W)
  std::vector<Layer> layers;
  std::string provenance;
  std::vector<AuxSection> aux;

  friend bool operator==(const ModelDescriptor&, const ModelDescriptor&) = default;
};

struct ParamCount {
  std::size_t conv = 0;
  std::size_t fc = 0;
  std::size_t total = 0;
  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

// Throws ShapeChain when adjacent layers do not chain, Config for empty models or bad
// layer settings, Dimension when a parameter tensor has the wrong shape.
void validate_model(const ModelDescriptor& model);

// Output shape of every layer, in order.
std::vector<Shape> layer_output_shapes(const ModelDescriptor& model);

std::optional<std::size_t> last_conv_index(const ModelDescriptor& model);
std::vector<std::size_t> conv_layer_indices(const ModelDescriptor& model);

// Layers up to and including the last conv count as conv; everything after is FC.
ParamCount model_param_count(const ModelDescriptor& model);
std::size_t layer_param_count(const Layer& layer);

// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases, seeded.
ModelDescriptor build_model(const Shape& input_shape, const std::vector<LayerSpec>& specs,
                            std::uint64_t seed);

struct ToyNetConfig {
  int input_size = 32;
  int input_channels = 1;
  std::vector<int> block1 = {8};
  std::vector<int> block2 = {8, 16};
  std::vector<int> block3 = {16, 32, 32};
  int classes = 2;
};

// VGG-style stack: 3x3 pad-1 conv+ReLU blocks each closed by a 2x2 maxpool, then
// flatten -> dense -> softmax.
ModelDescriptor make_toy_net(const ToyNetConfig& config, std::uint64_t seed);

// FNV-1a 64 over the layer specs and parameter bytes, as 16 hex digits.
std::string model_fingerprint(const ModelDescriptor& model);

}  // namespace ldaprune
