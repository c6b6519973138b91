#include "ldaprune/model.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "ldaprune/error.hpp"

namespace ldaprune {

std::vector<Shape> layer_output_shapes(const ModelDescriptor& model) {
  std::vector<Shape> shapes;
  shapes.reserve(model.layers.size());
  Shape current = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    try {
      current = model.layers[i].spec.output_shape(current);
    } catch (const Error& e) {
      const ErrorKind kind =
          e.kind() == ErrorKind::Dimension ? ErrorKind::ShapeChain : e.kind();
      fail(kind, "layer " + std::to_string(i) + " (" +
                     std::string(to_string(model.layers[i].spec.kind)) + "): " + e.what());
    }
    shapes.push_back(current);
  }
  return shapes;
}

void validate_model(const ModelDescriptor& model) {
  require(!model.layers.empty(), ErrorKind::Config, "model has no layers");
  require(model.input_shape.size() == 3, ErrorKind::Config,
          "model input shape must be (C,H,W), got " + shape_to_string(model.input_shape));
  for (int extent : model.input_shape)
    require(extent >= 1, ErrorKind::Config, "model input extents must be positive");
  layer_output_shapes(model);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (layer.spec.has_params()) {
      require(layer.weight.shape() == layer.spec.weight_shape(), ErrorKind::Dimension,
              "layer " + std::to_string(i) + " weight shape " +
                  shape_to_string(layer.weight.shape()) + " != declared " +
                  shape_to_string(layer.spec.weight_shape()));
      require(layer.bias.shape() == layer.spec.bias_shape(), ErrorKind::Dimension,
              "layer " + std::to_string(i) + " bias shape " + shape_to_string(layer.bias.shape()) +
                  " != declared " + shape_to_string(layer.spec.bias_shape()));
    } else {
      require(layer.weight.empty() && layer.bias.empty(), ErrorKind::Dimension,
              "layer " + std::to_string(i) + " is parameter-free but carries tensors");
    }
  }
}

std::optional<std::size_t> last_conv_index(const ModelDescriptor& model) {
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].spec.kind == LayerKind::Conv) last = i;
  return last;
}

std::vector<std::size_t> conv_layer_indices(const ModelDescriptor& model) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].spec.kind == LayerKind::Conv) out.push_back(i);
  return out;
}

std::size_t layer_param_count(const Layer& layer) {
  if (!layer.spec.has_params()) return 0;
  return shape_numel(layer.spec.weight_shape()) + shape_numel(layer.spec.bias_shape());
}

ParamCount model_param_count(const ModelDescriptor& model) {
  ParamCount count;
  const auto last = last_conv_index(model);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const std::size_t n = layer_param_count(model.layers[i]);
    if (last && i <= *last)
      count.conv += n;
    else
      count.fc += n;
  }
  count.total = count.conv + count.fc;
  return count;
}

ModelDescriptor build_model(const Shape& input_shape, const std::vector<LayerSpec>& specs,
                            std::uint64_t seed) {
  ModelDescriptor model;
  model.input_shape = input_shape;
  std::mt19937_64 rng(seed);
  for (const LayerSpec& spec : specs) {
    Layer layer{spec, {}, {}};
    if (spec.has_params()) {
      const Shape ws = spec.weight_shape();
      const std::size_t fan_in = shape_numel(ws) / static_cast<std::size_t>(ws[0]);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      layer.weight = Tensor(ws);
      for (float& w : layer.weight.data()) {
        // 53-bit uniform in [0,1) built from raw engine output, portable across stdlibs.
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        w = static_cast<float>((2.0 * u - 1.0) * bound);
      }
      layer.bias = Tensor(spec.bias_shape());
    }
    model.layers.push_back(std::move(layer));
  }
  validate_model(model);
  return model;
}

ModelDescriptor make_toy_net(const ToyNetConfig& config, std::uint64_t seed) {
  std::vector<LayerSpec> specs;
  int channels = config.input_channels;
  int extent = config.input_size;
  for (const auto* block : {&config.block1, &config.block2, &config.block3}) {
    if (block->empty()) continue;
    for (int width : *block) {
      specs.push_back(LayerSpec::make_conv(width, channels, 3, 1, 1));
      specs.push_back(LayerSpec::make_relu());
      channels = width;
    }
    specs.push_back(LayerSpec::make_maxpool(2, 2));
    extent /= 2;
  }
  require(extent >= 1, ErrorKind::Config, "toy net input too small for its pooling stages");
  specs.push_back(LayerSpec::make_flatten());
  specs.push_back(LayerSpec::make_dense(config.classes, channels * extent * extent));
  specs.push_back(LayerSpec::make_softmax());
  return build_model({config.input_channels, config.input_size, config.input_size}, specs, seed);
}

std::string model_fingerprint(const ModelDescriptor& model) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&hash](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      hash ^= p[i];
      hash *= 1099511628211ULL;
    }
  };
  for (const Layer& layer : model.layers) {
    const int kind = static_cast<int>(layer.spec.kind);
    mix(&kind, sizeof kind);
    for (const Tensor* t : {&layer.weight, &layer.bias}) {
      for (int extent : t->shape()) mix(&extent, sizeof extent);
      mix(t->data().data(), t->size() * sizeof(float));
    }
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << hash;
  return os.str();
}

}  // namespace ldaprune
