#include "ldaprune/forward.hpp"

#include <algorithm>

#include "ldaprune/error.hpp"

namespace ldaprune {

Tensor apply_layer(const Layer& layer, const Tensor& input, PoolSwitches* switches) {
  const LayerSpec& spec = layer.spec;
  switch (spec.kind) {
    case LayerKind::Conv:
      require(input.rank() == 3 && input.dim(0) == spec.conv.in_channels, ErrorKind::Dimension,
              "conv expects " + std::to_string(spec.conv.in_channels) + " channels, got " +
                  shape_to_string(input.shape()));
      return conv2d_forward(input, layer.weight, layer.bias.data(), spec.conv.stride,
                            spec.conv.pad);
    case LayerKind::Relu:
      return relu_forward(input);
    case LayerKind::MaxPool: {
      PoolResult pooled = maxpool_forward(input, spec.pool.window, spec.pool.stride);
      if (switches) *switches = std::move(pooled.switches);
      return std::move(pooled.output);
    }
    case LayerKind::Flatten:
      return input.reshaped({static_cast<int>(input.size())});
    case LayerKind::Dense: {
      std::vector<float> out = dense_forward(input.data(), layer.weight, layer.bias.data());
      const int extent = static_cast<int>(out.size());
      return Tensor({extent}, std::move(out));
    }
    case LayerKind::Softmax: {
      std::vector<float> out = softmax(input.data());
      return Tensor(input.shape(), std::move(out));
    }
  }
  fail(ErrorKind::Config, "unhandled layer kind");
}

ForwardRecord forward_pass(const ModelDescriptor& model, const Tensor& image,
                           const ChannelMask* mask) {
  require(image.shape() == model.input_shape, ErrorKind::Dimension,
          "image shape " + shape_to_string(image.shape()) + " != model input " +
              shape_to_string(model.input_shape));
  ForwardRecord record;
  record.input = image;
  record.outputs.reserve(model.layers.size());
  record.switches.resize(model.layers.size());
  const Tensor* current = &image;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    try {
      PoolSwitches sw;
      Tensor out = apply_layer(layer, *current, &sw);
      if (layer.spec.kind == LayerKind::MaxPool) record.switches[i] = std::move(sw);
      if (mask && i < mask->size() && !(*mask)[i].empty()) {
        const auto& keep = (*mask)[i];
        require(out.rank() == 3 && keep.size() == static_cast<std::size_t>(out.dim(0)),
                ErrorKind::Dimension, "channel mask does not match layer output");
        const std::size_t plane = out.size() / keep.size();
        for (std::size_t c = 0; c < keep.size(); ++c)
          if (!keep[c])
            std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(c * plane), plane, 0.0f);
      }
      record.outputs.push_back(std::move(out));
    } catch (const Error& e) {
      fail(e.kind(), "layer " + std::to_string(i) + ": " + e.what());
    }
    current = &record.outputs.back();
  }
  const bool ends_in_softmax = model.layers.back().spec.kind == LayerKind::Softmax;
  const Tensor& logits =
      ends_in_softmax && model.layers.size() >= 2 ? record.outputs[model.layers.size() - 2]
      : ends_in_softmax                           ? image
                                                  : record.outputs.back();
  record.logits.assign(logits.data().begin(), logits.data().end());
  record.probs = ends_in_softmax ? record.outputs.back().values() : softmax(record.logits);
  return record;
}

int predict_label(const ForwardRecord& record) {
  // First maximum wins.
  return static_cast<int>(std::max_element(record.probs.begin(), record.probs.end()) -
                          record.probs.begin());
}

}  // namespace ldaprune
