#include "ldaprune/deconv.hpp"

#include <algorithm>
#include <cmath>

#include "ldaprune/error.hpp"

namespace ldaprune {

const LayerDependency* DependencyTable::find(std::size_t layer_index) const {
  for (const LayerDependency& l : layers)
    if (l.layer == layer_index) return &l;
  return nullptr;
}

Tensor unpool(const Tensor& pooled, const PoolSwitches& switches, const Shape& target_shape) {
  require(switches.argmax.size() == pooled.size(), ErrorKind::Dimension,
          "switch count " + std::to_string(switches.argmax.size()) + " != pooled size " +
              std::to_string(pooled.size()));
  Tensor out(target_shape);
  for (std::size_t n = 0; n < pooled.size(); ++n) {
    const auto idx = switches.argmax[n];
    require(idx >= 0 && static_cast<std::size_t>(idx) < out.size(), ErrorKind::Dimension,
            "pool switch " + std::to_string(idx) + " outside target " +
                shape_to_string(target_shape));
    out[static_cast<std::size_t>(idx)] = pooled[n];
  }
  return out;
}

Tensor deconv_rectify(const Tensor& t) { return relu_forward(t); }

DeconvMap deconv_from_neuron(const ModelDescriptor& model, const ForwardRecord& record,
                             std::size_t neuron, std::size_t conv_layer) {
  require(conv_layer < model.layers.size() &&
              model.layers[conv_layer].spec.kind == LayerKind::Conv,
          ErrorKind::InvalidArgument, "deconv source layer must be a conv layer");
  require(record.outputs.size() == model.layers.size(), ErrorKind::Dimension,
          "forward record does not match the model");
  const Tensor& activation = record.outputs[conv_layer];
  require(neuron < static_cast<std::size_t>(activation.dim(0)), ErrorKind::InvalidArgument,
          "neuron " + std::to_string(neuron) + " out of range for layer with " +
              std::to_string(activation.dim(0)) + " filters");

  const std::size_t plane = activation.size() / static_cast<std::size_t>(activation.dim(0));
  const auto channel = activation.data().subspan(neuron * plane, plane);
  const auto top = std::max_element(channel.begin(), channel.end());  // first max on ties

  DeconvMap result;
  result.maps.resize(conv_layer + 1);
  Tensor signal(activation.shape());
  if (*top > 0.0f) {
    signal[neuron * plane + static_cast<std::size_t>(top - channel.begin())] = *top;
  } else {
    result.dead = true;
  }
  result.maps[conv_layer] = signal;

  for (std::size_t i = conv_layer + 1; i-- > 0;) {
    const Layer& layer = model.layers[i];
    const Shape& below = i == 0 ? record.input.shape() : record.outputs[i - 1].shape();
    switch (layer.spec.kind) {
      case LayerKind::Conv:
        signal = transposed_conv(signal, layer.weight, layer.spec.conv.stride,
                                 layer.spec.conv.pad, below);
        break;
      case LayerKind::Relu:
        signal = deconv_rectify(signal);
        break;
      case LayerKind::MaxPool:
        require(record.switches[i].has_value(), ErrorKind::Dimension,
                "missing pool switches at layer " + std::to_string(i));
        signal = unpool(signal, *record.switches[i], below);
        break;
      default:
        fail(ErrorKind::Config, "cannot deconvolve through layer kind " +
                                    std::string(to_string(layer.spec.kind)));
    }
    if (i > 0)
      result.maps[i - 1] = signal;
    else
      result.pixels = signal;
  }
  return result;
}

DeconvMap deconv_from_neuron(const ModelDescriptor& model, const ForwardRecord& record,
                             std::size_t neuron) {
  const auto last = last_conv_index(model);
  require(last.has_value(), ErrorKind::InvalidArgument, "model has no conv layer");
  return deconv_from_neuron(model, record, neuron, *last);
}

DependencyTable dependency_scores(const ModelDescriptor& model,
                                  std::span<const LabeledImage> images,
                                  std::span<const std::size_t> selected) {
  require(!images.empty(), ErrorKind::InvalidArgument, "dependency scoring needs images");
  require(!selected.empty(), ErrorKind::InvalidArgument,
          "dependency scoring needs selected neurons");
  const auto last = last_conv_index(model);
  require(last.has_value(), ErrorKind::InvalidArgument, "model has no conv layer");
  const std::vector<std::size_t> convs = conv_layer_indices(model);

  // sums[neuron][conv][filter]
  std::vector<std::vector<std::vector<double>>> sums(selected.size());
  for (auto& per_neuron : sums)
    for (std::size_t l : convs)
      per_neuron.emplace_back(static_cast<std::size_t>(model.layers[l].spec.conv.out_channels),
                              0.0);

  for (const LabeledImage& item : images) {
    const ForwardRecord record = forward_pass(model, item.image);
    for (std::size_t s = 0; s < selected.size(); ++s) {
      const DeconvMap dm = deconv_from_neuron(model, record, selected[s], *last);
      if (dm.dead) continue;
      for (std::size_t c = 0; c < convs.size(); ++c) {
        const Tensor& map = dm.maps[convs[c]];
        const std::size_t filters = static_cast<std::size_t>(map.dim(0));
        const std::size_t plane = map.size() / filters;
        std::vector<double> energy(filters, 0.0);
        for (std::size_t f = 0; f < filters; ++f)
          for (std::size_t n = 0; n < plane; ++n) energy[f] += std::abs(map[f * plane + n]);
        const double top = *std::max_element(energy.begin(), energy.end());
        if (top <= 0.0) continue;
        for (std::size_t f = 0; f < filters; ++f) sums[s][c][f] += energy[f] / top;
      }
    }
  }

  DependencyTable table;
  table.samples = images.size();
  table.selected.assign(selected.begin(), selected.end());
  table.all_dead = true;
  const double n = static_cast<double>(images.size());
  for (std::size_t c = 0; c < convs.size(); ++c) {
    LayerDependency dep;
    dep.layer = convs[c];
    dep.scores.assign(sums[0][c].size(), 0.0);
    for (std::size_t s = 0; s < selected.size(); ++s)
      for (std::size_t f = 0; f < dep.scores.size(); ++f)
        dep.scores[f] = std::max(dep.scores[f], sums[s][c][f] / n);
    dep.dead = *std::max_element(dep.scores.begin(), dep.scores.end()) <= 0.0;
    if (!dep.dead) table.all_dead = false;
    table.layers.push_back(std::move(dep));
  }
  return table;
}

}  // namespace ldaprune
