#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ldaprune/dataset.hpp"
#include "ldaprune/forward.hpp"
#include "ldaprune/model.hpp"

namespace ldaprune {

// Reconstruction of one neuron's maximum activation projected down the stack.
// maps[i] has the shape of forward output i, for every layer up to the source conv;
// `pixels` has the input image shape.
struct DeconvMap {
  std::vector<Tensor> maps;
  Tensor pixels;
  bool dead = false;  // the neuron never fired (max <= 0): all maps are zero
};

struct LayerDependency {
  std::size_t layer = 0;        // model layer index of the conv
  std::vector<double> scores;   // one per filter, in [0,1]
  bool dead = false;            // every score is 0
};

struct DependencyTable {
  std::vector<LayerDependency> layers;  // conv layers in model order, last conv included
  std::size_t samples = 0;
  std::vector<std::size_t> selected;
  bool all_dead = false;

  const LayerDependency* find(std::size_t layer_index) const;
};

Tensor unpool(const Tensor& pooled, const PoolSwitches& switches, const Shape& target_shape);
Tensor deconv_rectify(const Tensor& t);

DeconvMap deconv_from_neuron(const ModelDescriptor& model, const ForwardRecord& record,
                             std::size_t neuron, std::size_t conv_layer);
DeconvMap deconv_from_neuron(const ModelDescriptor& model, const ForwardRecord& record,
                             std::size_t neuron);

// Per (image, neuron): L1 energy of each filter's channel in that layer's deconv map,
// divided by the layer's largest channel energy. Averaged over images, then the max
// over selected neurons.
DependencyTable dependency_scores(const ModelDescriptor& model,
                                  std::span<const LabeledImage> images,
                                  std::span<const std::size_t> selected);

}  // namespace ldaprune
