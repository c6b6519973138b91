#pragma once

#include <optional>
#include <vector>

#include "ldaprune/layers.hpp"
#include "ldaprune/model.hpp"

namespace ldaprune {

struct ForwardRecord {
  Tensor input;
  std::vector<Tensor> outputs;                      // one per layer
  std::vector<std::optional<PoolSwitches>> switches;  // set for maxpool layers only
  std::vector<float> logits;                        // input to the final softmax
  std::vector<float> probs;
};

// Per-layer output-channel keep flags; an empty entry means "keep all". Zeroed
// channels are forced to 0 right after the conv, so they stay 0 through ReLU.
using ChannelMask = std::vector<std::vector<bool>>;

ForwardRecord forward_pass(const ModelDescriptor& model, const Tensor& image,
                           const ChannelMask* mask = nullptr);

// Output of a single layer, without bookkeeping. `switches` receives maxpool argmaxes.
Tensor apply_layer(const Layer& layer, const Tensor& input, PoolSwitches* switches = nullptr);

int predict_label(const ForwardRecord& record);

}  // namespace ldaprune
