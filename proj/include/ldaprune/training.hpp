#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ldaprune/dataset.hpp"
#include "ldaprune/forward.hpp"
#include "ldaprune/model.hpp"

namespace ldaprune {

struct ParamGrad {
  Tensor weight;
  Tensor bias;
};

// One entry per model layer; parameter-free layers hold empty tensors.
struct Gradients {
  std::vector<ParamGrad> layers;

  static Gradients zeros_like(const ModelDescriptor& model);
  void accumulate(const Gradients& other);
  void scale(float factor);
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 1;

  // Fine-tuning defaults after pruning: same shape, 0.1x learning rate.
  TrainConfig retrain(int retrain_epochs) const;
};

// Per-layer {0,1} multipliers applied to weights after every update. Empty tensors
// leave a layer unconstrained.
struct WeightMask {
  std::vector<Tensor> weight;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double eval_acc = -1.0;  // -1 when no evaluation split was given
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  void write_csv(std::ostream& os) const;
};

double cross_entropy_loss(std::span<const float> probs, int label);

Gradients backward_pass(const ModelDescriptor& model, const ForwardRecord& record, int label);

// v <- momentum*v - lr*(g + wd*w); w <- w + v.
void sgd_step(ModelDescriptor& model, const Gradients& grads, Gradients& velocity,
              const TrainConfig& config, const WeightMask* mask = nullptr);

TrainLog train(ModelDescriptor& model, std::span<const LabeledImage> data,
               const TrainConfig& config, std::span<const LabeledImage> eval = {},
               const WeightMask* mask = nullptr);

double model_accuracy(const ModelDescriptor& model, std::span<const LabeledImage> data,
                      const ChannelMask* channel_mask = nullptr);

}  // namespace ldaprune
