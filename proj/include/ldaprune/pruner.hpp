#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ldaprune/dataset.hpp"
#include "ldaprune/deconv.hpp"
#include "ldaprune/forward.hpp"
#include "ldaprune/model.hpp"
#include "ldaprune/training.hpp"

namespace ldaprune {

struct ConvKeep {
  std::size_t layer = 0;               // model layer index
  int original_filters = 0;
  std::vector<std::size_t> keep;       // sorted surviving output filters
  std::vector<std::size_t> input_keep; // surviving input channels (previous conv's keep)
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  bool guarded = false;                // emptied by the threshold; top-1 filter restored
};

struct PrunePlan {
  std::vector<ConvKeep> convs;  // every conv layer, model order
  double threshold = 0.0;
  bool flagged = false;         // at least one layer hit the empty-layer guard
  std::size_t fc_params_before = 0;
  std::size_t fc_params_after = 0;

  std::size_t conv_params_before() const;
  std::size_t conv_params_after() const;
  double conv_pruning_rate() const;
};

struct LayerReduction {
  std::size_t layer = 0;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  double rate = 0.0;
};

struct PruneReport {
  double threshold = 0.0;
  double conv_pruning_rate = 0.0;
  std::vector<LayerReduction> layers;
  double accuracy_before_retrain = 0.0;
  double accuracy_after_retrain = 0.0;
  bool flagged = false;
};

// Plan with explicit keep-lists (validated against the model, counts filled in).
PrunePlan make_plan(const ModelDescriptor& model, std::vector<std::vector<std::size_t>> keeps,
                    double threshold = 0.0);

// Keeps filter f iff score_f >= threshold; the last conv keeps exactly `selected`.
PrunePlan build_prune_plan(const ModelDescriptor& model, const DependencyTable& table,
                           std::span<const std::size_t> selected, double threshold);

// Drops removed filters, slices consumer kernels (and the first dense layer after the
// last conv) to the surviving channels. Surviving values are copied bit-exact.
ModelDescriptor apply_prune(const ModelDescriptor& model, const PrunePlan& plan);

ChannelMask plan_mask(const ModelDescriptor& model, const PrunePlan& plan);
ForwardRecord masked_forward(const ModelDescriptor& model, const PrunePlan& plan,
                             const Tensor& image);

// max |pruned - masked| / (|masked| + 1e-6) over images and logits.
double equivalence_check(const ModelDescriptor& model, const PrunePlan& plan,
                         std::span<const LabeledImage> images);

PruneReport make_report(const ModelDescriptor& model, const PrunePlan& plan);

struct PlateauSearchConfig {
  std::vector<double> grid;  // ascending
  double epsilon_acc = 0.02;
  TrainConfig retrain;       // small fixed budget per grid point
};

struct PlateauResult {
  double t0 = 0.0;
  std::size_t t0_index = 0;
  std::vector<PruneReport> points;  // grid order
};

PlateauResult plateau_threshold_search(const ModelDescriptor& model, const DependencyTable& table,
                                       std::span<const std::size_t> selected,
                                       const DatasetSplit& data, const PlateauSearchConfig& config);

// Largest grid threshold whose accuracy >= best - epsilon.
std::size_t plateau_index(std::span<const double> accuracies, double epsilon);

// {0,1} mask over conv weights zeroing the ceil(rate * N) smallest |w| globally (ties by
// layer, then flat index). Biases are never masked.
WeightMask magnitude_mask(const ModelDescriptor& model, double rate);
std::size_t masked_count(const WeightMask& mask);

struct MagnitudeResult {
  double rate = 0.0;
  std::size_t masked = 0;
  double accuracy = 0.0;
};

// Masks, retrains with the mask frozen, and reports test accuracy.
MagnitudeResult magnitude_baseline_mask(const ModelDescriptor& model, double rate,
                                        const DatasetSplit& data, const TrainConfig& retrain);

}  // namespace ldaprune
