#include "ldaprune/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <tuple>

#include "ldaprune/error.hpp"

namespace ldaprune {

std::size_t PrunePlan::conv_params_before() const {
  std::size_t n = 0;
  for (const ConvKeep& c : convs) n += c.params_before;
  return n;
}

std::size_t PrunePlan::conv_params_after() const {
  std::size_t n = 0;
  for (const ConvKeep& c : convs) n += c.params_after;
  return n;
}

double PrunePlan::conv_pruning_rate() const {
  const std::size_t before = conv_params_before();
  if (before == 0) return 0.0;
  return static_cast<double>(before - conv_params_after()) / static_cast<double>(before);
}

namespace {

// Original channel indices that survive in the tensor flowing between layers.
struct ChannelFlow {
  std::vector<std::size_t> channels;  // surviving channel indices of the current tensor
  std::size_t flatten_plane = 0;      // spatial size at the flatten, once reached
  bool flattened = false;
  bool sliced_dense = false;          // the first dense after the flatten was handled
};

std::vector<std::size_t> iota_list(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Columns of the first dense layer that survive, given kept channels of the flattened map.
std::vector<std::size_t> dense_columns(const std::vector<std::size_t>& channels,
                                       std::size_t plane) {
  std::vector<std::size_t> cols;
  cols.reserve(channels.size() * plane);
  for (std::size_t c : channels)
    for (std::size_t s = 0; s < plane; ++s) cols.push_back(c * plane + s);
  return cols;
}

}  // namespace

PrunePlan make_plan(const ModelDescriptor& model, std::vector<std::vector<std::size_t>> keeps,
                    double threshold) {
  validate_model(model);
  const std::vector<std::size_t> convs = conv_layer_indices(model);
  require(keeps.size() == convs.size(), ErrorKind::InvalidArgument,
          "plan has " + std::to_string(keeps.size()) + " keep-lists for " +
              std::to_string(convs.size()) + " conv layers");
  PrunePlan plan;
  plan.threshold = threshold;
  std::vector<std::size_t> input_keep = iota_list(static_cast<std::size_t>(model.input_shape[0]));
  for (std::size_t c = 0; c < convs.size(); ++c) {
    const Layer& layer = model.layers[convs[c]];
    const ConvParams& cp = layer.spec.conv;
    auto& keep = keeps[c];
    std::sort(keep.begin(), keep.end());
    require(std::adjacent_find(keep.begin(), keep.end()) == keep.end(),
            ErrorKind::InvalidArgument, "duplicate filter in keep-list");
    require(!keep.empty(), ErrorKind::InvalidArgument,
            "keep-list for layer " + std::to_string(convs[c]) + " is empty");
    require(keep.back() < static_cast<std::size_t>(cp.out_channels), ErrorKind::InvalidArgument,
            "keep-list index out of range for layer " + std::to_string(convs[c]));
    ConvKeep ck;
    ck.layer = convs[c];
    ck.original_filters = cp.out_channels;
    ck.keep = keep;
    ck.input_keep = input_keep;
    const std::size_t area = static_cast<std::size_t>(cp.kernel_h) * cp.kernel_w;
    ck.params_before = layer_param_count(layer);
    ck.params_after = keep.size() * input_keep.size() * area + keep.size();
    plan.convs.push_back(std::move(ck));
    input_keep = keep;
  }

  // FC accounting: every parameterised layer after the last conv, with the first dense
  // layer's input sliced to the surviving last-conv channels.
  const ParamCount counts = model_param_count(model);
  plan.fc_params_before = counts.fc;
  plan.fc_params_after = counts.fc;
  if (!convs.empty()) {
    const auto shapes = layer_output_shapes(model);
    const std::size_t last = convs.back();
    for (std::size_t i = last + 1; i < model.layers.size(); ++i) {
      if (model.layers[i].spec.kind != LayerKind::Dense) continue;
      const Shape& in = shapes[i - 1];
      const std::size_t plane =
          shape_numel(in) / static_cast<std::size_t>(model.layers[last].spec.conv.out_channels);
      const std::size_t out_dim = static_cast<std::size_t>(model.layers[i].spec.dense.out_dim);
      const std::size_t removed =
          (static_cast<std::size_t>(model.layers[last].spec.conv.out_channels) -
           plan.convs.back().keep.size()) *
          plane * out_dim;
      plan.fc_params_after -= removed;
      break;
    }
  }
  return plan;
}

PrunePlan build_prune_plan(const ModelDescriptor& model, const DependencyTable& table,
                           std::span<const std::size_t> selected, double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0, ErrorKind::InvalidArgument,
          "threshold must lie in [0,1]");
  require(!selected.empty(), ErrorKind::InvalidArgument, "selected neuron set is empty");
  const std::vector<std::size_t> convs = conv_layer_indices(model);
  require(!convs.empty(), ErrorKind::InvalidArgument, "model has no conv layer");
  std::vector<std::vector<std::size_t>> keeps;
  std::vector<bool> guarded;
  for (std::size_t c = 0; c + 1 < convs.size(); ++c) {
    const LayerDependency* dep = table.find(convs[c]);
    require(dep != nullptr, ErrorKind::InvalidArgument,
            "dependency table lacks conv layer " + std::to_string(convs[c]));
    require(dep->scores.size() ==
                static_cast<std::size_t>(model.layers[convs[c]].spec.conv.out_channels),
            ErrorKind::InvalidArgument,
            "dependency table filter count mismatch at layer " + std::to_string(convs[c]));
    std::vector<std::size_t> keep;
    for (std::size_t f = 0; f < dep->scores.size(); ++f)
      if (dep->scores[f] >= threshold) keep.push_back(f);
    const bool empty = keep.empty();
    if (empty) {
      // First maximum on ties.
      keep.push_back(static_cast<std::size_t>(
          std::max_element(dep->scores.begin(), dep->scores.end()) - dep->scores.begin()));
    }
    keeps.push_back(std::move(keep));
    guarded.push_back(empty);
  }
  keeps.emplace_back(selected.begin(), selected.end());
  guarded.push_back(false);

  PrunePlan plan = make_plan(model, std::move(keeps), threshold);
  for (std::size_t c = 0; c < plan.convs.size(); ++c) {
    plan.convs[c].guarded = guarded[c];
    if (guarded[c]) plan.flagged = true;
  }
  return plan;
}

ModelDescriptor apply_prune(const ModelDescriptor& model, const PrunePlan& plan) {
  validate_model(model);
  const std::vector<std::size_t> convs = conv_layer_indices(model);
  require(plan.convs.size() == convs.size(), ErrorKind::InvalidArgument,
          "plan does not match the model's conv layers");
  const auto shapes = layer_output_shapes(model);

  ModelDescriptor out;
  out.format_version = model.format_version;
  out.input_shape = model.input_shape;
  out.aux = model.aux;
  char note[160];
  std::snprintf(note, sizeof note, "pruned from %s, threshold %.6g",
                model_fingerprint(model).c_str(), plan.threshold);
  out.provenance = note;

  ChannelFlow flow;
  flow.channels = iota_list(static_cast<std::size_t>(model.input_shape[0]));
  std::size_t conv_seen = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    Layer copy = layer;
    switch (layer.spec.kind) {
      case LayerKind::Conv: {
        const ConvKeep& ck = plan.convs[conv_seen++];
        require(ck.layer == i && ck.original_filters == layer.spec.conv.out_channels,
                ErrorKind::InvalidArgument, "plan/model mismatch at layer " + std::to_string(i));
        require(ck.input_keep == flow.channels, ErrorKind::InvalidArgument,
                "plan input slice does not match the previous layer's keep-list at layer " +
                    std::to_string(i));
        const ConvParams& cp = layer.spec.conv;
        const std::size_t area = static_cast<std::size_t>(cp.kernel_h) * cp.kernel_w;
        copy.spec.conv.out_channels = static_cast<int>(ck.keep.size());
        copy.spec.conv.in_channels = static_cast<int>(flow.channels.size());
        copy.weight = Tensor(copy.spec.weight_shape());
        copy.bias = Tensor(copy.spec.bias_shape());
        for (std::size_t o = 0; o < ck.keep.size(); ++o) {
          copy.bias[o] = layer.bias[ck.keep[o]];
          for (std::size_t c = 0; c < flow.channels.size(); ++c) {
            const std::size_t src =
                (ck.keep[o] * static_cast<std::size_t>(cp.in_channels) + flow.channels[c]) * area;
            const std::size_t dst = (o * flow.channels.size() + c) * area;
            std::copy_n(layer.weight.data().begin() + static_cast<std::ptrdiff_t>(src), area,
                        copy.weight.data().begin() + static_cast<std::ptrdiff_t>(dst));
          }
        }
        flow.channels = ck.keep;
        break;
      }
      case LayerKind::Flatten: {
        const Shape& in = i == 0 ? model.input_shape : shapes[i - 1];
        require(in.size() == 3, ErrorKind::Config, "flatten must follow a feature map");
        flow.flatten_plane = shape_numel(in) / static_cast<std::size_t>(in[0]);
        flow.flattened = true;
        break;
      }
      case LayerKind::Dense: {
        if (flow.sliced_dense) break;
        require(flow.flattened, ErrorKind::Config, "dense layer reads an unflattened feature map");
        const auto cols = dense_columns(flow.channels, flow.flatten_plane);
        const int out_dim = layer.spec.dense.out_dim, in_dim = layer.spec.dense.in_dim;
        copy.spec.dense.in_dim = static_cast<int>(cols.size());
        copy.weight = Tensor(copy.spec.weight_shape());
        for (int r = 0; r < out_dim; ++r)
          for (std::size_t c = 0; c < cols.size(); ++c)
            copy.weight[static_cast<std::size_t>(r) * cols.size() + c] =
                layer.weight[static_cast<std::size_t>(r) * in_dim + cols[c]];
        flow.sliced_dense = true;
        break;
      }
      default:
        break;
    }
    out.layers.push_back(std::move(copy));
  }
  validate_model(out);
  return out;
}

ChannelMask plan_mask(const ModelDescriptor& model, const PrunePlan& plan) {
  ChannelMask mask(model.layers.size());
  for (const ConvKeep& ck : plan.convs) {
    require(ck.layer < model.layers.size() &&
                model.layers[ck.layer].spec.kind == LayerKind::Conv,
            ErrorKind::InvalidArgument, "plan references a non-conv layer");
    std::vector<bool> keep(static_cast<std::size_t>(ck.original_filters), false);
    for (std::size_t f : ck.keep) keep.at(f) = true;
    mask[ck.layer] = std::move(keep);
  }
  return mask;
}

ForwardRecord masked_forward(const ModelDescriptor& model, const PrunePlan& plan,
                             const Tensor& image) {
  const ChannelMask mask = plan_mask(model, plan);
  return forward_pass(model, image, &mask);
}

double equivalence_check(const ModelDescriptor& model, const PrunePlan& plan,
                         std::span<const LabeledImage> images) {
  const ModelDescriptor pruned = apply_prune(model, plan);
  const ChannelMask mask = plan_mask(model, plan);
  double worst = 0.0;
  for (const LabeledImage& item : images) {
    const ForwardRecord a = forward_pass(pruned, item.image);
    const ForwardRecord b = forward_pass(model, item.image, &mask);
    for (std::size_t j = 0; j < b.logits.size(); ++j) {
      const double dev = std::abs(static_cast<double>(a.logits[j]) - b.logits[j]) /
                         (std::abs(static_cast<double>(b.logits[j])) + 1e-6);
      worst = std::max(worst, dev);
    }
  }
  return worst;
}

PruneReport make_report(const ModelDescriptor& model, const PrunePlan& plan) {
  (void)model;
  PruneReport report;
  report.threshold = plan.threshold;
  report.conv_pruning_rate = plan.conv_pruning_rate();
  report.flagged = plan.flagged;
  for (const ConvKeep& ck : plan.convs) {
    LayerReduction r{ck.layer, ck.params_before, ck.params_after, 0.0};
    if (ck.params_before > 0)
      r.rate = static_cast<double>(ck.params_before - ck.params_after) /
               static_cast<double>(ck.params_before);
    report.layers.push_back(r);
  }
  return report;
}

std::size_t plateau_index(std::span<const double> accuracies, double epsilon) {
  require(!accuracies.empty(), ErrorKind::InvalidArgument, "threshold grid is empty");
  const double best = *std::max_element(accuracies.begin(), accuracies.end());
  std::size_t index = 0;
  for (std::size_t i = 0; i < accuracies.size(); ++i)
    if (accuracies[i] >= best - epsilon) index = i;
  return index;
}

PlateauResult plateau_threshold_search(const ModelDescriptor& model, const DependencyTable& table,
                                       std::span<const std::size_t> selected,
                                       const DatasetSplit& data,
                                       const PlateauSearchConfig& config) {
  require(!config.grid.empty(), ErrorKind::InvalidArgument, "threshold grid is empty");
  require(std::is_sorted(config.grid.begin(), config.grid.end()), ErrorKind::InvalidArgument,
          "threshold grid must be ascending");
  require(config.epsilon_acc > 0.0, ErrorKind::InvalidArgument, "epsilon_acc must be > 0");
  PlateauResult result;
  std::vector<double> accuracies;
  for (double threshold : config.grid) {
    const PrunePlan plan = build_prune_plan(model, table, selected, threshold);
    ModelDescriptor pruned = apply_prune(model, plan);
    PruneReport report = make_report(model, plan);
    report.accuracy_before_retrain = model_accuracy(pruned, data.test);
    train(pruned, data.train, config.retrain);
    report.accuracy_after_retrain = model_accuracy(pruned, data.test);
    accuracies.push_back(report.accuracy_after_retrain);
    result.points.push_back(std::move(report));
  }
  result.t0_index = plateau_index(accuracies, config.epsilon_acc);
  result.t0 = config.grid[result.t0_index];
  return result;
}

WeightMask magnitude_mask(const ModelDescriptor& model, double rate) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::InvalidArgument,
          "magnitude pruning rate must lie in [0,1)");
  WeightMask mask;
  mask.weight.resize(model.layers.size());
  std::vector<std::tuple<float, std::size_t, std::size_t>> entries;  // |w|, layer, index
  for (std::size_t l : conv_layer_indices(model)) {
    const Tensor& w = model.layers[l].weight;
    mask.weight[l] = Tensor(w.shape(), 1.0f);
    for (std::size_t n = 0; n < w.size(); ++n) entries.emplace_back(std::abs(w[n]), l, n);
  }
  const auto count = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(entries.size())));
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 0; i < std::min(count, entries.size()); ++i)
    mask.weight[std::get<1>(entries[i])][std::get<2>(entries[i])] = 0.0f;
  return mask;
}

std::size_t masked_count(const WeightMask& mask) {
  std::size_t n = 0;
  for (const Tensor& t : mask.weight)
    for (float v : t.data())
      if (v == 0.0f) ++n;
  return n;
}

MagnitudeResult magnitude_baseline_mask(const ModelDescriptor& model, double rate,
                                        const DatasetSplit& data, const TrainConfig& retrain) {
  const WeightMask mask = magnitude_mask(model, rate);
  ModelDescriptor masked = model;
  for (std::size_t l = 0; l < masked.layers.size(); ++l) {
    if (mask.weight[l].empty()) continue;
    Tensor& w = masked.layers[l].weight;
    for (std::size_t n = 0; n < w.size(); ++n)
      if (mask.weight[l][n] == 0.0f) w[n] = 0.0f;
  }
  train(masked, data.train, retrain, {}, &mask);
  return {rate, masked_count(mask), model_accuracy(masked, data.test)};
}

}  // namespace ldaprune
