#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ldaprune/csv.hpp"
#include "ldaprune/dataset.hpp"
#include "ldaprune/model.hpp"

namespace ldaprune {

struct BenchConfig {
  int runs = 30;
  int warmup = 5;
  std::size_t images = 16;
};

// Median per-image milliseconds, per layer and for the whole forward pass.
struct ModelTiming {
  std::vector<double> layer_ms;
  double total_ms = 0.0;
};

struct BenchLayer {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::Conv;
  double base_ms = 0.0;
  double pruned_ms = 0.0;
  std::size_t base_params = 0;
  std::size_t pruned_params = 0;
};

struct BenchResult {
  std::vector<BenchLayer> layers;
  double base_total_ms = 0.0;
  double pruned_total_ms = 0.0;
  ParamCount base_params;
  ParamCount pruned_params;
  std::size_t base_file_bytes = 0;
  std::size_t pruned_file_bytes = 0;
  int runs = 0;
  int warmup = 0;

  double speedup() const { return base_total_ms / pruned_total_ms; }
  double size_ratio() const {
    return static_cast<double>(base_file_bytes) / static_cast<double>(pruned_file_bytes);
  }
};

ModelTiming time_model(const ModelDescriptor& model, std::span<const LabeledImage> images,
                       const BenchConfig& config);

// Both models must have the same layer sequence (a pruned model keeps its layer list).
// Runs of the two models are interleaved so they share scheduler noise.
BenchResult bench_models(const ModelDescriptor& base, const ModelDescriptor& pruned,
                         std::span<const LabeledImage> images, const BenchConfig& config);

// One row per layer plus a "total" row.
CsvTable bench_table(const BenchResult& result);

}  // namespace ldaprune
