#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldaprune/bench.hpp"
#include "ldaprune/classifiers.hpp"
#include "ldaprune/csv.hpp"
#include "ldaprune/dataset.hpp"
#include "ldaprune/deconv.hpp"
#include "ldaprune/firing_lda.hpp"
#include "ldaprune/pruner.hpp"
#include "ldaprune/training.hpp"

namespace ldaprune {

// "synthetic" or "dir:PATH".
struct DatasetSource {
  std::string spec = "synthetic";
  SyntheticConfig synthetic;
};

DatasetSplit load_dataset(const DatasetSource& source);

// "lo:hi:step", inclusive of hi (values rounded to 1e-9).
std::vector<double> parse_grid(const std::string& text);

struct Selection {
  FiringMatrix train;  // standardized, all last-conv neurons
  ScatterPair scatter;
  NeuronRanking ranking;  // ICC, top-k selected
};

Selection select_neurons(const ModelDescriptor& model, std::span<const LabeledImage> train,
                         std::size_t k);

struct HeadOptions {
  double qda_lambda = 1e-3;
  double svm_c = 1.0;
  int svm_epochs = 100;
  double rbf_c = 1.0;
  double rbf_gamma = 0.0;  // 0 -> 1/k
  std::uint64_t seed = 1;
};

// Standardized last-conv firing features restricted to `columns`, with training stats.
struct HeadFeatures {
  FiringMatrix train;
  FiringMatrix test;
  std::vector<std::size_t> columns;
};

HeadFeatures head_features(const ModelDescriptor& model, const DatasetSplit& data,
                           std::span<const std::size_t> columns);

// Feature normalisation stored next to a classifier head ("feature_norm" aux section).
AuxSection encode_feature_norm(const HeadFeatures& features);
void apply_feature_norm(const AuxSection& section, FiringMatrix& rows,
                        std::vector<std::size_t>& columns);

Classifier fit_head(const std::string& name, const HeadFeatures& features,
                    const HeadOptions& options);
std::string head_aux_kind(const std::string& name);  // qda -> "qda", svml -> "svm_linear", ...

// CSV renderers shared by the commands and the pipeline.
CsvTable firing_table(const FiringMatrix& train, const FiringMatrix& test);
CsvTable ranking_table(const NeuronRanking& ranking);
CsvTable matrix_table(const Matrix& m);
CsvTable dependency_table(const DependencyTable& table);
CsvTable plateau_table(const PlateauResult& result);
CsvTable prune_report_table(const PruneReport& report);
CsvTable predictions_table(std::span<const LabeledImage> images, std::span<const int> predicted);

struct SweepPoint {
  double pruning_rate = 0.0;
  double accuracy_delta = 0.0;
  std::string method;  // "lda" or "magnitude"
};
CsvTable sweep_table(const std::vector<SweepPoint>& points);

nlohmann::json train_config_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Every seed and flag of a full run; the pipeline is a pure function of this record.
struct PipelineManifest {
  DatasetSource dataset;
  std::uint64_t model_seed = 1;
  ToyNetConfig net;
  TrainConfig train;
  std::size_t k = 4;
  std::vector<double> grid;
  double epsilon_acc = 0.02;
  TrainConfig search_retrain;
  TrainConfig final_retrain;
  bool magnitude_baseline = true;
  HeadOptions heads;
  bool bench = true;
  BenchConfig bench_config;

  static PipelineManifest defaults(std::uint64_t seed);
  nlohmann::json to_json() const;
  static PipelineManifest from_json(const nlohmann::json& j);
};

struct PipelineResult {
  double base_accuracy = 0.0;
  std::vector<std::size_t> selected;
  PlateauResult plateau;
  double pruned_accuracy = 0.0;  // after the full retrain at t0
  double conv_pruning_rate = 0.0;
  std::vector<SweepPoint> sweep;
  std::map<std::string, double> head_accuracy;  // fc, qda, svml, svmr
  std::optional<BenchResult> bench;
  std::vector<std::string> artifacts;  // file names written into the output directory
};

// Writes manifest.json and every artifact into `out`.
PipelineResult run_pipeline(const PipelineManifest& manifest, const std::filesystem::path& out);

}  // namespace ldaprune
