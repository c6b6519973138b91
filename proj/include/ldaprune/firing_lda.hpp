#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ldaprune/dataset.hpp"
#include "ldaprune/linalg.hpp"
#include "ldaprune/model.hpp"

namespace ldaprune {

// Rows = images, columns = last-conv neurons, entries = firing scores (max post-ReLU
// activation of the neuron's feature map).
struct FiringMatrix {
  Matrix values;
  std::vector<int> labels;
  std::vector<std::string> ids;

  bool standardized = false;
  std::vector<double> column_mean;
  std::vector<double> column_std;
  std::vector<bool> constant_column;

  std::size_t samples() const { return values.rows(); }
  std::size_t neurons() const { return values.cols(); }
};

struct ScatterPair {
  Matrix within;   // S_w
  Matrix between;  // S_b
  std::vector<double> mean;
  std::vector<double> class_mean[2];
  std::size_t class_count[2] = {0, 0};
};

struct NeuronRanking {
  std::vector<double> within_var;   // s^2(w) per neuron
  std::vector<double> between_var;  // s^2(b) per neuron
  std::vector<double> score;        // ICC (or total variance for the baseline)
  std::vector<std::size_t> order;   // neuron indices, best first
  std::vector<std::size_t> selected;

  // 0-based position of each neuron in `order`.
  std::vector<std::size_t> rank_of() const;
};

// Runs layers [0, conv_layer] only; scores are max(0, channel max) which equals the
// post-ReLU channel max.
FiringMatrix extract_firing_matrix(const ModelDescriptor& model,
                                   std::span<const LabeledImage> images, std::size_t conv_layer);

// Per-column z-score with population stddev. Columns with stddev < 1e-8 are centered
// only and flagged constant.
FiringMatrix standardize(const FiringMatrix& x);
// Applies another matrix's column statistics (e.g. training stats on test rows).
FiringMatrix standardize_with(const FiringMatrix& x, const FiringMatrix& reference);

// Raw-sum within-class and between-class scatter (no 1/N normalisation).
ScatterPair scatter_matrices(const FiringMatrix& x);
Matrix total_scatter(const FiringMatrix& x);

// ICC_j = S_b[j,j] / (S_b[j,j] + S_w[j,j]); 0 when both are 0. Ranking by ICC
// descending, ties by larger S_b[j,j], then smaller index. No selection.
NeuronRanking icc_scores(const ScatterPair& scatter);
// Orders by score (ties: larger between_var, then index) and keeps the first k.
NeuronRanking rank_and_select(NeuronRanking scores, std::size_t k);
// Ranks neurons by total variance (diagonal of S_w + S_b).
NeuronRanking variance_ranking_baseline(const FiringMatrix& x);

struct DominanceReport {
  double metric = 1.0;
  bool degenerate = false;  // all-zero matrix
};
// sum_j |S[j,j]| / sum_ij |S[i,j]|.
DominanceReport diagonal_dominance(const Matrix& symmetric);

struct LdaDirections {
  std::vector<double> values;  // descending
  Matrix vectors;              // d x m, unit norm in the (S_w + eps I) metric
  double epsilon = 0.0;
};
// Top-m solutions of S_b v = lambda (S_w + eps I) v with eps = 1e-6 * trace(S_w) / d.
LdaDirections full_lda_directions(const ScatterPair& scatter, std::size_t m);

// Keeps only the listed columns, in the listed order.
FiringMatrix select_columns(const FiringMatrix& x, std::span<const std::size_t> columns);

}  // namespace ldaprune
