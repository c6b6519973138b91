#include "ldaprune/firing_lda.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ldaprune/error.hpp"
#include "ldaprune/forward.hpp"

namespace ldaprune {

std::vector<std::size_t> NeuronRanking::rank_of() const {
  std::vector<std::size_t> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

FiringMatrix extract_firing_matrix(const ModelDescriptor& model,
                                   std::span<const LabeledImage> images, std::size_t conv_layer) {
  require(conv_layer < model.layers.size() &&
              model.layers[conv_layer].spec.kind == LayerKind::Conv,
          ErrorKind::InvalidArgument,
          "layer " + std::to_string(conv_layer) + " is not a conv layer");
  const std::size_t neurons =
      static_cast<std::size_t>(model.layers[conv_layer].spec.conv.out_channels);
  FiringMatrix x;
  x.values = Matrix(images.size(), neurons);
  for (std::size_t k = 0; k < images.size(); ++k) {
    require(images[k].image.shape() == model.input_shape, ErrorKind::Dimension,
            "image " + images[k].id + " does not match the model input shape");
    Tensor current = images[k].image;
    for (std::size_t i = 0; i <= conv_layer; ++i) current = apply_layer(model.layers[i], current);
    const std::size_t plane = current.size() / neurons;
    for (std::size_t j = 0; j < neurons; ++j) {
      const auto channel = current.data().subspan(j * plane, plane);
      const float top = *std::max_element(channel.begin(), channel.end());
      x.values(k, j) = std::max(0.0f, top);
    }
    x.labels.push_back(images[k].label);
    x.ids.push_back(images[k].id);
  }
  return x;
}

namespace {

constexpr double kConstantStd = 1e-8;

FiringMatrix apply_standardization(const FiringMatrix& x, const std::vector<double>& mean,
                                   const std::vector<double>& stddev,
                                   const std::vector<bool>& constant) {
  FiringMatrix out = x;
  for (std::size_t r = 0; r < x.samples(); ++r)
    for (std::size_t c = 0; c < x.neurons(); ++c) {
      const double centered = x.values(r, c) - mean[c];
      out.values(r, c) = constant[c] ? centered : centered / stddev[c];
    }
  out.standardized = true;
  out.column_mean = mean;
  out.column_std = stddev;
  out.constant_column = constant;
  return out;
}

}  // namespace

FiringMatrix standardize(const FiringMatrix& x) {
  require(x.samples() >= 2, ErrorKind::InvalidArgument, "standardize needs at least 2 rows");
  const std::size_t n = x.samples(), d = x.neurons();
  std::vector<double> mean(d, 0.0), stddev(d, 0.0);
  std::vector<bool> constant(d, false);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < n; ++r) mean[c] += x.values(r, c);
    mean[c] /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double dv = x.values(r, c) - mean[c];
      ss += dv * dv;
    }
    stddev[c] = std::sqrt(ss / static_cast<double>(n));
    constant[c] = stddev[c] < kConstantStd;
  }
  return apply_standardization(x, mean, stddev, constant);
}

FiringMatrix standardize_with(const FiringMatrix& x, const FiringMatrix& reference) {
  require(reference.standardized && reference.column_mean.size() == x.neurons(),
          ErrorKind::InvalidArgument, "reference matrix carries no matching column statistics");
  return apply_standardization(x, reference.column_mean, reference.column_std,
                               reference.constant_column);
}

ScatterPair scatter_matrices(const FiringMatrix& x) {
  const std::size_t n = x.samples(), d = x.neurons();
  require(x.labels.size() == n, ErrorKind::Dimension, "label count != row count");
  ScatterPair s;
  s.mean.assign(d, 0.0);
  for (int c = 0; c < 2; ++c) s.class_mean[c].assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const int label = x.labels[r];
    require(label == 0 || label == 1, ErrorKind::InvalidArgument, "labels must be 0 or 1");
    ++s.class_count[label];
    for (std::size_t j = 0; j < d; ++j) {
      s.class_mean[label][j] += x.values(r, j);
      s.mean[j] += x.values(r, j);
    }
  }
  require(s.class_count[0] > 0 && s.class_count[1] > 0, ErrorKind::InvalidArgument,
          "scatter matrices need both classes present");
  for (std::size_t j = 0; j < d; ++j) {
    s.mean[j] /= static_cast<double>(n);
    for (int c = 0; c < 2; ++c) s.class_mean[c][j] /= static_cast<double>(s.class_count[c]);
  }

  s.within = Matrix(d, d);
  std::vector<double> centered(d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& mu = s.class_mean[x.labels[r]];
    for (std::size_t j = 0; j < d; ++j) centered[j] = x.values(r, j) - mu[j];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) s.within(i, j) += centered[i] * centered[j];
  }
  s.between = Matrix(d, d);
  for (int c = 0; c < 2; ++c) {
    const double weight = static_cast<double>(s.class_count[c]);
    for (std::size_t j = 0; j < d; ++j) centered[j] = s.class_mean[c][j] - s.mean[j];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) s.between(i, j) += weight * centered[i] * centered[j];
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      s.within(i, j) = s.within(j, i);
      s.between(i, j) = s.between(j, i);
    }
  return s;
}

Matrix total_scatter(const FiringMatrix& x) {
  const std::size_t n = x.samples(), d = x.neurons();
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.values(r, j);
  for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(n, 1));
  Matrix t(d, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        t(i, j) += (x.values(r, i) - mean[i]) * (x.values(r, j) - mean[j]);
  return t;
}

namespace {

void sort_ranking(NeuronRanking& r) {
  r.order.resize(r.score.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::sort(r.order.begin(), r.order.end(), [&r](std::size_t a, std::size_t b) {
    if (r.score[a] != r.score[b]) return r.score[a] > r.score[b];
    if (r.between_var[a] != r.between_var[b]) return r.between_var[a] > r.between_var[b];
    return a < b;
  });
}

}  // namespace

NeuronRanking icc_scores(const ScatterPair& scatter) {
  const std::size_t d = scatter.within.rows();
  NeuronRanking r;
  r.within_var.resize(d);
  r.between_var.resize(d);
  r.score.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double w = scatter.within(j, j), b = scatter.between(j, j);
    r.within_var[j] = w;
    r.between_var[j] = b;
    r.score[j] = (w + b) > 0.0 ? b / (b + w) : 0.0;
  }
  sort_ranking(r);
  return r;
}

NeuronRanking rank_and_select(NeuronRanking scores, std::size_t k) {
  require(k >= 1 && k <= scores.score.size(), ErrorKind::InvalidArgument,
          "k must be in [1, " + std::to_string(scores.score.size()) + "], got " +
              std::to_string(k));
  sort_ranking(scores);
  scores.selected.assign(scores.order.begin(),
                         scores.order.begin() + static_cast<std::ptrdiff_t>(k));
  return scores;
}

NeuronRanking variance_ranking_baseline(const FiringMatrix& x) {
  const ScatterPair s = scatter_matrices(x);
  NeuronRanking r = icc_scores(s);
  for (std::size_t j = 0; j < r.score.size(); ++j) r.score[j] = r.within_var[j] + r.between_var[j];
  sort_ranking(r);
  return r;
}

DominanceReport diagonal_dominance(const Matrix& symmetric) {
  require(symmetric.rows() == symmetric.cols(), ErrorKind::Dimension,
          "diagonal dominance needs a square matrix");
  double diag = 0.0, all = 0.0;
  for (std::size_t i = 0; i < symmetric.rows(); ++i)
    for (std::size_t j = 0; j < symmetric.cols(); ++j) {
      const double v = std::abs(symmetric(i, j));
      all += v;
      if (i == j) diag += v;
    }
  if (all == 0.0) return {1.0, true};
  return {diag / all, false};
}

LdaDirections full_lda_directions(const ScatterPair& scatter, std::size_t m) {
  const std::size_t d = scatter.within.rows();
  require(d <= 64, ErrorKind::InvalidArgument,
          "full LDA is limited to d <= 64, got " + std::to_string(d));
  require(m >= 1 && m <= d, ErrorKind::InvalidArgument, "m must be in [1, d]");
  const double trace = scatter.within.trace();
  LdaDirections out;
  out.epsilon = trace > 0.0 ? 1e-6 * trace / static_cast<double>(d) : 1e-6;
  Matrix regularized = scatter.within;
  for (std::size_t i = 0; i < d; ++i) regularized(i, i) += out.epsilon;

  // With A = L L^T, S_b v = lambda A v becomes C u = lambda u, C = L^-1 S_b L^-T, v = L^-T u.
  const Matrix lower = cholesky(regularized);
  Matrix half(d, d);  // L^-1 S_b
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> col(d);
    for (std::size_t r = 0; r < d; ++r) col[r] = scatter.between(r, c);
    const auto y = forward_substitute(lower, col);
    for (std::size_t r = 0; r < d; ++r) half(r, c) = y[r];
  }
  Matrix reduced(d, d);  // (L^-1 (L^-1 S_b)^T)^T = L^-1 S_b L^-T
  for (std::size_t r = 0; r < d; ++r) {
    const auto row = half.row(r);
    const auto y = forward_substitute(lower, std::vector<double>(row.begin(), row.end()));
    for (std::size_t c = 0; c < d; ++c) reduced(r, c) = y[c];
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      reduced(i, j) = reduced(j, i) = 0.5 * (reduced(i, j) + reduced(j, i));

  const SymmetricEigen eig = jacobi_eigen(reduced, 100);
  out.values.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(m));
  out.vectors = Matrix(d, m);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> u(d);
    for (std::size_t r = 0; r < d; ++r) u[r] = eig.vectors(r, j);
    const auto v = backward_substitute_transposed(lower, u);
    for (std::size_t r = 0; r < d; ++r) out.vectors(r, j) = v[r];
  }
  return out;
}

FiringMatrix select_columns(const FiringMatrix& x, std::span<const std::size_t> columns) {
  FiringMatrix out;
  out.values = Matrix(x.samples(), columns.size());
  for (std::size_t r = 0; r < x.samples(); ++r)
    for (std::size_t c = 0; c < columns.size(); ++c) {
      require(columns[c] < x.neurons(), ErrorKind::InvalidArgument, "column index out of range");
      out.values(r, c) = x.values(r, columns[c]);
    }
  out.labels = x.labels;
  out.ids = x.ids;
  out.standardized = x.standardized;
  if (x.standardized) {
    for (std::size_t c : columns) {
      out.column_mean.push_back(x.column_mean[c]);
      out.column_std.push_back(x.column_std[c]);
      out.constant_column.push_back(x.constant_column[c]);
    }
  }
  return out;
}

}  // namespace ldaprune
