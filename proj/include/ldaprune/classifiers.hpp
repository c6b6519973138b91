#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "ldaprune/linalg.hpp"
#include "ldaprune/model.hpp"

namespace ldaprune {

struct QdaClass {
  std::vector<double> mean;
  Matrix covariance;  // includes lambda * I
  Matrix cholesky;
  double log_det = 0.0;
  double log_prior = 0.0;
};

struct QdaModel {
  std::size_t dim = 0;
  double lambda = 0.0;
  std::array<QdaClass, 2> classes;
};

struct QdaPrediction {
  int label = 0;
  std::array<double, 2> log_posterior{};  // normalised: log-sum-exp == 0
};

// Features are rows of `x`; labels in {0,1}. Requires N_i > d for each class.
QdaModel qda_fit(const Matrix& x, std::span<const int> labels, double lambda);
QdaPrediction qda_predict(const QdaModel& model, std::span<const double> x);

enum class SvmKernel { Linear, Rbf };

struct SvmModel {
  SvmKernel kernel = SvmKernel::Linear;
  std::size_t dim = 0;
  double c = 1.0;
  double gamma = 0.0;
  double bias = 0.0;
  std::vector<double> weights;        // linear
  Matrix support_vectors;             // rbf
  std::vector<double> dual_coef;      // rbf: alpha_i * y_i, within [-C, C]
  std::vector<double> alpha;          // rbf: alpha_i in [0, C] (fit-time only, not serialised)
  std::vector<int> support_labels;    // rbf: y_i in {-1,+1} (fit-time only)
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  bool converged = true;
  std::vector<double> objective_trace;  // linear: primal objective per epoch
};

// Pegasos-style primal subgradient descent on 1/2 |w|^2 + C sum hinge, step 1/(lambda t)
// with lambda = 1/(C n) and projection onto |w| <= sqrt(2 / lambda). Labels in {-1,+1}.
SvmModel linear_svm_fit(const Matrix& x, std::span<const int> labels, double c, int epochs,
                        std::uint64_t seed);
double linear_svm_objective(const Matrix& x, std::span<const int> labels, double c,
                            std::span<const double> w, double b);

struct RbfSvmOptions {
  double c = 1.0;
  double gamma = 1.0;
  double tol = 1e-3;
  std::size_t max_iterations = 0;  // 0 -> max(10'000'000, 100 n)
};

// SMO with maximal-violating-pair selection until the KKT gap drops below tol.
SvmModel rbf_svm_fit(const Matrix& x, std::span<const int> labels, const RbfSvmOptions& options);

double svm_decision(const SvmModel& model, std::span<const double> x);
// Sign of the decision value; exactly 0 maps to +1.
int svm_predict(const SvmModel& model, std::span<const double> x);

using Classifier = std::variant<QdaModel, SvmModel>;

// Predicted class in {0,1}; SVM +1 -> 1, -1 -> 0.
int classify(const Classifier& classifier, std::span<const double> x);

struct Confusion {
  std::size_t true_positive = 0;  // label 1 predicted 1
  std::size_t true_negative = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  double accuracy = 0.0;

  std::size_t total() const {
    return true_positive + true_negative + false_positive + false_negative;
  }
};

Confusion evaluate_accuracy(const Classifier& classifier, const Matrix& features,
                            std::span<const int> labels);
Confusion confusion_from(std::span<const int> predicted, std::span<const int> labels);

// Maps labels {0,1} to {-1,+1}.
std::vector<int> to_signed_labels(std::span<const int> labels);

// Auxiliary-section encoding ("qda", "svm_linear", "svm_rbf").
AuxSection encode_classifier(const Classifier& classifier);
Classifier decode_classifier(const AuxSection& section);

}  // namespace ldaprune
