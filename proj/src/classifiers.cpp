#include "ldaprune/classifiers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "ldaprune/error.hpp"

namespace ldaprune {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_binary(std::span<const int> labels, std::size_t rows) {
  require(labels.size() == rows, ErrorKind::Dimension,
          "label count " + std::to_string(labels.size()) + " != row count " +
              std::to_string(rows));
}

}  // namespace

QdaModel qda_fit(const Matrix& x, std::span<const int> labels, double lambda) {
  check_binary(labels, x.rows());
  require(lambda >= 0.0, ErrorKind::InvalidArgument, "lambda must be >= 0");
  const std::size_t d = x.cols();
  QdaModel model;
  model.dim = d;
  model.lambda = lambda;
  std::size_t counts[2] = {0, 0};
  for (int l : labels) {
    require(l == 0 || l == 1, ErrorKind::InvalidArgument, "QDA labels must be 0 or 1");
    ++counts[l];
  }
  for (int c = 0; c < 2; ++c) {
    require(counts[c] > 0, ErrorKind::InvalidArgument,
            "class " + std::to_string(c) + " is absent from the QDA training data");
    require(counts[c] > d, ErrorKind::InvalidArgument,
            "QDA needs more samples than dimensions per class: class " + std::to_string(c) +
                " has " + std::to_string(counts[c]) + " samples for d=" + std::to_string(d) +
                "; select fewer neurons (smaller k) or add data");
  }
  for (int c = 0; c < 2; ++c) {
    QdaClass& cls = model.classes[static_cast<std::size_t>(c)];
    cls.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
      if (labels[r] == c)
        for (std::size_t j = 0; j < d; ++j) cls.mean[j] += x(r, j);
    for (double& m : cls.mean) m /= static_cast<double>(counts[c]);
    cls.covariance = Matrix(d, d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      if (labels[r] != c) continue;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          cls.covariance(i, j) += (x(r, i) - cls.mean[i]) * (x(r, j) - cls.mean[j]);
    }
    const double norm = 1.0 / static_cast<double>(counts[c] - 1);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) cls.covariance(i, j) *= norm;
      cls.covariance(i, i) += lambda;
    }
    try {
      cls.cholesky = cholesky(cls.covariance);
    } catch (const Error&) {
      fail(ErrorKind::Numeric, "class " + std::to_string(c) +
                                   " covariance is not positive definite; increase lambda");
    }
    cls.log_det = cholesky_log_det(cls.cholesky);
    cls.log_prior = std::log(static_cast<double>(counts[c]) / static_cast<double>(x.rows()));
  }
  return model;
}

QdaPrediction qda_predict(const QdaModel& model, std::span<const double> x) {
  require(x.size() == model.dim, ErrorKind::Dimension,
          "QDA expects " + std::to_string(model.dim) + " features, got " +
              std::to_string(x.size()));
  QdaPrediction out;
  for (std::size_t c = 0; c < 2; ++c) {
    const QdaClass& cls = model.classes[c];
    std::vector<double> diff(model.dim);
    for (std::size_t j = 0; j < model.dim; ++j) diff[j] = x[j] - cls.mean[j];
    const auto z = forward_substitute(cls.cholesky, diff);  // |L^-1 (x - mu)|^2 = Mahalanobis
    const double maha = std::inner_product(z.begin(), z.end(), z.begin(), 0.0);
    out.log_posterior[c] = cls.log_prior - 0.5 * cls.log_det - 0.5 * maha -
                           0.5 * static_cast<double>(model.dim) * kLog2Pi;
  }
  const double top = std::max(out.log_posterior[0], out.log_posterior[1]);
  const double lse =
      top + std::log(std::exp(out.log_posterior[0] - top) + std::exp(out.log_posterior[1] - top));
  for (double& lp : out.log_posterior) lp -= lse;
  out.label = out.log_posterior[1] > out.log_posterior[0] ? 1 : 0;
  return out;
}

std::vector<int> to_signed_labels(std::span<const int> labels) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(l == 1 ? 1 : -1);
  return out;
}

double linear_svm_objective(const Matrix& x, std::span<const int> labels, double c,
                            std::span<const double> w, double b) {
  double reg = 0.5 * std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
  double hinge = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const double f = std::inner_product(row.begin(), row.end(), w.begin(), b);
    hinge += std::max(0.0, 1.0 - labels[r] * f);
  }
  return reg + c * hinge;
}

SvmModel linear_svm_fit(const Matrix& x, std::span<const int> labels, double c, int epochs,
                        std::uint64_t seed) {
  check_binary(labels, x.rows());
  require(c > 0.0, ErrorKind::InvalidArgument, "C must be > 0");
  require(epochs >= 1, ErrorKind::InvalidArgument, "epochs must be >= 1");
  bool has_pos = false, has_neg = false;
  for (int l : labels) {
    require(l == 1 || l == -1, ErrorKind::InvalidArgument, "SVM labels must be -1 or +1");
    (l == 1 ? has_pos : has_neg) = true;
  }
  require(has_pos && has_neg, ErrorKind::InvalidArgument,
          "linear SVM needs both labels present");

  const std::size_t n = x.rows(), d = x.cols();
  const double lambda = 1.0 / (c * static_cast<double>(n));
  const double radius = std::sqrt(2.0 / lambda);
  const std::size_t total = static_cast<std::size_t>(epochs) * n;
  std::vector<double> w(d, 0.0), avg_w(d, 0.0);
  double b = 0.0, avg_b = 0.0;
  std::size_t averaged = 0;

  SvmModel model;
  model.kernel = SvmKernel::Linear;
  model.dim = d;
  model.c = c;
  model.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::size_t t = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[rng() % k]);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto row = x.row(i);
      const double margin = labels[i] * std::inner_product(row.begin(), row.end(), w.begin(), b);
      const double shrink = 1.0 - eta * lambda;
      for (double& wj : w) wj *= shrink;
      if (margin < 1.0) {
        for (std::size_t j = 0; j < d; ++j) w[j] += eta * labels[i] * row[j];
        b += eta * labels[i];
      }
      // The optimum satisfies |w| <= sqrt(2/lambda); projecting keeps early huge steps from
      // leaving the bias stranded far from it.
      const double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
      if (norm > radius)
        for (double& wj : w) wj *= radius / norm;
      if (2 * t > total) {
        ++averaged;
        const double step = 1.0 / static_cast<double>(averaged);
        for (std::size_t j = 0; j < d; ++j) avg_w[j] += (w[j] - avg_w[j]) * step;
        avg_b += (b - avg_b) * step;
      }
    }
    const bool have_avg = averaged > 0;
    model.objective_trace.push_back(linear_svm_objective(x, labels, c, have_avg ? avg_w : w,
                                                         have_avg ? avg_b : b));
  }
  const double last_obj = linear_svm_objective(x, labels, c, w, b);
  const double avg_obj = linear_svm_objective(x, labels, c, avg_w, avg_b);
  if (avg_obj <= last_obj) {
    model.weights = avg_w;
    model.bias = avg_b;
  } else {
    model.weights = w;
    model.bias = b;
  }
  model.iterations = t;
  return model;
}

namespace {

double rbf(std::span<const double> a, std::span<const double> b, double gamma) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return std::exp(-gamma * s);
}

}  // namespace

SvmModel rbf_svm_fit(const Matrix& x, std::span<const int> labels, const RbfSvmOptions& options) {
  check_binary(labels, x.rows());
  const std::size_t n = x.rows(), d = x.cols();
  require(n <= 5000, ErrorKind::InvalidArgument,
          "RBF SVM is limited to 5000 samples, got " + std::to_string(n));
  require(options.c > 0.0 && options.gamma > 0.0 && options.tol > 0.0,
          ErrorKind::InvalidArgument, "C, gamma and tol must be > 0");
  bool has_pos = false, has_neg = false;
  for (int l : labels) {
    require(l == 1 || l == -1, ErrorKind::InvalidArgument, "SVM labels must be -1 or +1");
    (l == 1 ? has_pos : has_neg) = true;
  }
  require(has_pos && has_neg, ErrorKind::InvalidArgument, "RBF SVM needs both labels present");

  const double c = options.c;
  std::vector<float> kernel(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      kernel[i * n + j] = kernel[j * n + i] =
          static_cast<float>(rbf(x.row(i), x.row(j), options.gamma));
  auto q = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(labels[i] * labels[j]) * kernel[i * n + j];
  };

  // Dual: min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0. grad = Qa - e.
  std::vector<double> alpha(n, 0.0), grad(n, -1.0);
  const std::size_t max_iter =
      options.max_iterations ? options.max_iterations : std::max<std::size_t>(10'000'000, 100 * n);
  constexpr double kTau = 1e-12;
  auto in_up = [&](std::size_t t) {
    return (labels[t] == 1 && alpha[t] < c) || (labels[t] == -1 && alpha[t] > 0.0);
  };
  auto in_low = [&](std::size_t t) {
    return (labels[t] == 1 && alpha[t] > 0.0) || (labels[t] == -1 && alpha[t] < c);
  };

  SvmModel model;
  model.kernel = SvmKernel::Rbf;
  model.dim = d;
  model.c = c;
  model.gamma = options.gamma;
  model.converged = false;
  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -labels[t] * grad[t];
      if (in_up(t) && v > gmax) {
        gmax = v;
        i = t;
      }
      if (in_low(t) && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    if (i == n || j == n || gmax - gmin < options.tol) {
      model.converged = true;
      break;
    }
    const double old_i = alpha[i], old_j = alpha[j];
    if (labels[i] != labels[j]) {
      double quad = kernel[i * n + i] + kernel[j * n + j] + 2.0 * q(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) { alpha[j] = 0.0; alpha[i] = diff; }
      } else {
        if (alpha[i] < 0.0) { alpha[i] = 0.0; alpha[j] = -diff; }
      }
      if (diff > 0.0) {
        if (alpha[i] > c) { alpha[i] = c; alpha[j] = c - diff; }
      } else {
        if (alpha[j] > c) { alpha[j] = c; alpha[i] = c + diff; }
      }
    } else {
      double quad = kernel[i * n + i] + kernel[j * n + j] - 2.0 * q(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) { alpha[i] = c; alpha[j] = sum - c; }
      } else {
        if (alpha[j] < 0.0) { alpha[j] = 0.0; alpha[i] = sum; }
      }
      if (sum > c) {
        if (alpha[j] > c) { alpha[j] = c; alpha[i] = sum - c; }
      } else {
        if (alpha[i] < 0.0) { alpha[i] = 0.0; alpha[j] = sum; }
      }
    }
    const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
    for (std::size_t t = 0; t < n; ++t) grad[t] += q(i, t) * di + q(j, t) * dj;
  }
  model.iterations = iter;

  // Offset: average over free vectors, else the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = labels[t] * grad[t];
    if (alpha[t] >= c) {
      if (labels[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0.0) {
      if (labels[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++free_count;
      free_sum += yg;
    }
  }
  const double rho = free_count ? free_sum / static_cast<double>(free_count) : (ub + lb) / 2.0;
  model.bias = -rho;

  std::vector<std::size_t> support;
  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0.0) support.push_back(t);
  if (support.empty()) {
    // Degenerate fit (all alphas zero): keep one vector with a zero coefficient.
    support.push_back(0);
  }
  model.support_vectors = Matrix(support.size(), d);
  for (std::size_t s = 0; s < support.size(); ++s) {
    const auto row = x.row(support[s]);
    std::copy(row.begin(), row.end(), model.support_vectors.row(s).begin());
    model.dual_coef.push_back(alpha[support[s]] * labels[support[s]]);
    model.alpha.push_back(alpha[support[s]]);
    model.support_labels.push_back(labels[support[s]]);
  }
  return model;
}

double svm_decision(const SvmModel& model, std::span<const double> x) {
  require(x.size() == model.dim, ErrorKind::Dimension,
          "SVM expects " + std::to_string(model.dim) + " features, got " +
              std::to_string(x.size()));
  if (model.kernel == SvmKernel::Linear)
    return std::inner_product(x.begin(), x.end(), model.weights.begin(), model.bias);
  double f = model.bias;
  for (std::size_t s = 0; s < model.dual_coef.size(); ++s)
    f += model.dual_coef[s] * rbf(model.support_vectors.row(s), x, model.gamma);
  return f;
}

int svm_predict(const SvmModel& model, std::span<const double> x) {
  return svm_decision(model, x) >= 0.0 ? 1 : -1;
}

int classify(const Classifier& classifier, std::span<const double> x) {
  if (const auto* qda = std::get_if<QdaModel>(&classifier)) return qda_predict(*qda, x).label;
  return svm_predict(std::get<SvmModel>(classifier), x) == 1 ? 1 : 0;
}

Confusion confusion_from(std::span<const int> predicted, std::span<const int> labels) {
  require(predicted.size() == labels.size(), ErrorKind::Dimension,
          "prediction/label count mismatch");
  require(!labels.empty(), ErrorKind::InvalidArgument, "cannot evaluate on an empty set");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predicted[i] == 1, t = labels[i] == 1;
    if (p && t) ++c.true_positive;
    else if (!p && !t) ++c.true_negative;
    else if (p) ++c.false_positive;
    else ++c.false_negative;
  }
  c.accuracy = static_cast<double>(c.true_positive + c.true_negative) /
               static_cast<double>(labels.size());
  return c;
}

Confusion evaluate_accuracy(const Classifier& classifier, const Matrix& features,
                            std::span<const int> labels) {
  check_binary(labels, features.rows());
  std::vector<int> predicted;
  predicted.reserve(features.rows());
  for (std::size_t r = 0; r < features.rows(); ++r)
    predicted.push_back(classify(classifier, features.row(r)));
  return confusion_from(predicted, labels);
}

namespace {

class BlobWriter {
 public:
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void vec(std::span<const double> values) {
    for (double v : values) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  double f64() {
    require(pos_ + 8 <= bytes_.size(), ErrorKind::Truncated, "classifier blob truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  std::size_t count() {
    const double v = f64();
    require(v >= 0.0 && v < 1e9 && v == std::floor(v), ErrorKind::Format,
            "invalid count in classifier blob");
    return static_cast<std::size_t>(v);
  }
  std::vector<double> vec(std::size_t n) {
    std::vector<double> out(n);
    for (double& v : out) v = f64();
    return out;
  }
  void finish() const {
    require(pos_ == bytes_.size(), ErrorKind::Format, "trailing bytes in classifier blob");
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

AuxSection encode_classifier(const Classifier& classifier) {
  BlobWriter w;
  if (const auto* qda = std::get_if<QdaModel>(&classifier)) {
    w.f64(static_cast<double>(qda->dim));
    w.f64(qda->lambda);
    for (const QdaClass& cls : qda->classes) {
      w.f64(cls.log_prior);
      w.vec(cls.mean);
      w.vec(cls.covariance.values());
    }
    return {"qda", w.take()};
  }
  const SvmModel& svm = std::get<SvmModel>(classifier);
  w.f64(static_cast<double>(svm.dim));
  w.f64(svm.c);
  w.f64(svm.bias);
  w.f64(static_cast<double>(svm.iterations));
  w.f64(static_cast<double>(svm.seed));
  w.f64(svm.converged ? 1.0 : 0.0);
  if (svm.kernel == SvmKernel::Linear) {
    w.vec(svm.weights);
    return {"svm_linear", w.take()};
  }
  w.f64(svm.gamma);
  w.f64(static_cast<double>(svm.dual_coef.size()));
  w.vec(svm.dual_coef);
  w.vec(svm.support_vectors.values());
  return {"svm_rbf", w.take()};
}

Classifier decode_classifier(const AuxSection& section) {
  BlobReader r(section.blob);
  if (section.kind == "qda") {
    QdaModel qda;
    qda.dim = r.count();
    qda.lambda = r.f64();
    for (QdaClass& cls : qda.classes) {
      cls.log_prior = r.f64();
      cls.mean = r.vec(qda.dim);
      cls.covariance = Matrix(qda.dim, qda.dim);
      for (std::size_t i = 0; i < qda.dim; ++i)
        for (std::size_t j = 0; j < qda.dim; ++j) cls.covariance(i, j) = r.f64();
      cls.cholesky = cholesky(cls.covariance);
      cls.log_det = cholesky_log_det(cls.cholesky);
    }
    r.finish();
    return qda;
  }
  require(section.kind == "svm_linear" || section.kind == "svm_rbf", ErrorKind::Format,
          "unknown classifier kind '" + section.kind + "'");
  SvmModel svm;
  svm.dim = r.count();
  svm.c = r.f64();
  svm.bias = r.f64();
  svm.iterations = r.count();
  svm.seed = static_cast<std::uint64_t>(r.f64());
  svm.converged = r.f64() != 0.0;
  if (section.kind == "svm_linear") {
    svm.kernel = SvmKernel::Linear;
    svm.weights = r.vec(svm.dim);
  } else {
    svm.kernel = SvmKernel::Rbf;
    svm.gamma = r.f64();
    const std::size_t nsv = r.count();
    svm.dual_coef = r.vec(nsv);
    svm.support_vectors = Matrix(nsv, svm.dim);
    for (std::size_t s = 0; s < nsv; ++s)
      for (std::size_t j = 0; j < svm.dim; ++j) svm.support_vectors(s, j) = r.f64();
  }
  r.finish();
  return svm;
}

}  // namespace ldaprune
