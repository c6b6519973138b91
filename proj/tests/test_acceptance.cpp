#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "fd_oracle.hpp"
#include "ldaprune/deconv.hpp"
#include "ldaprune/model_io.hpp"
#include "ldaprune/pipeline.hpp"
#include "support.hpp"

using namespace ldaprune;
namespace fs = std::filesystem;

namespace {

// Artifacts of the full default pipeline, produced by the acceptance fixture.
const fs::path kRunDir = fs::path(LDAPRUNE_ACCEPT_DIR) / "run";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE_MESSAGE(static_cast<bool>(is), "missing artifact " << p);
  return {std::istreambuf_iterator<char>(is), {}};
}

PipelineManifest run_manifest() {
  return PipelineManifest::from_json(nlohmann::json::parse(slurp(kRunDir / "manifest.json")));
}

double recount_accuracy(const CsvTable& predictions) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < predictions.rows.size(); ++r)
    correct += predictions.text(r, "label") == predictions.text(r, "predicted");
  return static_cast<double>(correct) / static_cast<double>(predictions.rows.size());
}

std::vector<std::vector<std::size_t>> random_keeps(const ModelDescriptor& m, std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> keeps;
  for (std::size_t l : conv_layer_indices(m)) {
    const auto n = static_cast<std::size_t>(m.layers[l].spec.conv.out_channels);
    std::vector<std::size_t> keep;
    for (std::size_t f = 0; f < n; ++f)
      if (rng() % 2) keep.push_back(f);
    if (keep.empty()) keep.push_back(rng() % n);
    keeps.push_back(keep);
  }
  return keeps;
}

}  // namespace

TEST_CASE("gradients match finite differences for every layer kind") {
  const auto start = std::chrono::steady_clock::now();
  using L = LayerSpec;
  const Shape in = {3, 4, 4};
  const std::vector<std::pair<std::string, std::vector<LayerSpec>>> nets = {
      {"dense", {L::make_flatten(), L::make_dense(2, 48), L::make_softmax()}},
      {"conv pad 1", {L::make_conv(2, 3, 3, 1, 1), L::make_flatten(), L::make_dense(2, 32),
                      L::make_softmax()}},
      {"conv stride 2", {L::make_conv(3, 3, 3, 2, 1), L::make_flatten(), L::make_dense(2, 12),
                         L::make_softmax()}},
      {"relu", {L::make_conv(2, 3, 1, 1, 0), L::make_relu(), L::make_flatten(),
                L::make_dense(2, 32), L::make_softmax()}},
      {"maxpool", {L::make_maxpool(2, 2), L::make_flatten(), L::make_dense(2, 12),
                   L::make_softmax()}},
      {"stack", {L::make_conv(3, 3, 3, 1, 1), L::make_relu(), L::make_maxpool(2, 2),
                 L::make_conv(4, 3, 3, 1, 1), L::make_relu(), L::make_flatten(),
                 L::make_dense(2, 16), L::make_softmax()}},
  };
  for (const auto& [name, specs] : nets) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const ModelDescriptor m = build_model(in, specs, seed);
      const auto [check, input_seed] = testsupport::smooth_gradient_check(m, in, 10 * seed);
      INFO(name << " seed " << seed << " input " << input_seed << " max rel " << check.max_rel);
      CHECK(check.params == model_param_count(m).total);
      CHECK(check.max_rel < 1e-3);
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  INFO("runtime " << seconds << " s");
  CHECK(seconds < 60.0);
}

TEST_CASE("scatter identity and ICC against a two-pass variance oracle") {
  constexpr std::size_t n = 200, d = 16;
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  FiringMatrix x;
  x.values = Matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const int label = static_cast<int>(rng() % 2);
    x.labels.push_back(label);
    x.ids.push_back(std::to_string(r));
    for (std::size_t j = 0; j < d; ++j)
      x.values(r, j) = g(rng) * (0.5 + 0.1 * j) + label * 0.2 * static_cast<double>(j % 5);
  }
  const ScatterPair s = scatter_matrices(x);
  const Matrix total = total_scatter(x);
  const Matrix sum = s.within + s.between;
  double scale = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < d * d; ++i) {
    scale = std::max(scale, std::abs(total.values()[i]));
    worst = std::max(worst, std::abs(sum.values()[i] - total.values()[i]));
  }
  CHECK(worst <= 1e-4 * scale);

  const NeuronRanking ranking = icc_scores(s);
  for (std::size_t j = 0; j < d; ++j) {
    // Pass 1: means. Pass 2: squared deviations.
    double mean = 0.0, cm[2] = {0, 0};
    std::size_t cn[2] = {0, 0};
    for (std::size_t r = 0; r < n; ++r) {
      mean += x.values(r, j);
      cm[x.labels[r]] += x.values(r, j);
      ++cn[x.labels[r]];
    }
    mean /= n;
    for (int c = 0; c < 2; ++c) cm[c] /= static_cast<double>(cn[c]);
    double within = 0.0;
    for (std::size_t r = 0; r < n; ++r) within += std::pow(x.values(r, j) - cm[x.labels[r]], 2);
    double between = 0.0;
    for (int c = 0; c < 2; ++c) between += static_cast<double>(cn[c]) * std::pow(cm[c] - mean, 2);
    const double icc = between / (between + within);
    INFO("neuron " << j);
    CHECK(std::abs(ranking.score[j] - icc) <= 1e-6);
  }
}

TEST_CASE("diagonal scatter pairs: LDA top-k equals the ICC top-k basis") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  constexpr std::size_t d = 8;
  double worst_residual = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    ScatterPair s;
    s.within = Matrix(d, d);
    s.between = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      s.within(i, i) = u(rng);
      s.between(i, i) = u(rng);
    }
    const LdaDirections lda = full_lda_directions(s, d);
    const NeuronRanking icc = icc_scores(s);
    Matrix reg = s.within;
    for (std::size_t i = 0; i < d; ++i) reg(i, i) += lda.epsilon;
    std::vector<std::size_t> lda_axis;
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> v(d);
      double norm = 0.0;
      for (std::size_t i = 0; i < d; ++i) norm += std::pow(v[i] = lda.vectors(i, k), 2);
      norm = std::sqrt(norm);
      std::size_t axis = 0;
      for (std::size_t i = 0; i < d; ++i)
        if (std::abs(v[i]) > std::abs(v[axis])) axis = i;
      CHECK(std::abs(v[axis]) / norm == doctest::Approx(1.0).epsilon(1e-6));
      lda_axis.push_back(axis);
      const auto lhs = s.between * std::span<const double>(v);
      const auto rhs = reg * std::span<const double>(v);
      double res = 0.0;
      for (std::size_t i = 0; i < d; ++i) res += std::pow(lhs[i] - lda.values[k] * rhs[i], 2);
      worst_residual = std::max(worst_residual, std::sqrt(res));
    }
    for (std::size_t k = 1; k <= d; ++k) {
      const std::set<std::size_t> a(lda_axis.begin(), lda_axis.begin() + k);
      const std::set<std::size_t> b(icc.order.begin(), icc.order.begin() + k);
      INFO("trial " << trial << " k " << k);
      CHECK(a == b);
    }
  }
  CHECK(worst_residual < 1e-4);
}

TEST_CASE("deconv adjointness and unpool round trip") {
  std::mt19937_64 rng(4242);
  auto pick = [&](int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int C = pick(1, 5), O = pick(1, 5), kh = pick(1, 3), kw = pick(1, 3);
    const int stride = pick(1, 2), pad = pick(0, std::min(kh, kw) - 1);
    const int H = pick(kh, 10), W = pick(kw, 10);
    const Tensor x = testsupport::random_tensor({C, H, W}, rng());
    const Tensor k = testsupport::random_tensor({O, C, kh, kw}, rng());
    const std::vector<float> zero(static_cast<std::size_t>(O), 0.0f);
    const Tensor cx = conv2d_forward(x, k, zero, stride, pad);
    const Tensor y = testsupport::random_tensor(cx.shape(), rng());
    const Tensor ty = transposed_conv(y, k, stride, pad, x.shape());
    long double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cx.size(); ++i) lhs += static_cast<long double>(cx[i]) * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += static_cast<long double>(x[i]) * ty[i];
    const double rel = static_cast<double>(std::abs(lhs - rhs) /
                                           std::max({std::abs(lhs), std::abs(rhs), 1e-6L}));
    worst = std::max(worst, rel);
  }
  INFO("worst relative adjoint gap " << worst);
  CHECK(worst < 1e-4);

  for (int trial = 0; trial < 20; ++trial) {
    const int C = pick(1, 4), H = 2 * pick(1, 6), W = 2 * pick(1, 6);
    const Tensor x = testsupport::random_tensor({C, H, W}, rng(), 0.01f, 1.0f);
    const PoolResult p = maxpool_forward(x, 2, 2);
    const Tensor up = unpool(p.output, p.switches, x.shape());
    CHECK(maxpool_forward(up, 2, 2).output == p.output);
    for (std::size_t i = 0; i < p.switches.argmax.size(); ++i)
      CHECK(up[p.switches.argmax[i]] == x[p.switches.argmax[i]]);
  }
}

TEST_CASE("pruned and masked networks agree on the trained toy net") {
  const ModelDescriptor model = load_model(kRunDir / "model.ldap");
  const DatasetSplit data = load_dataset(run_manifest().dataset);
  REQUIRE(data.test.size() >= 50);
  const std::span<const LabeledImage> images(data.test.data(), 50);
  std::mt19937_64 rng(2718);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const PrunePlan plan = make_plan(model, random_keeps(model, rng));
    worst = std::max(worst, equivalence_check(model, plan, images));
  }
  INFO("worst relative logit deviation " << worst);
  CHECK(worst <= 1e-4);
}

TEST_CASE("end to end run prunes at the plateau and keeps accuracy") {
  const PipelineManifest manifest = run_manifest();
  const DatasetSplit data = load_dataset(manifest.dataset);
  const ModelDescriptor model = load_model(kRunDir / "model.ldap");
  const ModelDescriptor pruned = load_model(kRunDir / "pruned.ldap");

  const auto convs = conv_layer_indices(model);
  CHECK(convs.size() == 6);
  CHECK(model.layers[convs.back()].spec.conv.out_channels == 32);

  const double base = model_accuracy(model, data.test);
  INFO("base accuracy " << base);
  CHECK(base >= 0.95);

  // Selection is re-derived here and must match the emitted ranking.
  CHECK(manifest.k == 4);
  const Selection sel = select_neurons(model, data.train, manifest.k);
  const CsvTable ranking = read_csv(kRunDir / "ranking.csv");
  std::set<std::size_t> emitted;
  for (std::size_t r = 0; r < ranking.rows.size(); ++r)
    if (ranking.text(r, "selected") == "1")
      emitted.insert(static_cast<std::size_t>(ranking.number(r, "neuron")));
  CHECK(emitted == std::set<std::size_t>(sel.ranking.selected.begin(), sel.ranking.selected.end()));
  CHECK(pruned.layers[*last_conv_index(pruned)].spec.conv.out_channels == 4);

  // Plateau oracle: largest threshold whose retrained accuracy is within epsilon of the best.
  const CsvTable plateau = read_csv(kRunDir / "plateau.csv");
  double best = 0.0;
  for (std::size_t r = 0; r < plateau.rows.size(); ++r)
    best = std::max(best, plateau.number(r, "accuracy_after_retrain"));
  double expected_t0 = -1.0, chosen_t0 = -2.0;
  for (std::size_t r = 0; r < plateau.rows.size(); ++r) {
    if (plateau.number(r, "accuracy_after_retrain") >= best - manifest.epsilon_acc)
      expected_t0 = std::max(expected_t0, plateau.number(r, "threshold"));
    if (plateau.text(r, "t0") == "1") chosen_t0 = plateau.number(r, "threshold");
  }
  CHECK(chosen_t0 == expected_t0);
  char note[64];
  std::snprintf(note, sizeof note, "threshold %.6g", chosen_t0);
  CHECK(pruned.provenance.find(note) != std::string::npos);

  const double final_acc = model_accuracy(pruned, data.test);
  const double reduction = 1.0 - static_cast<double>(model_param_count(pruned).conv) /
                                     static_cast<double>(model_param_count(model).conv);
  INFO("final accuracy " << final_acc << " conv reduction " << reduction);
  CHECK(std::abs(final_acc - base) <= 0.02);
  CHECK(reduction >= 0.5);
}

TEST_CASE("pruned net is faster and its file shrinks with its parameter count") {
  const PipelineManifest manifest = run_manifest();
  CHECK(manifest.bench);
  CHECK(manifest.bench_config.runs >= 30);
  CHECK(manifest.bench_config.warmup >= 5);
  const CsvTable bench = read_csv(kRunDir / "bench.csv");
  REQUIRE(!bench.rows.empty());
  const std::size_t total = bench.rows.size() - 1;
  REQUIRE(bench.text(total, "layer") == "total");
  const double speedup = bench.number(total, "base_ms") / bench.number(total, "pruned_ms");
  INFO("median per-image speedup " << speedup);
  CHECK(speedup >= 1.5);

  const ModelDescriptor model = load_model(kRunDir / "model.ldap");
  const ModelDescriptor pruned = load_model(kRunDir / "pruned.ldap");
  const double file_ratio = static_cast<double>(fs::file_size(kRunDir / "model.ldap")) /
                            static_cast<double>(fs::file_size(kRunDir / "pruned.ldap"));
  const double param_ratio = static_cast<double>(model_param_count(model).total) /
                             static_cast<double>(model_param_count(pruned).total);
  // Each file is magic + length field + text header + 4 bytes per parameter.
  for (const auto& [name, m] : {std::pair{"model.ldap", &model}, std::pair{"pruned.ldap", &pruned}}) {
    const std::size_t header = model_header_json(*m).size();
    INFO(name << " header bytes " << header);
    CHECK(fs::file_size(kRunDir / name) == 13 + header + 4 * model_param_count(*m).total);
  }
  INFO("file ratio " << file_ratio << " param ratio " << param_ratio);
  CHECK(std::abs(file_ratio / param_ratio - 1.0) <= 0.10);
}

TEST_CASE("LDA pruning holds up against magnitude masking at high rates") {
  const CsvTable sweep = read_csv(kRunDir / "sweep.csv");
  std::map<std::string, std::map<std::string, double>> by_method;
  for (std::size_t r = 0; r < sweep.rows.size(); ++r)
    by_method[sweep.text(r, "method")][sweep.text(r, "pruning_rate")] =
        sweep.number(r, "accuracy_delta");
  REQUIRE(by_method.count("lda") == 1);
  REQUIRE(by_method.count("magnitude") == 1);
  std::size_t compared = 0;
  for (const auto& [rate, lda_delta] : by_method["lda"]) {
    if (std::stod(rate) < 0.7) continue;
    const auto it = by_method["magnitude"].find(rate);
    if (it == by_method["magnitude"].end()) continue;
    ++compared;
    INFO("rate " << rate << " lda " << lda_delta << " magnitude " << it->second);
    CHECK(lda_delta >= it->second - 0.02);
  }
  CHECK(compared >= 1);
}

TEST_CASE("classifier heads on the reduced features") {
  const CsvTable fc = read_csv(kRunDir / "predictions_fc.csv");
  const double fc_acc = recount_accuracy(fc);
  for (const char* head : {"qda", "svml"}) {
    const double acc = recount_accuracy(read_csv(kRunDir / (std::string("predictions_") + head + ".csv")));
    INFO(head << " " << acc << " vs network head " << fc_acc);
    CHECK(std::abs(acc - fc_acc) <= 0.02);
  }

  Matrix xor_x(4, 2);
  const double pts[4][2] = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) xor_x(i, j) = pts[i][j];
  const std::vector<int> xor_y = {-1, -1, 1, 1};
  RbfSvmOptions o;
  o.gamma = 1.0;
  o.c = 10.0;
  const SvmModel rbf = rbf_svm_fit(xor_x, xor_y, o);
  for (std::size_t i = 0; i < 4; ++i) CHECK(svm_predict(rbf, xor_x.row(i)) == xor_y[i]);

  // 16 training images per class cannot support a 32-dimensional covariance.
  const ModelDescriptor model = load_model(kRunDir / "model.ldap");
  DatasetSource small = run_manifest().dataset;
  small.synthetic.n_per_class = 20;
  const DatasetSplit data = load_dataset(small);
  std::vector<std::size_t> all(32);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const HeadFeatures features = head_features(model, data, all);
  CHECK(data.class_count(0) < 32);
  CHECK(testsupport::error_kind_of([&] { fit_head("qda", features, {}); }) ==
        ErrorKind::InvalidArgument);
}

TEST_CASE("pipeline artifacts are byte-identical across runs of one manifest") {
  PipelineManifest m = PipelineManifest::defaults(5);
  m.dataset.synthetic.n_per_class = 40;
  m.train.epochs = 3;
  m.grid = parse_grid("0:0.8:0.4");
  m.search_retrain = m.train.retrain(2);
  m.final_retrain = m.train.retrain(2);
  const fs::path root = fs::path(LDAPRUNE_ACCEPT_DIR) / "determinism";
  fs::remove_all(root);
  const PipelineResult a = run_pipeline(m, root / "a");
  // The second run starts from the manifest the first one wrote.
  const PipelineManifest replay =
      PipelineManifest::from_json(nlohmann::json::parse(slurp(root / "a" / "manifest.json")));
  const PipelineResult b = run_pipeline(replay, root / "b");
  REQUIRE(a.artifacts == b.artifacts);
  for (const std::string& name : a.artifacts) {
    INFO(name);
    if (name == "bench.csv") {
      // Wall-clock columns differ run to run; everything else must not.
      const CsvTable ta = read_csv(root / "a" / name), tb = read_csv(root / "b" / name);
      REQUIRE(ta.rows.size() == tb.rows.size());
      for (std::size_t r = 0; r < ta.rows.size(); ++r)
        for (const char* col : {"layer", "kind", "base_params", "pruned_params"})
          CHECK(ta.text(r, col) == tb.text(r, col));
      continue;
    }
    CHECK(slurp(root / "a" / name) == slurp(root / "b" / name));
  }
}
