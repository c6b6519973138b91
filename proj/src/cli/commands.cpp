#include "ldaprune/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "ldaprune/error.hpp"
#include "ldaprune/model_io.hpp"
#include "ldaprune/pipeline.hpp"

namespace ldaprune::cli {

namespace {

using nlohmann::json;

constexpr int kExitModuleError = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string dataset = "synthetic";
  bool synthetic_flag = false;
  std::uint64_t seed = 1;
  int n_per_class = 300;
  int size = 32;
  double noise = 0.05;
  std::string out = ".";

  DatasetSource source() const {
    DatasetSource s;
    s.spec = synthetic_flag ? "synthetic" : dataset;
    s.synthetic = {n_per_class, size, seed, noise};
    return s;
  }
  std::filesystem::path out_dir() const {
    std::filesystem::create_directories(out);
    return out;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--dataset", c.dataset, "synthetic or dir:PATH");
  cmd->add_flag("--synthetic", c.synthetic_flag, "use the synthetic dataset");
  cmd->add_option("--seed", c.seed, "seed for data, model and training");
  cmd->add_option("--n-per-class", c.n_per_class, "synthetic images per class");
  cmd->add_option("--size", c.size, "image side length");
  cmd->add_option("--noise", c.noise, "synthetic pixel noise sigma");
  cmd->add_option("--out", c.out, "output directory");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::Io, "cannot open " + path.string());
  os << text;
  require(static_cast<bool>(os), ErrorKind::Io, "cannot write " + path.string());
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream os;
  log.write_csv(os);
  return os.str();
}

std::vector<int> fc_predictions(const ModelDescriptor& model, std::span<const LabeledImage> data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const LabeledImage& img : data) out.push_back(predict_label(forward_pass(model, img.image)));
  return out;
}

std::vector<int> labels_of(std::span<const LabeledImage> data) {
  std::vector<int> out;
  for (const LabeledImage& img : data) out.push_back(img.label);
  return out;
}

const AuxSection* find_aux(const ModelDescriptor& model, const std::string& kind) {
  for (const AuxSection& a : model.aux)
    if (a.kind == kind) return &a;
  return nullptr;
}

std::size_t last_conv_width(const ModelDescriptor& model) {
  const auto last = last_conv_index(model);
  require(last.has_value(), ErrorKind::Config, "model has no conv layer");
  return static_cast<std::size_t>(model.layers[*last].spec.conv.out_channels);
}

struct TrainArgs {
  int epochs = 10;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch = 16;

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.epochs = epochs;
    c.learning_rate = lr;
    c.momentum = momentum;
    c.weight_decay = weight_decay;
    c.batch_size = batch;
    c.seed = seed;
    return c;
  }
};

void add_train_args(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--epochs", t.epochs, "training epochs");
  cmd->add_option("--lr", t.lr, "learning rate");
  cmd->add_option("--momentum", t.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", t.weight_decay, "L2 weight decay");
  cmd->add_option("--batch", t.batch, "mini-batch size");
}

int cmd_train(const Common& c, const TrainArgs& t) {
  const auto out = c.out_dir();
  const DatasetSplit data = load_dataset(c.source());
  ModelDescriptor model = make_toy_net(ToyNetConfig{.input_size = c.size}, c.seed);
  const TrainLog log = train(model, data.train, t.config(c.seed), data.test);
  model.provenance = "toy net, seed " + std::to_string(c.seed);
  save_model(model, out / "model.ldap");
  write_text(out / "train_log.csv", train_log_csv(log));
  const ParamCount p = model_param_count(model);
  std::ostringstream rep;
  rep << "test_accuracy " << fixed(model_accuracy(model, data.test)) << "\n";
  rep << "conv_params " << p.conv << "\nfc_params " << p.fc << "\n";
  rep << "fingerprint " << model_fingerprint(model) << "\n";
  write_text(out / "report.txt", rep.str());
  return 0;
}

int cmd_extract(const Common& c, const std::string& model_path) {
  const auto out = c.out_dir();
  const ModelDescriptor model = load_model(model_path);
  const DatasetSplit data = load_dataset(c.source());
  const auto last = last_conv_index(model);
  require(last.has_value(), ErrorKind::Config, "model has no conv layer");
  write_csv(out / "firing.csv", firing_table(extract_firing_matrix(model, data.train, *last),
                                             extract_firing_matrix(model, data.test, *last)));
  return 0;
}

int cmd_analyze(const Common& c, const std::string& model_path, std::size_t k) {
  const auto out = c.out_dir();
  const ModelDescriptor model = load_model(model_path);
  const DatasetSplit data = load_dataset(c.source());
  const Selection sel = select_neurons(model, data.train, k);
  write_csv(out / "ranking.csv", ranking_table(sel.ranking));
  write_csv(out / "sw.csv", matrix_table(sel.scatter.within));
  write_csv(out / "sb.csv", matrix_table(sel.scatter.between));

  const DominanceReport dw = diagonal_dominance(sel.scatter.within);
  const DominanceReport db = diagonal_dominance(sel.scatter.between);
  const LdaDirections lda = full_lda_directions(sel.scatter, 1);
  std::size_t top = 0;
  for (std::size_t i = 1; i < lda.vectors.rows(); ++i)
    if (std::abs(lda.vectors(i, 0)) > std::abs(lda.vectors(top, 0))) top = i;
  std::ostringstream rep;
  rep << "selected";
  for (std::size_t s : sel.ranking.selected) rep << ' ' << s;
  rep << "\ndiagonal_dominance_sw " << fixed(dw.metric) << (dw.degenerate ? " degenerate" : "")
      << "\ndiagonal_dominance_sb " << fixed(db.metric) << (db.degenerate ? " degenerate" : "")
      << "\nlda_top_eigenvalue " << format_number(lda.values.at(0))
      << "\nlda_top_direction_neuron " << top << "\n";
  write_text(out / "report.txt", rep.str());
  return 0;
}

struct PruneArgs {
  std::string model;
  std::size_t k = 4;
  std::optional<double> threshold;
  std::string grid;
  int epochs = 10;
  double lr = 0.001;
  double epsilon = 0.02;
};

TrainConfig retrain_config(const Common& c, const PruneArgs& p) {
  TrainConfig r;
  r.learning_rate = p.lr;
  r.epochs = p.epochs;
  r.seed = c.seed;
  return r;
}

int cmd_prune(const Common& c, const PruneArgs& p) {
  if (p.threshold.has_value() == !p.grid.empty())
    throw UsageError("prune needs exactly one of --threshold or --grid");
  const auto out = c.out_dir();
  const ModelDescriptor model = load_model(p.model);
  const DatasetSplit data = load_dataset(c.source());
  const Selection sel = select_neurons(model, data.train, p.k);
  const auto& selected = sel.ranking.selected;
  const DependencyTable deps = dependency_scores(model, data.train, selected);
  write_csv(out / "dependencies.csv", dependency_table(deps));

  double threshold = p.threshold.value_or(0.0);
  if (!p.grid.empty()) {
    PlateauSearchConfig search{parse_grid(p.grid), p.epsilon, retrain_config(c, p)};
    const PlateauResult plateau = plateau_threshold_search(model, deps, selected, data, search);
    write_csv(out / "plateau.csv", plateau_table(plateau));
    threshold = plateau.t0;
  }
  const PrunePlan plan = build_prune_plan(model, deps, selected, threshold);
  ModelDescriptor pruned = apply_prune(model, plan);
  PruneReport report = make_report(model, plan);
  report.accuracy_before_retrain = model_accuracy(pruned, data.test);
  if (p.epochs > 0) {
    const TrainLog log = train(pruned, data.train, retrain_config(c, p), data.test);
    write_text(out / "retrain_log.csv", train_log_csv(log));
  }
  report.accuracy_after_retrain = model_accuracy(pruned, data.test);
  char note[160];
  std::snprintf(note, sizeof note, "pruned from %s, threshold %.6g",
                model_fingerprint(model).c_str(), plan.threshold);
  pruned.provenance = note;
  save_model(pruned, out / "pruned.ldap");
  write_csv(out / "prune_report.csv", prune_report_table(report));

  std::ostringstream rep;
  rep << "threshold " << format_number(threshold) << "\nselected";
  for (std::size_t s : selected) rep << ' ' << s;
  rep << "\nbase_test_accuracy " << fixed(model_accuracy(model, data.test))
      << "\naccuracy_before_retrain " << fixed(report.accuracy_before_retrain)
      << "\naccuracy_after_retrain " << fixed(report.accuracy_after_retrain)
      << "\nconv_params " << plan.conv_params_before() << " -> " << plan.conv_params_after()
      << "\nconv_pruning_rate " << fixed(report.conv_pruning_rate)
      << "\nflagged " << (report.flagged ? 1 : 0) << "\n";
  write_text(out / "report.txt", rep.str());
  return 0;
}

int cmd_sweep(const Common& c, const PruneArgs& p, bool magnitude) {
  const auto out = c.out_dir();
  const ModelDescriptor model = load_model(p.model);
  const DatasetSplit data = load_dataset(c.source());
  const double base = model_accuracy(model, data.test);
  const Selection sel = select_neurons(model, data.train, p.k);
  const DependencyTable deps = dependency_scores(model, data.train, sel.ranking.selected);
  PlateauSearchConfig search{parse_grid(p.grid.empty() ? "0:0.9:0.1" : p.grid), p.epsilon,
                             retrain_config(c, p)};
  const PlateauResult plateau =
      plateau_threshold_search(model, deps, sel.ranking.selected, data, search);
  write_csv(out / "plateau.csv", plateau_table(plateau));

  std::vector<SweepPoint> points;
  std::vector<double> rates;
  for (const PruneReport& r : plateau.points) {
    points.push_back({r.conv_pruning_rate, r.accuracy_after_retrain - base, "lda"});
    const double rate = std::round(r.conv_pruning_rate * 1e9) / 1e9;
    if (std::find(rates.begin(), rates.end(), rate) == rates.end()) rates.push_back(rate);
  }
  if (magnitude)
    for (double rate : rates) {
      const MagnitudeResult m = magnitude_baseline_mask(model, rate, data, search.retrain);
      points.push_back({rate, m.accuracy - base, "magnitude"});
    }
  write_csv(out / "sweep.csv", sweep_table(points));
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string classifier = "fc";
  std::size_t k = 4;
  double c = 1.0;
  double gamma = 0.0;
  double lambda = 1e-3;
  int svm_epochs = 100;
};

int cmd_eval(const Common& c, const EvalArgs& e) {
  const auto out = c.out_dir();
  ModelDescriptor model = load_model(e.model);
  const DatasetSplit data = load_dataset(c.source());
  std::vector<int> predicted;
  std::string head_source = "network";
  if (e.classifier == "fc") {
    predicted = fc_predictions(model, data.test);
  } else {
    const std::string kind = head_aux_kind(e.classifier);
    const AuxSection* head = find_aux(model, kind);
    const AuxSection* norm = find_aux(model, "feature_norm");
    const std::size_t last = *last_conv_index(model);
    Classifier classifier;
    FiringMatrix test = extract_firing_matrix(model, data.test, last);
    if (head != nullptr && norm != nullptr) {
      classifier = decode_classifier(*head);
      std::vector<std::size_t> columns;
      apply_feature_norm(*norm, test, columns);
      head_source = "stored";
    } else {
      const std::size_t k = std::min(e.k, last_conv_width(model));
      const Selection sel = select_neurons(model, data.train, k);
      const HeadFeatures features = head_features(model, data, sel.ranking.selected);
      HeadOptions options;
      options.qda_lambda = e.lambda;
      options.svm_c = e.c;
      options.rbf_c = e.c;
      options.rbf_gamma = e.gamma;
      options.svm_epochs = e.svm_epochs;
      options.seed = c.seed;
      classifier = fit_head(e.classifier, features, options);
      test = features.test;
      std::erase_if(model.aux, [&](const AuxSection& a) {
        return a.kind == kind || a.kind == "feature_norm";
      });
      model.aux.push_back(encode_feature_norm(features));
      model.aux.push_back(encode_classifier(classifier));
      save_model(model, out / "model_with_head.ldap");
      head_source = "fitted";
    }
    for (std::size_t r = 0; r < test.samples(); ++r)
      predicted.push_back(classify(classifier, test.values.row(r)));
  }
  write_csv(out / "predictions.csv", predictions_table(data.test, predicted));
  const Confusion conf = confusion_from(predicted, labels_of(data.test));
  std::ostringstream rep;
  rep << "classifier " << e.classifier << "\nhead " << head_source << "\naccuracy "
      << fixed(conf.accuracy) << "\ntrue_positive " << conf.true_positive << "\ntrue_negative "
      << conf.true_negative << "\nfalse_positive " << conf.false_positive
      << "\nfalse_negative " << conf.false_negative << "\n";
  write_text(out / "report.txt", rep.str());
  return 0;
}

int cmd_bench(const Common& c, const std::string& base_path, const std::string& pruned_path,
              const BenchConfig& config) {
  const auto out = c.out_dir();
  const ModelDescriptor base = load_model(base_path);
  const ModelDescriptor pruned = load_model(pruned_path);
  const DatasetSplit data = load_dataset(c.source());
  const std::size_t n = std::min(config.images, data.test.size());
  BenchResult r = bench_models(base, pruned, std::span(data.test).first(n), config);
  r.base_file_bytes = std::filesystem::file_size(base_path);
  r.pruned_file_bytes = std::filesystem::file_size(pruned_path);
  write_csv(out / "bench.csv", bench_table(r));
  const double param_ratio = static_cast<double>(r.base_params.total) /
                             static_cast<double>(r.pruned_params.total);
  std::ostringstream rep;
  rep << "runs " << r.runs << "\nwarmup " << r.warmup << "\nimages " << n
      << "\nbase_ms_per_image " << format_number(r.base_total_ms) << "\npruned_ms_per_image "
      << format_number(r.pruned_total_ms) << "\nspeedup " << fixed(r.speedup())
      << "\nfile_bytes " << r.base_file_bytes << " -> " << r.pruned_file_bytes
      << "\nfile_ratio " << fixed(r.size_ratio()) << "\nparam_ratio " << fixed(param_ratio)
      << "\n";
  write_text(out / "report.txt", rep.str());
  return 0;
}

int cmd_pipeline(const PipelineManifest& manifest, const std::string& out) {
  const PipelineResult r = run_pipeline(manifest, out);
  std::cout << "base_accuracy " << fixed(r.base_accuracy) << "\npruned_accuracy "
            << fixed(r.pruned_accuracy) << "\nconv_pruning_rate " << fixed(r.conv_pruning_rate)
            << "\n";
  if (r.bench) std::cout << "speedup " << fixed(r.bench->speedup()) << "\n";
  return 0;
}

PipelineManifest read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::Io, "cannot open manifest " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("manifest is not valid JSON: ") + e.what());
  }
  return PipelineManifest::from_json(j);
}

void print_error(std::string_view kind, const std::string& message) {
  const json j = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Structured channel pruning for small convolutional networks"};
  app.require_subcommand(1);
  std::function<int()> action;

  Common common;
  TrainArgs targs;
  auto* train_cmd = app.add_subcommand("train", "train the toy network");
  add_common(train_cmd, common);
  add_train_args(train_cmd, targs);
  train_cmd->callback([&] { action = [&] { return cmd_train(common, targs); }; });

  std::string model_path;
  auto* extract_cmd = app.add_subcommand("extract", "write last-conv firing scores");
  add_common(extract_cmd, common);
  extract_cmd->add_option("--model", model_path, "model file")->required();
  extract_cmd->callback([&] { action = [&] { return cmd_extract(common, model_path); }; });

  std::size_t k = 4;
  auto* analyze_cmd = app.add_subcommand("analyze", "rank last-conv neurons by ICC");
  add_common(analyze_cmd, common);
  analyze_cmd->add_option("--model", model_path, "model file")->required();
  analyze_cmd->add_option("--k", k, "neurons to select");
  analyze_cmd->callback([&] { action = [&] { return cmd_analyze(common, model_path, k); }; });

  PruneArgs pargs;
  auto add_prune_args = [&](CLI::App* cmd) {
    add_common(cmd, common);
    cmd->add_option("--model", pargs.model, "model file")->required();
    cmd->add_option("--k", pargs.k, "neurons to select");
    cmd->add_option("--grid", pargs.grid, "threshold grid lo:hi:step");
    cmd->add_option("--epochs", pargs.epochs, "retraining epochs");
    cmd->add_option("--lr", pargs.lr, "retraining learning rate");
    cmd->add_option("--epsilon", pargs.epsilon, "plateau accuracy tolerance");
  };
  auto* prune_cmd = app.add_subcommand("prune", "prune filters by dependency score");
  add_prune_args(prune_cmd);
  prune_cmd->add_option_function<double>(
      "--threshold", [&](double t) { pargs.threshold = t; }, "dependency threshold");
  prune_cmd->callback([&] { action = [&] { return cmd_prune(common, pargs); }; });

  bool no_magnitude = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "accuracy change vs conv pruning rate");
  add_prune_args(sweep_cmd);
  sweep_cmd->add_flag("--no-magnitude", no_magnitude, "skip the magnitude baseline");
  sweep_cmd->callback([&] { action = [&] { return cmd_sweep(common, pargs, !no_magnitude); }; });

  EvalArgs eargs;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a classifier head on the test split");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--model", eargs.model, "model file")->required();
  eval_cmd->add_option("--classifier", eargs.classifier, "fc, qda, svml or svmr")
      ->check(CLI::IsMember({"fc", "qda", "svml", "svmr"}));
  eval_cmd->add_option("--k", eargs.k, "features when fitting a new head");
  eval_cmd->add_option("--C", eargs.c, "SVM box constraint");
  eval_cmd->add_option("--gamma", eargs.gamma, "RBF width (0 means 1/k)");
  eval_cmd->add_option("--lambda", eargs.lambda, "QDA covariance ridge");
  eval_cmd->add_option("--svm-epochs", eargs.svm_epochs, "linear SVM epochs");
  eval_cmd->callback([&] { action = [&] { return cmd_eval(common, eargs); }; });

  std::string pruned_path;
  BenchConfig bconfig;
  auto* bench_cmd = app.add_subcommand("bench", "per-layer inference timing");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--model", model_path, "base model file")->required();
  bench_cmd->add_option("--pruned", pruned_path, "pruned model file")->required();
  bench_cmd->add_option("--runs", bconfig.runs, "timed runs (>= 30)");
  bench_cmd->add_option("--warmup", bconfig.warmup, "warmup runs (>= 5)");
  bench_cmd->add_option("--images", bconfig.images, "test images per run");
  bench_cmd->callback(
      [&] { action = [&] { return cmd_bench(common, model_path, pruned_path, bconfig); }; });

  std::string grid;
  bool no_bench = false;
  auto* pipeline_cmd = app.add_subcommand("pipeline", "full run; writes manifest.json");
  add_common(pipeline_cmd, common);
  pipeline_cmd->add_option("--k", k, "neurons to select");
  pipeline_cmd->add_option("--grid", grid, "threshold grid lo:hi:step");
  pipeline_cmd->add_option("--epochs", targs.epochs, "training epochs");
  pipeline_cmd->add_option("--lr", targs.lr, "learning rate");
  pipeline_cmd->add_flag("--no-bench", no_bench, "skip timing");
  pipeline_cmd->callback([&] {
    action = [&] {
      PipelineManifest m = PipelineManifest::defaults(common.seed);
      m.dataset = common.source();
      m.train = targs.config(common.seed);
      m.search_retrain = m.train.retrain(m.search_retrain.epochs);
      m.final_retrain = m.train.retrain(m.final_retrain.epochs);
      m.net.input_size = common.size;
      m.k = k;
      if (!grid.empty()) m.grid = parse_grid(grid);
      m.bench = !no_bench;
      return cmd_pipeline(m, common.out);
    };
  });

  std::string manifest_path;
  auto* replay_cmd = app.add_subcommand("replay", "re-run a pipeline from its manifest");
  replay_cmd->add_option("--manifest", manifest_path, "manifest.json")->required();
  replay_cmd->add_option("--out", common.out, "output directory");
  replay_cmd->callback(
      [&] { action = [&] { return cmd_pipeline(read_manifest(manifest_path), common.out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what());
    return kExitModuleError;
  } catch (const std::filesystem::filesystem_error& e) {
    print_error("io", e.what());
    return kExitModuleError;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitModuleError;
  }
}

}  // namespace ldaprune::cli
