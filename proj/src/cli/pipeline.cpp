#include "ldaprune/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ldaprune/error.hpp"
#include "ldaprune/model_io.hpp"

namespace ldaprune {

namespace {

using nlohmann::json;

double round_grid(double v) { return std::round(v * 1e9) / 1e9; }

double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    fail(ErrorKind::InvalidArgument, what + " is not a number: '" + s + "'");
  }
  require(used == s.size() && std::isfinite(v), ErrorKind::InvalidArgument,
          what + " is not a number: '" + s + "'");
  return v;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::Io, "cannot open " + path.string());
  os << text;
  require(static_cast<bool>(os), ErrorKind::Io, "cannot write " + path.string());
}

std::vector<std::size_t> iota_columns(std::size_t k) {
  std::vector<std::size_t> c(k);
  std::iota(c.begin(), c.end(), std::size_t{0});
  return c;
}

json toy_net_json(const ToyNetConfig& n) {
  return {{"input_size", n.input_size}, {"input_channels", n.input_channels},
          {"block1", n.block1},         {"block2", n.block2},
          {"block3", n.block3},         {"classes", n.classes}};
}

ToyNetConfig toy_net_from_json(const json& j) {
  ToyNetConfig n;
  n.input_size = j.at("input_size").get<int>();
  n.input_channels = j.at("input_channels").get<int>();
  n.block1 = j.at("block1").get<std::vector<int>>();
  n.block2 = j.at("block2").get<std::vector<int>>();
  n.block3 = j.at("block3").get<std::vector<int>>();
  n.classes = j.at("classes").get<int>();
  return n;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

DatasetSplit load_dataset(const DatasetSource& source) {
  if (source.spec == "synthetic") return generate_synthetic(source.synthetic);
  if (source.spec.rfind("dir:", 0) == 0) {
    const std::string path = source.spec.substr(4);
    require(!path.empty(), ErrorKind::InvalidArgument, "dataset dir: needs a path");
    return load_pgm_dir(path, source.synthetic.size);
  }
  fail(ErrorKind::InvalidArgument,
       "dataset must be 'synthetic' or 'dir:PATH', got '" + source.spec + "'");
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  require(parts.size() == 3, ErrorKind::InvalidArgument,
          "grid must be lo:hi:step, got '" + text + "'");
  const double lo = parse_double(parts[0], "grid lo");
  const double hi = parse_double(parts[1], "grid hi");
  const double step = parse_double(parts[2], "grid step");
  require(step > 0.0, ErrorKind::InvalidArgument, "grid step must be positive");
  require(lo <= hi, ErrorKind::InvalidArgument, "grid lo must not exceed hi");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> grid;
  grid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) grid.push_back(round_grid(lo + step * static_cast<double>(i)));
  return grid;
}

Selection select_neurons(const ModelDescriptor& model, std::span<const LabeledImage> train,
                         std::size_t k) {
  const auto last = last_conv_index(model);
  require(last.has_value(), ErrorKind::Config, "model has no conv layer");
  Selection s;
  s.train = standardize(extract_firing_matrix(model, train, *last));
  s.scatter = scatter_matrices(s.train);
  s.ranking = rank_and_select(icc_scores(s.scatter), k);
  return s;
}

HeadFeatures head_features(const ModelDescriptor& model, const DatasetSplit& data,
                           std::span<const std::size_t> columns) {
  const auto last = last_conv_index(model);
  require(last.has_value(), ErrorKind::Config, "model has no conv layer");
  HeadFeatures h;
  h.columns.assign(columns.begin(), columns.end());
  h.train = standardize(select_columns(extract_firing_matrix(model, data.train, *last), columns));
  h.test = standardize_with(
      select_columns(extract_firing_matrix(model, data.test, *last), columns), h.train);
  return h;
}

AuxSection encode_feature_norm(const HeadFeatures& features) {
  const FiringMatrix& t = features.train;
  require(t.standardized, ErrorKind::InvalidArgument, "features carry no statistics");
  std::vector<int> constant;
  for (bool b : t.constant_column) constant.push_back(b ? 1 : 0);
  const json j = {{"columns", features.columns},
                  {"mean", t.column_mean},
                  {"std", t.column_std},
                  {"constant", constant}};
  const std::string text = j.dump();
  return {"feature_norm", std::vector<std::uint8_t>(text.begin(), text.end())};
}

void apply_feature_norm(const AuxSection& section, FiringMatrix& rows,
                        std::vector<std::size_t>& columns) {
  require(section.kind == "feature_norm", ErrorKind::Format,
          "expected a feature_norm section, got '" + section.kind + "'");
  json j;
  try {
    j = json::parse(section.blob.begin(), section.blob.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("feature_norm is not valid JSON: ") + e.what());
  }
  FiringMatrix reference;
  try {
    columns = j.at("columns").get<std::vector<std::size_t>>();
    reference.column_mean = j.at("mean").get<std::vector<double>>();
    reference.column_std = j.at("std").get<std::vector<double>>();
    for (int c : j.at("constant").get<std::vector<int>>()) reference.constant_column.push_back(c != 0);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("feature_norm is malformed: ") + e.what());
  }
  require(reference.column_mean.size() == columns.size() &&
              reference.column_std.size() == columns.size() &&
              reference.constant_column.size() == columns.size(),
          ErrorKind::Format, "feature_norm arrays disagree in length");
  for (std::size_t c : columns)
    require(c < rows.neurons(), ErrorKind::Dimension, "feature_norm column out of range");
  reference.standardized = true;
  rows = standardize_with(select_columns(rows, columns), reference);
}

Classifier fit_head(const std::string& name, const HeadFeatures& features,
                    const HeadOptions& options) {
  const Matrix& x = features.train.values;
  const std::vector<int>& labels = features.train.labels;
  if (name == "qda") return qda_fit(x, labels, options.qda_lambda);
  if (name == "svml")
    return linear_svm_fit(x, to_signed_labels(labels), options.svm_c, options.svm_epochs,
                          options.seed);
  if (name == "svmr") {
    RbfSvmOptions o;
    o.c = options.rbf_c;
    o.gamma = options.rbf_gamma > 0.0 ? options.rbf_gamma
                                      : 1.0 / static_cast<double>(std::max<std::size_t>(x.cols(), 1));
    return rbf_svm_fit(x, to_signed_labels(labels), o);
  }
  fail(ErrorKind::InvalidArgument, "unknown classifier head '" + name + "'");
}

std::string head_aux_kind(const std::string& name) {
  if (name == "qda") return "qda";
  if (name == "svml") return "svm_linear";
  if (name == "svmr") return "svm_rbf";
  fail(ErrorKind::InvalidArgument, "classifier '" + name + "' has no aux section");
}

CsvTable firing_table(const FiringMatrix& train, const FiringMatrix& test) {
  require(train.neurons() == test.neurons(), ErrorKind::Dimension,
          "train/test firing widths differ");
  CsvTable t;
  t.header = {"id", "label", "split"};
  for (std::size_t j = 0; j < train.neurons(); ++j) t.header.push_back("n" + std::to_string(j));
  auto add = [&t](const FiringMatrix& m, const char* split) {
    for (std::size_t r = 0; r < m.samples(); ++r) {
      std::vector<std::string> row = {m.ids[r], std::to_string(m.labels[r]), split};
      for (std::size_t j = 0; j < m.neurons(); ++j) row.push_back(format_number(m.values(r, j)));
      t.rows.push_back(std::move(row));
    }
  };
  add(train, "train");
  add(test, "test");
  return t;
}

CsvTable ranking_table(const NeuronRanking& ranking) {
  CsvTable t;
  t.header = {"neuron", "s2w", "s2b", "icc", "rank", "selected"};
  const auto rank = ranking.rank_of();
  for (std::size_t j = 0; j < ranking.score.size(); ++j) {
    const bool sel = std::find(ranking.selected.begin(), ranking.selected.end(), j) !=
                     ranking.selected.end();
    t.rows.push_back({std::to_string(j), format_number(ranking.within_var[j]),
                      format_number(ranking.between_var[j]), format_number(ranking.score[j]),
                      std::to_string(rank[j]), sel ? "1" : "0"});
  }
  return t;
}

CsvTable matrix_table(const Matrix& m) {
  CsvTable t;
  for (std::size_t j = 0; j < m.cols(); ++j) t.header.push_back("c" + std::to_string(j));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(format_number(m(i, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable dependency_table(const DependencyTable& table) {
  CsvTable t;
  t.header = {"layer", "filter", "score"};
  for (const LayerDependency& l : table.layers)
    for (std::size_t f = 0; f < l.scores.size(); ++f)
      t.rows.push_back({std::to_string(l.layer), std::to_string(f), format_number(l.scores[f])});
  return t;
}

CsvTable plateau_table(const PlateauResult& result) {
  CsvTable t;
  t.header = {"threshold",       "conv_pruning_rate", "accuracy_before_retrain",
              "accuracy_after_retrain", "flagged",  "t0"};
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const PruneReport& p = result.points[i];
    t.rows.push_back({format_number(p.threshold), format_number(p.conv_pruning_rate),
                      format_number(p.accuracy_before_retrain),
                      format_number(p.accuracy_after_retrain), p.flagged ? "1" : "0",
                      i == result.t0_index ? "1" : "0"});
  }
  return t;
}

CsvTable prune_report_table(const PruneReport& report) {
  CsvTable t;
  t.header = {"layer", "params_before", "params_after", "rate"};
  for (const LayerReduction& l : report.layers)
    t.rows.push_back({std::to_string(l.layer), std::to_string(l.params_before),
                      std::to_string(l.params_after), format_number(l.rate)});
  return t;
}

CsvTable predictions_table(std::span<const LabeledImage> images, std::span<const int> predicted) {
  require(images.size() == predicted.size(), ErrorKind::Dimension,
          "prediction/image count mismatch");
  CsvTable t;
  t.header = {"id", "label", "predicted"};
  for (std::size_t i = 0; i < images.size(); ++i)
    t.rows.push_back({images[i].id, std::to_string(images[i].label), std::to_string(predicted[i])});
  return t;
}

CsvTable sweep_table(const std::vector<SweepPoint>& points) {
  CsvTable t;
  t.header = {"pruning_rate", "accuracy_delta", "method"};
  for (const SweepPoint& p : points)
    t.rows.push_back({format_number(p.pruning_rate), format_number(p.accuracy_delta), p.method});
  return t;
}

json train_config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},   {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

PipelineManifest PipelineManifest::defaults(std::uint64_t seed) {
  PipelineManifest m;
  m.dataset.synthetic.seed = seed;
  m.model_seed = seed;
  m.train.epochs = 10;
  m.train.seed = seed;
  m.grid = parse_grid("0:0.9:0.1");
  m.search_retrain = m.train.retrain(10);
  m.final_retrain = m.train.retrain(10);
  m.heads.seed = seed;
  return m;
}

json PipelineManifest::to_json() const {
  const SyntheticConfig& s = dataset.synthetic;
  return {
      {"dataset",
       {{"spec", dataset.spec},
        {"n_per_class", s.n_per_class},
        {"size", s.size},
        {"seed", s.seed},
        {"noise_sigma", s.noise_sigma}}},
      {"model_seed", model_seed},
      {"net", toy_net_json(net)},
      {"train", train_config_json(train)},
      {"k", k},
      {"grid", grid},
      {"epsilon_acc", epsilon_acc},
      {"search_retrain", train_config_json(search_retrain)},
      {"final_retrain", train_config_json(final_retrain)},
      {"magnitude_baseline", magnitude_baseline},
      {"heads",
       {{"qda_lambda", heads.qda_lambda},
        {"svm_c", heads.svm_c},
        {"svm_epochs", heads.svm_epochs},
        {"rbf_c", heads.rbf_c},
        {"rbf_gamma", heads.rbf_gamma},
        {"seed", heads.seed}}},
      {"bench", bench},
      {"bench_config",
       {{"runs", bench_config.runs},
        {"warmup", bench_config.warmup},
        {"images", bench_config.images}}},
  };
}

PipelineManifest PipelineManifest::from_json(const json& j) {
  PipelineManifest m;
  try {
    const json& d = j.at("dataset");
    m.dataset.spec = d.at("spec").get<std::string>();
    m.dataset.synthetic.n_per_class = d.at("n_per_class").get<int>();
    m.dataset.synthetic.size = d.at("size").get<int>();
    m.dataset.synthetic.seed = d.at("seed").get<std::uint64_t>();
    m.dataset.synthetic.noise_sigma = d.at("noise_sigma").get<double>();
    m.model_seed = j.at("model_seed").get<std::uint64_t>();
    m.net = toy_net_from_json(j.at("net"));
    m.train = train_config_from_json(j.at("train"));
    m.k = j.at("k").get<std::size_t>();
    m.grid = j.at("grid").get<std::vector<double>>();
    m.epsilon_acc = j.at("epsilon_acc").get<double>();
    m.search_retrain = train_config_from_json(j.at("search_retrain"));
    m.final_retrain = train_config_from_json(j.at("final_retrain"));
    m.magnitude_baseline = j.at("magnitude_baseline").get<bool>();
    const json& h = j.at("heads");
    m.heads.qda_lambda = h.at("qda_lambda").get<double>();
    m.heads.svm_c = h.at("svm_c").get<double>();
    m.heads.svm_epochs = h.at("svm_epochs").get<int>();
    m.heads.rbf_c = h.at("rbf_c").get<double>();
    m.heads.rbf_gamma = h.at("rbf_gamma").get<double>();
    m.heads.seed = h.at("seed").get<std::uint64_t>();
    m.bench = j.at("bench").get<bool>();
    const json& b = j.at("bench_config");
    m.bench_config.runs = b.at("runs").get<int>();
    m.bench_config.warmup = b.at("warmup").get<int>();
    m.bench_config.images = b.at("images").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("manifest is malformed: ") + e.what());
  }
  require(!m.grid.empty(), ErrorKind::Config, "manifest grid is empty");
  return m;
}

PipelineResult run_pipeline(const PipelineManifest& manifest, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  PipelineResult result;
  auto emit = [&](const std::string& name) { result.artifacts.push_back(name); return out / name; };
  auto emit_csv = [&](const std::string& name, const CsvTable& t) { write_csv(emit(name), t); };

  write_text(emit("manifest.json"), manifest.to_json().dump(2) + "\n");

  const DatasetSplit data = load_dataset(manifest.dataset);
  ModelDescriptor model = make_toy_net(manifest.net, manifest.model_seed);
  {
    const TrainLog log = train(model, data.train, manifest.train, data.test);
    std::ostringstream os;
    log.write_csv(os);
    write_text(emit("train_log.csv"), os.str());
  }
  model.provenance = "toy net trained from manifest";
  save_model(model, emit("model.ldap"));
  result.base_accuracy = model_accuracy(model, data.test);

  const std::size_t last = *last_conv_index(model);
  emit_csv("firing.csv", firing_table(extract_firing_matrix(model, data.train, last),
                                      extract_firing_matrix(model, data.test, last)));

  const Selection sel = select_neurons(model, data.train, manifest.k);
  result.selected = sel.ranking.selected;
  emit_csv("ranking.csv", ranking_table(sel.ranking));
  emit_csv("sw.csv", matrix_table(sel.scatter.within));
  emit_csv("sb.csv", matrix_table(sel.scatter.between));

  const DependencyTable deps = dependency_scores(model, data.train, result.selected);
  emit_csv("dependencies.csv", dependency_table(deps));

  PlateauSearchConfig search;
  search.grid = manifest.grid;
  search.epsilon_acc = manifest.epsilon_acc;
  search.retrain = manifest.search_retrain;
  result.plateau = plateau_threshold_search(model, deps, result.selected, data, search);
  emit_csv("plateau.csv", plateau_table(result.plateau));

  const PrunePlan plan = build_prune_plan(model, deps, result.selected, result.plateau.t0);
  ModelDescriptor pruned = apply_prune(model, plan);
  {
    const TrainLog log = train(pruned, data.train, manifest.final_retrain, data.test);
    std::ostringstream os;
    log.write_csv(os);
    write_text(emit("pruned_log.csv"), os.str());
  }
  char note[160];
  std::snprintf(note, sizeof note, "pruned from %s, threshold %.6g",
                model_fingerprint(model).c_str(), plan.threshold);
  pruned.provenance = note;
  save_model(pruned, emit("pruned.ldap"));
  result.pruned_accuracy = model_accuracy(pruned, data.test);
  result.conv_pruning_rate = plan.conv_pruning_rate();
  PruneReport report = make_report(model, plan);
  emit_csv("prune_report.csv", prune_report_table(report));

  std::vector<double> rates;
  for (const PruneReport& p : result.plateau.points) {
    result.sweep.push_back({p.conv_pruning_rate, p.accuracy_after_retrain - result.base_accuracy, "lda"});
    const double r = round_grid(p.conv_pruning_rate);
    if (std::find(rates.begin(), rates.end(), r) == rates.end()) rates.push_back(r);
  }
  if (manifest.magnitude_baseline) {
    for (double r : rates) {
      const MagnitudeResult m = magnitude_baseline_mask(model, r, data, manifest.search_retrain);
      result.sweep.push_back({r, m.accuracy - result.base_accuracy, "magnitude"});
    }
  }
  emit_csv("sweep.csv", sweep_table(result.sweep));

  // Heads on the k surviving last-conv neurons of the retrained pruned net.
  const HeadFeatures features = head_features(pruned, data, iota_columns(result.selected.size()));
  CsvTable heads;
  heads.header = {"head", "accuracy"};
  {
    std::vector<int> predicted;
    for (const LabeledImage& img : data.test) {
      predicted.push_back(predict_label(forward_pass(pruned, img.image)));
    }
    result.head_accuracy["fc"] = confusion_from(predicted, features.test.labels).accuracy;
    emit_csv("predictions_fc.csv", predictions_table(data.test, predicted));
  }
  ModelDescriptor with_heads = pruned;
  with_heads.aux.push_back(encode_feature_norm(features));
  for (const std::string name : {"qda", "svml", "svmr"}) {
    const Classifier c = fit_head(name, features, manifest.heads);
    std::vector<int> predicted;
    for (std::size_t r = 0; r < features.test.samples(); ++r)
      predicted.push_back(classify(c, features.test.values.row(r)));
    result.head_accuracy[name] = confusion_from(predicted, features.test.labels).accuracy;
    emit_csv("predictions_" + name + ".csv", predictions_table(data.test, predicted));
    with_heads.aux.push_back(encode_classifier(c));
  }
  for (const auto& [name, acc] : result.head_accuracy)
    heads.rows.push_back({name, format_number(acc)});
  emit_csv("heads.csv", heads);
  save_model(with_heads, emit("pruned_heads.ldap"));

  const std::size_t base_bytes = serialize_model(model).size();
  const std::size_t pruned_bytes = serialize_model(pruned).size();
  if (manifest.bench) {
    const std::size_t n = std::min(manifest.bench_config.images, data.test.size());
    result.bench = bench_models(model, pruned, std::span(data.test).first(n), manifest.bench_config);
    result.bench->base_file_bytes = base_bytes;
    result.bench->pruned_file_bytes = pruned_bytes;
    emit_csv("bench.csv", bench_table(*result.bench));
  }

  const ParamCount pb = model_param_count(model), pa = model_param_count(pruned);
  std::ostringstream rep;
  rep << "base_test_accuracy " << fixed(result.base_accuracy, 6) << "\n";
  rep << "selected_neurons";
  for (std::size_t s : result.selected) rep << ' ' << s;
  rep << "\nplateau_threshold " << format_number(result.plateau.t0) << "\n";
  rep << "plan_flagged " << (plan.flagged ? 1 : 0) << "\n";
  rep << "pruned_test_accuracy " << fixed(result.pruned_accuracy, 6) << "\n";
  rep << "accuracy_delta " << fixed(result.pruned_accuracy - result.base_accuracy, 6) << "\n";
  rep << "conv_params " << pb.conv << " -> " << pa.conv << "\n";
  rep << "fc_params " << pb.fc << " -> " << pa.fc << "\n";
  rep << "conv_pruning_rate " << fixed(result.conv_pruning_rate, 6) << "\n";
  rep << "file_bytes " << base_bytes << " -> " << pruned_bytes << "\n";
  rep << "param_ratio " << fixed(static_cast<double>(pb.total) / static_cast<double>(pa.total), 6)
      << "\n";
  rep << "file_ratio "
      << fixed(static_cast<double>(base_bytes) / static_cast<double>(pruned_bytes), 6) << "\n";
  for (const auto& [name, acc] : result.head_accuracy)
    rep << "head_accuracy " << name << ' ' << fixed(acc, 6) << "\n";
  write_text(emit("report.txt"), rep.str());
  return result;
}

}  // namespace ldaprune
