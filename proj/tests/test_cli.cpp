#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ldaprune/bench.hpp"
#include "ldaprune/model_io.hpp"
#include "ldaprune/pipeline.hpp"
#include "support.hpp"

using namespace ldaprune;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() /
                     ("ldaprune_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct RunResult {
  int status = -1;
  std::string err;
};

RunResult run_tool(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(LDAPRUNE_TOOL) + " " + args + " >" +
                          (dir / "stdout.txt").string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream is(err);
  r.err.assign(std::istreambuf_iterator<char>(is), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  return {std::istreambuf_iterator<char>(is), {}};
}

// Value after `key ` on its own line of a report.
std::string report_value(const std::string& report, const std::string& key) {
  std::istringstream is(report);
  for (std::string line; std::getline(is, line);)
    if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
  FAIL("missing report key " << key);
  return {};
}

void check_round_trip(const CsvTable& t) {
  const CsvTable back = parse_csv(to_csv_string(t));
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
}

const char* kSmall = "--n-per-class 20 --seed 7";

}  // namespace

TEST_CASE("parse_grid is inclusive and validates its input") {
  const auto g = parse_grid("0:0.9:0.1");
  REQUIRE(g.size() == 10);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(0.1 * i).epsilon(1e-12));
  CHECK(g.back() == 0.9);
  CHECK(parse_grid("0.5:0.5:0.1") == std::vector<double>{0.5});
  CHECK(parse_grid("0:1:0.25") == std::vector<double>{0, 0.25, 0.5, 0.75, 1.0});
  for (const char* bad : {"1:0:0.1", "0:1:0", "0:1:-1", "a:1:0.1", "0:1", "0:1:0.1:2", "0:1x:0.1"})
    CHECK(testsupport::error_kind_of([&] { parse_grid(bad); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("manifest survives a JSON round trip") {
  PipelineManifest m = PipelineManifest::defaults(42);
  m.dataset.spec = "dir:/data/faces";
  m.k = 6;
  m.grid = {0.0, 0.25, 0.5};
  m.heads.rbf_gamma = 0.125;
  m.bench_config.runs = 31;
  const nlohmann::json j = m.to_json();
  const PipelineManifest back = PipelineManifest::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.dataset.synthetic.seed == 42);
  CHECK(back.train.seed == 42);
  CHECK(back.search_retrain.learning_rate == doctest::Approx(m.train.learning_rate * 0.1));

  nlohmann::json broken = j;
  broken.erase("grid");
  CHECK(testsupport::error_kind_of([&] { PipelineManifest::from_json(broken); }) ==
        ErrorKind::Format);
  broken = j;
  broken["grid"] = nlohmann::json::array();
  CHECK(testsupport::error_kind_of([&] { PipelineManifest::from_json(broken); }) ==
        ErrorKind::Config);
}

TEST_CASE("dataset source parsing") {
  DatasetSource s;
  s.spec = "imagenet";
  CHECK(testsupport::error_kind_of([&] { load_dataset(s); }) == ErrorKind::InvalidArgument);
  s.spec = "dir:";
  CHECK(testsupport::error_kind_of([&] { load_dataset(s); }) == ErrorKind::InvalidArgument);
  s.spec = "synthetic";
  s.synthetic.n_per_class = 10;
  const DatasetSplit d = load_dataset(s);
  CHECK(d.train.size() + d.test.size() == 20);
}

TEST_CASE("every table renderer re-parses to the same cells") {
  const ModelDescriptor model = make_toy_net({}, 3);
  DatasetSource src;
  src.synthetic.n_per_class = 10;
  const DatasetSplit data = load_dataset(src);
  const std::size_t last = *last_conv_index(model);
  check_round_trip(firing_table(extract_firing_matrix(model, data.train, last),
                                extract_firing_matrix(model, data.test, last)));
  const Selection sel = select_neurons(model, data.train, 4);
  check_round_trip(ranking_table(sel.ranking));
  check_round_trip(matrix_table(sel.scatter.within));
  const DependencyTable deps = dependency_scores(model, data.train, sel.ranking.selected);
  check_round_trip(dependency_table(deps));
  const PrunePlan plan = build_prune_plan(model, deps, sel.ranking.selected, 0.5);
  check_round_trip(prune_report_table(make_report(model, plan)));
  check_round_trip(sweep_table({{0.5, -0.01, "lda"}, {0.5, -0.2, "magnitude"}}));
  const std::vector<int> predicted(data.test.size(), 1);
  check_round_trip(predictions_table(data.test, predicted));

  const CsvTable ranking = parse_csv(to_csv_string(ranking_table(sel.ranking)));
  CHECK(ranking.rows.size() == 32);
  for (std::size_t r = 0; r < ranking.rows.size(); ++r)
    CHECK(ranking.number(r, "icc") == doctest::Approx(sel.ranking.score[r]).epsilon(1e-8));
}

TEST_CASE("feature normalisation stored in a model reproduces the head inputs") {
  const ModelDescriptor model = make_toy_net({}, 5);
  DatasetSource src;
  src.synthetic.n_per_class = 10;
  const DatasetSplit data = load_dataset(src);
  const std::vector<std::size_t> cols = {7, 2, 30};
  const HeadFeatures f = head_features(model, data, cols);
  const AuxSection aux = encode_feature_norm(f);

  FiringMatrix raw = extract_firing_matrix(model, data.test, *last_conv_index(model));
  std::vector<std::size_t> columns;
  apply_feature_norm(aux, raw, columns);
  CHECK(columns == cols);
  REQUIRE(raw.neurons() == 3);
  for (std::size_t r = 0; r < raw.samples(); ++r)
    for (std::size_t j = 0; j < 3; ++j) CHECK(raw.values(r, j) == f.test.values(r, j));

  AuxSection wrong = aux;
  wrong.kind = "qda";
  CHECK(testsupport::error_kind_of([&] { apply_feature_norm(wrong, raw, columns); }) ==
        ErrorKind::Format);
  CHECK(testsupport::error_kind_of([&] { fit_head("knn", f, {}); }) ==
        ErrorKind::InvalidArgument);
}

TEST_CASE("train twice with the same seed gives byte-identical model files") {
  const fs::path dir = scratch("determinism");
  for (const char* sub : {"a", "b"}) {
    const RunResult r = run_tool(std::string("train --synthetic --seed 7 --n-per-class 20 "
                                             "--epochs 2 --out ") + (dir / sub).string(), dir);
    REQUIRE(r.status == 0);
  }
  CHECK(slurp(dir / "a" / "model.ldap") == slurp(dir / "b" / "model.ldap"));
  CHECK(slurp(dir / "a" / "train_log.csv") == slurp(dir / "b" / "train_log.csv"));
  const ModelDescriptor m = load_model(dir / "a" / "model.ldap");
  CHECK(model_param_count(m).conv == 18040);
}

TEST_CASE("errors produce one JSON line and a nonzero exit") {
  const fs::path dir = scratch("errors");
  auto parse_err = [](const std::string& text) {
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    return nlohmann::json::parse(text);
  };

  RunResult r = run_tool("prune --model x.ldap", dir);
  CHECK(r.status == 2);
  CHECK(parse_err(r.err)["error"]["kind"] == "usage");

  r = run_tool("prune --model x.ldap --threshold 0.1 --grid 0:1:0.5", dir);
  CHECK(r.status == 2);

  r = run_tool("eval --model x.ldap --classifier knn", dir);
  CHECK(r.status == 2);

  r = run_tool("bench --model x.ldap", dir);
  CHECK(r.status == 2);

  r = run_tool("extract --model " + (dir / "missing.ldap").string() + " --out " +
                   (dir / "o").string(), dir);
  CHECK(r.status == 1);
  const auto j = parse_err(r.err);
  CHECK(j["error"]["kind"] == "io");
  CHECK(j["error"]["message"].get<std::string>().find("missing.ldap") != std::string::npos);

  std::ofstream(dir / "junk.ldap") << "not a model";
  r = run_tool("analyze --model " + (dir / "junk.ldap").string() + " --out " +
                   (dir / "o").string(), dir);
  CHECK(r.status == 1);
  CHECK(parse_err(r.err)["error"]["kind"] == "bad_magic");

  r = run_tool("train --dataset dir:" + (dir / "nowhere").string() + " --out " +
                   (dir / "o").string(), dir);
  CHECK(r.status == 1);
  CHECK(parse_err(r.err)["error"].contains("kind"));
}

TEST_CASE("command chain: analyze, prune, sweep, eval") {
  const fs::path dir = scratch("chain");
  const std::string common = std::string(kSmall) + " ";
  REQUIRE(run_tool("train " + common + "--epochs 3 --out " + (dir / "t").string(), dir).status ==
          0);
  const std::string model = (dir / "t" / "model.ldap").string();

  REQUIRE(run_tool("analyze " + common + "--k 4 --model " + model + " --out " +
                       (dir / "a").string(), dir).status == 0);
  const CsvTable ranking = read_csv(dir / "a" / "ranking.csv");
  std::size_t selected = 0;
  for (std::size_t r = 0; r < ranking.rows.size(); ++r) {
    if (ranking.text(r, "selected") == "1") {
      ++selected;
      CHECK(ranking.number(r, "rank") < 4);
    }
  }
  CHECK(selected == 4);
  CHECK(read_csv(dir / "a" / "sw.csv").rows.size() == 32);

  REQUIRE(run_tool("prune " + common + "--k 4 --threshold 0.4 --epochs 1 --model " + model +
                       " --out " + (dir / "p").string(), dir).status == 0);
  const ModelDescriptor base = load_model(model);
  const ModelDescriptor pruned = load_model(dir / "p" / "pruned.ldap");
  CHECK(pruned.layers[*last_conv_index(pruned)].spec.conv.out_channels == 4);
  CHECK(pruned.provenance.find(model_fingerprint(base)) != std::string::npos);
  const CsvTable report = read_csv(dir / "p" / "prune_report.csv");
  std::size_t after = 0;
  for (std::size_t r = 0; r < report.rows.size(); ++r)
    after += static_cast<std::size_t>(report.number(r, "params_after"));
  CHECK(after == model_param_count(pruned).conv);
  CHECK(read_csv(dir / "p" / "dependencies.csv").header ==
        std::vector<std::string>{"layer", "filter", "score"});

  REQUIRE(run_tool("sweep " + common + "--k 4 --grid 0.2:0.6:0.4 --epochs 1 --model " + model +
                       " --out " + (dir / "s").string(), dir).status == 0);
  const CsvTable sweep = read_csv(dir / "s" / "sweep.csv");
  std::size_t lda = 0, magnitude = 0;
  for (std::size_t r = 0; r < sweep.rows.size(); ++r)
    (sweep.text(r, "method") == "lda" ? lda : magnitude) += 1;
  CHECK(lda == 2);
  CHECK(magnitude >= 1);

  // Accuracy in the report must equal a recount from predictions.csv.
  for (const char* head : {"fc", "qda", "svml"}) {
    const fs::path out = dir / (std::string("e_") + head);
    REQUIRE(run_tool("eval " + common + "--classifier " + head + " --model " + model +
                         " --out " + out.string(), dir).status == 0);
    const CsvTable pred = read_csv(out / "predictions.csv");
    std::size_t correct = 0;
    for (std::size_t r = 0; r < pred.rows.size(); ++r)
      correct += pred.text(r, "label") == pred.text(r, "predicted");
    const double acc = static_cast<double>(correct) / static_cast<double>(pred.rows.size());
    CHECK(std::stod(report_value(slurp(out / "report.txt"), "accuracy")) ==
          doctest::Approx(acc).epsilon(1e-6));
  }

  // A fitted head is stored and reused on the next call.
  const fs::path stored = dir / "e_qda" / "model_with_head.ldap";
  REQUIRE(fs::exists(stored));
  REQUIRE(run_tool("eval " + common + "--classifier qda --model " + stored.string() +
                       " --out " + (dir / "e_qda2").string(), dir).status == 0);
  CHECK(report_value(slurp(dir / "e_qda2" / "report.txt"), "head") == "stored");
  CHECK(slurp(dir / "e_qda2" / "predictions.csv") == slurp(dir / "e_qda" / "predictions.csv"));
}

TEST_CASE("bench on an identity plan reports per-layer ratios near 1") {
  const ModelDescriptor model = make_toy_net({}, 9);
  std::vector<std::vector<std::size_t>> keeps;
  for (std::size_t idx : conv_layer_indices(model)) {
    std::vector<std::size_t> all(static_cast<std::size_t>(model.layers[idx].spec.conv.out_channels));
    std::iota(all.begin(), all.end(), std::size_t{0});
    keeps.push_back(all);
  }
  const ModelDescriptor same = apply_prune(model, make_plan(model, keeps));
  DatasetSource src;
  src.synthetic.n_per_class = 10;
  const DatasetSplit data = load_dataset(src);
  const BenchResult r = bench_models(model, same, data.test, BenchConfig{});
  CHECK(r.runs == 30);
  CHECK(r.warmup == 5);
  CHECK(r.base_params == r.pruned_params);
  for (const BenchLayer& l : r.layers) {
    INFO("layer " << l.layer);
    CHECK(l.pruned_ms / l.base_ms == doctest::Approx(1.0).epsilon(0.2));
  }
  CHECK(r.speedup() == doctest::Approx(1.0).epsilon(0.2));

  const CsvTable t = parse_csv(to_csv_string(bench_table(r)));
  CHECK(t.rows.size() == model.layers.size() + 1);
  CHECK(t.rows.back()[0] == "total");

  BenchConfig few;
  few.runs = 10;
  CHECK(testsupport::error_kind_of([&] { bench_models(model, same, data.test, few); }) ==
        ErrorKind::InvalidArgument);
}
