#include "ldaprune/bench.hpp"

#include <algorithm>
#include <chrono>

#include <sched.h>

#include "ldaprune/error.hpp"
#include "ldaprune/forward.hpp"
#include "ldaprune/model_io.hpp"

namespace ldaprune {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void pin_to_current_cpu() {
  const int cpu = sched_getcpu();
  if (cpu < 0) return;
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu, &set);
  sched_setaffinity(0, sizeof set, &set);  // best effort
}

struct RunSample {
  std::vector<double> layer_ms;
  double total_ms = 0.0;
};

// One pass over the images; times are per image.
RunSample run_once(const ModelDescriptor& model, std::span<const LabeledImage> images) {
  RunSample s;
  s.layer_ms.assign(model.layers.size(), 0.0);
  const auto start = Clock::now();
  for (const LabeledImage& item : images) {
    Tensor x = item.image;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      PoolSwitches switches;
      const auto t0 = Clock::now();
      x = apply_layer(model.layers[i], x, &switches);
      s.layer_ms[i] += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    }
  }
  s.total_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  const double n = static_cast<double>(images.size());
  for (double& v : s.layer_ms) v /= n;
  s.total_ms /= n;
  return s;
}

ModelTiming summarize(const std::vector<RunSample>& samples, std::size_t layers) {
  ModelTiming t;
  std::vector<double> column(samples.size());
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t r = 0; r < samples.size(); ++r) column[r] = samples[r].layer_ms[l];
    t.layer_ms.push_back(median(column));
  }
  for (std::size_t r = 0; r < samples.size(); ++r) column[r] = samples[r].total_ms;
  t.total_ms = median(column);
  return t;
}

std::span<const LabeledImage> bench_images(std::span<const LabeledImage> images,
                                           const BenchConfig& config) {
  require(!images.empty(), ErrorKind::InvalidArgument, "bench needs at least one image");
  require(config.runs >= 30 && config.warmup >= 5, ErrorKind::InvalidArgument,
          "bench needs at least 30 timed runs and 5 warmups");
  return images.first(std::min(images.size(), std::max<std::size_t>(config.images, 1)));
}

}  // namespace

ModelTiming time_model(const ModelDescriptor& model, std::span<const LabeledImage> images,
                       const BenchConfig& config) {
  const auto subset = bench_images(images, config);
  pin_to_current_cpu();
  for (int w = 0; w < config.warmup; ++w) run_once(model, subset);
  std::vector<RunSample> samples;
  for (int r = 0; r < config.runs; ++r) samples.push_back(run_once(model, subset));
  return summarize(samples, model.layers.size());
}

BenchResult bench_models(const ModelDescriptor& base, const ModelDescriptor& pruned,
                         std::span<const LabeledImage> images, const BenchConfig& config) {
  require(base.layers.size() == pruned.layers.size(), ErrorKind::InvalidArgument,
          "bench models must have the same layer sequence");
  for (std::size_t i = 0; i < base.layers.size(); ++i)
    require(base.layers[i].spec.kind == pruned.layers[i].spec.kind, ErrorKind::InvalidArgument,
            "bench models differ in kind at layer " + std::to_string(i));
  const auto subset = bench_images(images, config);
  pin_to_current_cpu();
  for (int w = 0; w < config.warmup; ++w) {
    run_once(base, subset);
    run_once(pruned, subset);
  }
  std::vector<RunSample> a, b;
  for (int r = 0; r < config.runs; ++r) {
    a.push_back(run_once(base, subset));
    b.push_back(run_once(pruned, subset));
  }
  const ModelTiming ta = summarize(a, base.layers.size());
  const ModelTiming tb = summarize(b, pruned.layers.size());

  BenchResult result;
  result.runs = config.runs;
  result.warmup = config.warmup;
  for (std::size_t i = 0; i < base.layers.size(); ++i)
    result.layers.push_back({i, base.layers[i].spec.kind, ta.layer_ms[i], tb.layer_ms[i],
                             layer_param_count(base.layers[i]),
                             layer_param_count(pruned.layers[i])});
  result.base_total_ms = ta.total_ms;
  result.pruned_total_ms = tb.total_ms;
  result.base_params = model_param_count(base);
  result.pruned_params = model_param_count(pruned);
  result.base_file_bytes = serialize_model(base).size();
  result.pruned_file_bytes = serialize_model(pruned).size();
  return result;
}

CsvTable bench_table(const BenchResult& r) {
  CsvTable t;
  t.header = {"layer", "kind", "base_params", "pruned_params", "base_ms", "pruned_ms", "speedup"};
  auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
  for (const BenchLayer& l : r.layers)
    t.rows.push_back({std::to_string(l.layer), std::string(to_string(l.kind)),
                      std::to_string(l.base_params), std::to_string(l.pruned_params),
                      format_number(l.base_ms), format_number(l.pruned_ms),
                      format_number(ratio(l.base_ms, l.pruned_ms))});
  t.rows.push_back({"total", "model", std::to_string(r.base_params.total),
                    std::to_string(r.pruned_params.total), format_number(r.base_total_ms),
                    format_number(r.pruned_total_ms),
                    format_number(ratio(r.base_total_ms, r.pruned_total_ms))});
  return t;
}

}  // namespace ldaprune
