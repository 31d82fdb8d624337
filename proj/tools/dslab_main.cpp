// dslab: train deeply supervised models, sweep initialization methods over
// seeds, verify the library's structural invariants, and finite-difference
// check the autodiff engine. Every command works through files: configs in,
// metrics and reports out.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dslab/data.hpp"
#include "dslab/gradcheck.hpp"
#include "dslab/init.hpp"
#include "dslab/model_zoo.hpp"
#include "dslab/props.hpp"
#include "dslab/report.hpp"
#include "dslab/run_config.hpp"
#include "dslab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Synthetic data is drawn once per sweep from this fixed seed, independent of
// the run seed, so every method and seed trains on the same sample.
constexpr std::uint64_t kSyntheticDataSeed = 104729;

struct LoadedData {
  dslab::Dataset train;
  dslab::Dataset val;
  std::string name;
};

LoadedData load_data(const dslab::RunConfig& cfg) {
  using namespace dslab;
  if (cfg.source == "synthetic") {
    const std::size_t per = cfg.subset ? cfg.subset : 200;
    const std::size_t val_per = std::max<std::size_t>(per / 5, 10);
    const auto classes = static_cast<std::size_t>(cfg.classes);
    Dataset all = make_synthetic(cfg.classes, cfg.input_dim,
                                 classes * (per + val_per), kSyntheticDataSeed);
    LoadedData d{slice_dataset(all, 0, classes * per),
                 slice_dataset(all, classes * per, classes * val_per),
                 "synthetic"};
    d.val.split = Split::Val;
    return d;
  }
  std::string dir = cfg.data_dir;
  if (dir.empty()) dir = data_root().value_or("");
  if (dir.empty()) {
    throw Error("data: no directory for " + cfg.source +
                "; set data.dir in the config or export DSLAB_DATA_DIR");
  }
  DatasetPair pair =
      cfg.source == "cifar10" ? load_cifar10(dir) : load_cifar100(dir);
  if (cfg.subset > 0) {
    pair.train = subset_per_class(pair.train, cfg.subset);
    // Validation only ranks runs; capping it keeps evaluation proportionate
    // to the shrunken training set.
    pair.val = subset_per_class(pair.val, std::min<std::size_t>(cfg.subset, 100));
  }
  return {std::move(pair.train), std::move(pair.val), cfg.source};
}

dslab::ModelGraph build_model(const dslab::RunConfig& cfg) {
  using namespace dslab;
  const BuildOptions opts = suggested_build_options(cfg.init.kind);
  if (cfg.arch == "densenet_ds") return build_densenet_ds(cfg.classes, 12, 6, opts);
  if (cfg.arch == "resnet_ds") {
    const auto variant =
        cfg.variant == "on_path" ? ResVariant::OnPath : ResVariant::SideTap;
    return build_resnet_ds(cfg.classes, variant, opts);
  }
  return build_mlp_ds(cfg.input_dim, cfg.hidden, cfg.classes);
}

struct RunResult {
  dslab::RunSummary summary;
  bool skipped = false;
  bool aborted = false;
  int abort_step = -1;
  fs::path dir;
};

std::optional<dslab::RunSummary> read_cached_summary(const fs::path& run_dir,
                                                     const std::string& hash) {
  const fs::path summary_path = run_dir / "summary.json";
  if (!fs::exists(summary_path) || !fs::exists(run_dir / "metrics.jsonl")) {
    return std::nullopt;
  }
  json j;
  try {
    std::ifstream in(summary_path);
    in >> j;
  } catch (const json::exception&) {
    return std::nullopt;  // stale or truncated; redo the run
  }
  if (j.value("config_hash", "") != hash) return std::nullopt;
  dslab::RunSummary s;
  s.dataset = j.value("dataset", "");
  s.arch = j.value("arch", "");
  s.method = j.value("method", "");
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("steps_to_threshold") && !j["steps_to_threshold"].is_null()) {
    s.steps_to_threshold = j["steps_to_threshold"].get<int>();
  }
  s.final_val_accuracy = j.value("final_val_accuracy", 0.0);
  s.wall_time_sec = j.value("wall_time_sec", 0.0);
  return s;
}

// Trains one configuration into run_dir, or reuses the finished run already
// there when its recorded config hash matches.
RunResult execute_run(const dslab::RunConfig& cfg, const LoadedData& data,
                      const fs::path& run_dir, const std::string& label) {
  using namespace dslab;
  const std::string hash = config_hash(cfg);
  if (auto cached = read_cached_summary(run_dir, hash)) {
    return {*cached, true, false, -1, run_dir};
  }

  fs::create_directories(run_dir);
  ModelGraph model = build_model(cfg);
  Tensor calib;
  if (cfg.init.kind == InitKind::Lsuv || cfg.init.kind == InitKind::Hybrid) {
    calib = leading_images(data.train, cfg.init.lsuv.samples);
  }
  const InitReport init_report = apply_init(model, cfg.init, calib);
  for (const std::string& note : init_report.notices) {
    std::fprintf(stderr, "note [%s]: %s\n", label.c_str(), note.c_str());
  }

  const RunMetrics m =
      train(model, data.train, data.val, cfg.train, cfg.init.seed,
            (run_dir / "metrics.jsonl").string(), label);

  RunResult r;
  r.dir = run_dir;
  r.aborted = m.aborted_nan;
  r.abort_step = m.abort_step;
  r.summary = {data.name,
               cfg.arch,
               init_scheme_str(cfg.init.kind),
               cfg.init.seed,
               m.steps_to_threshold,
               m.final_val_accuracy,
               m.wall_time_sec};

  json j;
  j["dataset"] = r.summary.dataset;
  j["arch"] = r.summary.arch;
  j["method"] = r.summary.method;
  j["seed"] = r.summary.seed;
  if (m.steps_to_threshold) {
    j["steps_to_threshold"] = *m.steps_to_threshold;
  } else {
    j["steps_to_threshold"] = nullptr;
  }
  j["final_val_accuracy"] = m.final_val_accuracy;
  j["wall_time_sec"] = m.wall_time_sec;
  j["ck"] = m.ck;
  j["aborted_nan"] = m.aborted_nan;
  if (m.aborted_nan) {
    j["abort_step"] = m.abort_step;
  } else {
    j["abort_step"] = nullptr;
  }
  j["config_hash"] = hash;

  std::ofstream out(run_dir / "summary.json");
  if (!out) throw Error("cannot open " + (run_dir / "summary.json").string());
  out << j.dump(2) << "\n";

  std::ofstream sidecar(run_dir / "config.resolved.json");
  if (!sidecar) {
    throw Error("cannot open " + (run_dir / "config.resolved.json").string());
  }
  sidecar << resolved_config_text(cfg);
  return r;
}

// Probe points for the series CSVs, re-read from the metrics stream so cached
// and fresh runs are handled the same way.
std::vector<dslab::SeriesPoint> read_series(const fs::path& metrics_path) {
  std::ifstream in(metrics_path);
  if (!in) throw dslab::Error("cannot open " + metrics_path.string());
  std::vector<dslab::SeriesPoint> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.value("kind", "") != "step" || !j.contains("grad_ratio")) continue;
    dslab::SeriesPoint p;
    p.step = j.at("step").get<int>();
    p.grad_ratio = j.at("grad_ratio").get<double>();
    p.aux_w_norm = j.at("aux_w_norm").get<std::vector<double>>();
    pts.push_back(std::move(p));
  }
  return pts;
}

fs::path run_directory(const dslab::RunConfig& cfg) {
  return fs::path(cfg.out_dir) / dslab::init_scheme_str(cfg.init.kind) /
         ("seed" + std::to_string(cfg.init.seed));
}

std::string run_label(const dslab::RunConfig& cfg) {
  return dslab::init_scheme_str(cfg.init.kind) + "/seed" +
         std::to_string(cfg.init.seed);
}

// Options shared by train and sweep that override the config file.
struct CommonOverrides {
  std::optional<std::string> source;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> subset;
  std::optional<int> max_steps;

  void apply(dslab::RunConfig& cfg) const {
    if (source) cfg.source = *source;
    if (data_dir) cfg.data_dir = *data_dir;
    if (out_dir) cfg.out_dir = *out_dir;
    if (subset) cfg.subset = *subset;
    if (max_steps) cfg.train.max_steps = *max_steps;
  }
};

void add_common_options(CLI::App* cmd, CommonOverrides& o) {
  cmd->add_option("--source", o.source,
                  "Override data source: cifar10 | cifar100 | synthetic");
  cmd->add_option("--data-dir", o.data_dir, "Directory with dataset binaries");
  cmd->add_option("--out", o.out_dir, "Output directory for run artifacts");
  cmd->add_option("--subset", o.subset,
                  "Per-class training-row cap (0 keeps the source default)");
  cmd->add_option("--max-steps", o.max_steps, "Training step budget");
}

int cmd_train(const std::string& config_path, const CommonOverrides& common,
              const std::optional<std::string>& init_name,
              const std::optional<std::uint64_t>& seed,
              const std::optional<bool>& lsuv_include_aux) {
  using namespace dslab;
  RunConfig cfg = load_run_config(config_path);
  common.apply(cfg);
  if (init_name) cfg.init.kind = parse_init_scheme(*init_name);
  if (seed) cfg.init.seed = *seed;
  if (lsuv_include_aux) cfg.init.lsuv.include_aux = *lsuv_include_aux;
  cfg.validate();

  const LoadedData data = load_data(cfg);
  const fs::path dir = run_directory(cfg);
  const RunResult r = execute_run(cfg, data, dir, run_label(cfg));

  std::printf("run %s on %s/%s: %s\n", run_label(cfg).c_str(),
              r.summary.dataset.c_str(), r.summary.arch.c_str(),
              r.skipped ? "cached (config hash matches)" : "trained");
  if (r.aborted) {
    std::fprintf(stderr,
                 "dslab: training aborted on a non-finite loss at step %d; "
                 "metrics up to the previous step were kept\n",
                 r.abort_step);
    return 1;
  }
  if (r.summary.steps_to_threshold) {
    std::printf("  steps_to_threshold:  %d\n", *r.summary.steps_to_threshold);
  } else {
    std::printf("  steps_to_threshold:  not reached\n");
  }
  std::printf("  final_val_accuracy:  %.4f\n", r.summary.final_val_accuracy);
  std::printf("  wall_time_sec:       %.2f\n", r.summary.wall_time_sec);
  std::printf("  artifacts:           %s\n", r.dir.string().c_str());
  return 0;
}

int cmd_sweep(const std::string& config_path, const CommonOverrides& common,
              std::vector<std::string> methods,
              const std::vector<std::uint64_t>& seeds, unsigned jobs,
              const std::string& baseline) {
  using namespace dslab;
  RunConfig base = load_run_config(config_path);
  common.apply(base);
  base.validate();
  if (methods.empty()) throw Error("sweep: need at least one method");
  if (seeds.empty()) throw Error("sweep: need at least one seed");
  for (const std::string& m : methods) parse_init_scheme(m);  // fail fast
  if (std::find(methods.begin(), methods.end(), baseline) == methods.end()) {
    std::fprintf(stderr,
                 "note: baseline '%s' is not among the swept methods; "
                 "significance columns will stay empty\n",
                 baseline.c_str());
  }

  const LoadedData data = load_data(base);
  std::printf("sweep: %zu methods x %zu seeds on %s (%zu train rows)\n",
              methods.size(), seeds.size(), data.name.c_str(),
              data.train.images.dim(0));

  struct Task {
    RunConfig cfg;
    fs::path dir;
    std::string label;
  };
  std::vector<Task> tasks;
  for (const std::string& m : methods) {
    for (std::uint64_t s : seeds) {
      RunConfig cfg = base;
      cfg.init.kind = parse_init_scheme(m);
      cfg.init.seed = s;
      tasks.push_back({cfg, run_directory(cfg), run_label(cfg)});
    }
  }

  std::vector<std::optional<RunResult>> results(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        results[i] = execute_run(tasks[i].cfg, data, tasks[i].dir, tasks[i].label);
        const RunResult& r = *results[i];
        std::printf("  [%zu/%zu] %-24s %s\n", i + 1, tasks.size(),
                    tasks[i].label.c_str(),
                    r.skipped  ? "cached"
                    : r.aborted ? "aborted (non-finite loss)"
                                : "done");
        std::fflush(stdout);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  jobs = std::clamp<unsigned>(jobs, 1, static_cast<unsigned>(tasks.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  bool failed = false;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!errors[i].empty()) {
      std::fprintf(stderr, "dslab: run %s failed: %s\n",
                   tasks[i].label.c_str(), errors[i].c_str());
      failed = true;
    }
  }
  if (failed) return 1;

  std::vector<RunSummary> summaries;
  summaries.reserve(tasks.size());
  for (const auto& r : results) summaries.push_back(r->summary);

  // One curve per method, taken from the first seed in the grid.
  std::vector<MethodSeries> series;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].cfg.init.seed != seeds.front()) continue;
    series.push_back({init_scheme_str(tasks[i].cfg.init.kind),
                      read_series(tasks[i].dir / "metrics.jsonl")});
  }

  const StatsReport report = build_report(summaries, baseline);
  const fs::path report_dir = fs::path(base.out_dir) / "report";
  render_report(report, summaries, series, report_dir.string());
  std::printf("report written to %s\n", report_dir.string().c_str());

  std::ifstream table(report_dir / "results.txt");
  std::printf("\n%s", std::string(std::istreambuf_iterator<char>(table),
                                  std::istreambuf_iterator<char>())
                          .c_str());
  return 0;
}

int cmd_verify(const std::vector<std::string>& props, const std::string& out) {
  using namespace dslab;
  const std::vector<PropResult> results = run_properties(props);
  json arr = json::array();
  bool all_pass = true;
  for (const PropResult& r : results) {
    std::printf("%s  %-12s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
    arr.push_back({{"name", r.name},
                   {"pass", r.pass},
                   {"measured", r.measured},
                   {"detail", r.detail}});
    all_pass = all_pass && r.pass;
  }
  std::ofstream f(out);
  if (!f) throw Error("cannot open " + out);
  f << arr.dump(2) << "\n";
  std::printf("%zu/%zu properties hold; details in %s\n",
              static_cast<std::size_t>(std::count_if(
                  results.begin(), results.end(),
                  [](const PropResult& r) { return r.pass; })),
              results.size(), out.c_str());
  return all_pass ? 0 : 1;
}

int cmd_gradcheck(int seeds, double tol, const std::string& out) {
  using namespace dslab;
  if (seeds < 1) throw Error("gradcheck: need at least one seed");
  json rows = json::array();
  double overall = 0.0;
  std::string overall_worst;
  for (const GradCheckCase& c : standard_gradcheck_cases()) {
    GradCheckResult worst;
    for (int s = 1; s <= seeds; ++s) {
      Rng rng(static_cast<std::uint64_t>(s), c.name);
      const GradCheckResult r = c.run(rng);
      if (r.max_rel_err >= worst.max_rel_err) worst = r;
    }
    std::printf("  %-28s max rel err %.3e  (%s)\n", c.name.c_str(),
                worst.max_rel_err, worst.worst.c_str());
    rows.push_back({{"op", c.name},
                    {"max_rel_err", worst.max_rel_err},
                    {"worst", worst.worst},
                    {"pass", worst.ok(tol)}});
    if (worst.max_rel_err >= overall) {
      overall = worst.max_rel_err;
      overall_worst = c.name;
    }
  }
  const bool pass = overall <= tol;
  json j{{"seeds", seeds},
         {"tol", tol},
         {"max_rel_err", overall},
         {"worst_op", overall_worst},
         {"pass", pass},
         {"cases", rows}};
  std::ofstream f(out);
  if (!f) throw Error("cannot open " + out);
  f << j.dump(2) << "\n";
  std::printf("gradcheck: %s, max rel err %.3e (worst: %s), %zu ops x %d seeds\n",
              pass ? "PASS" : "FAIL", overall, overall_worst.c_str(),
              rows.size(), seeds);
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dslab: a laboratory for initialization of deeply supervised networks"};
  app.require_subcommand(1);

  // train
  std::string train_config;
  CommonOverrides train_common;
  std::optional<std::string> train_init;
  std::optional<std::uint64_t> train_seed;
  std::optional<bool> train_lsuv_aux;
  CLI::App* train = app.add_subcommand("train", "Train one run from a config file");
  train->add_option("-c,--config", train_config, "JSON run configuration")
      ->required();
  add_common_options(train, train_common);
  train->add_option("--init", train_init,
                    "Override initialization scheme (he | xavier | lion-dg | "
                    "lsuv | hybrid | fixup | rezero | zero-all)");
  train->add_option("--seed", train_seed, "Override run seed");
  train->add_option("--lsuv-include-aux", train_lsuv_aux,
                    "Calibrate auxiliary heads during LSUV (true | false)");

  // sweep
  std::string sweep_config;
  CommonOverrides sweep_common;
  std::vector<std::string> sweep_methods = {"he", "lion-dg", "lsuv", "hybrid"};
  std::vector<std::uint64_t> sweep_seeds = {42, 123, 456};
  unsigned sweep_jobs = 1;
  std::string sweep_baseline = "he";
  CLI::App* sweep = app.add_subcommand(
      "sweep", "Run a methods x seeds grid and write the aggregate report");
  sweep->add_option("-c,--config", sweep_config, "JSON run configuration")
      ->required();
  add_common_options(sweep, sweep_common);
  sweep->add_option("--methods", sweep_methods,
                    "Initialization schemes to compare")
      ->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Run seeds")->delimiter(',');
  sweep->add_option("--jobs", sweep_jobs, "Parallel worker threads");
  sweep->add_option("--baseline", sweep_baseline,
                    "Method the significance tests compare against");

  // verify
  std::vector<std::string> verify_props;
  std::string verify_out = "verify_report.json";
  CLI::App* verify = app.add_subcommand(
      "verify", "Check the library's structural invariants");
  verify->add_option("--prop", verify_props,
                     "Property to check (repeatable); default is all: "
                     "decoupling | growth | warmup | purity | determinism");
  verify->add_option("--out", verify_out, "Where to write the JSON report");

  // gradcheck
  int gc_seeds = 20;
  double gc_tol = 1e-4;
  std::string gc_out = "gradcheck_report.json";
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of every differentiable op");
  gradcheck->add_option("--seeds", gc_seeds, "Random draws per op");
  gradcheck->add_option("--tol", gc_tol, "Maximum relative error accepted");
  gradcheck->add_option("--out", gc_out, "Where to write the JSON report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return cmd_train(train_config, train_common, train_init, train_seed,
                       train_lsuv_aux);
    }
    if (sweep->parsed()) {
      return cmd_sweep(sweep_config, sweep_common, sweep_methods, sweep_seeds,
                       sweep_jobs, sweep_baseline);
    }
    if (verify->parsed()) return cmd_verify(verify_props, verify_out);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seeds, gc_tol, gc_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dslab: %s\n", e.what());
    return 1;
  }
  return 0;
}
