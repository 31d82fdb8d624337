#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dslab/stats.hpp"

namespace dslab {

// One training run reduced to the fields the report layer needs.
struct RunSummary {
  std::string dataset;
  std::string arch;
  std::string method;
  std::uint64_t seed = 0;
  std::optional<int> steps_to_threshold;
  double final_val_accuracy = 0.0;
  double wall_time_sec = 0.0;
};

// Curve shape for one method: probe gradient ratio and head norms by step.
struct SeriesPoint {
  int step = 0;
  double grad_ratio = 0.0;
  std::vector<double> aux_w_norm;
};

struct MethodSeries {
  std::string method;
  std::vector<SeriesPoint> points;
};

// Aggregated view of one (dataset, arch, method) group. Significance tests
// compare raw steps-to-threshold samples against the baseline group and are
// reported only when both groups have at least two fully converged runs;
// the speedup is undefined whenever either group has a non-converged run.
struct MethodRow {
  std::string dataset;
  std::string arch;
  std::string method;
  std::size_t n = 0;
  SampleStats accuracy;
  std::size_t converged = 0;
  std::optional<SampleStats> steps;  // set only when every run converged
  std::optional<WelchResult> vs_baseline;
  std::optional<double> effect_size;  // Cohen's d, baseline minus method
  std::optional<double> speedup_pct;
};

struct StatsReport {
  std::string baseline;
  std::vector<MethodRow> rows;  // first-appearance order of the groups
};

StatsReport build_report(const std::vector<RunSummary>& runs,
                         const std::string& baseline);

// Writes under out_dir (created if missing):
//   results.txt   fixed-width summary table, dashes for undefined cells
//   results.csv   same rows, machine-readable, round-trip-exact doubles
//   per_seed.csv  one row per run
//   series_<method>.csv  step, grad_ratio, one column per head norm
void render_report(const StatsReport& report,
                   const std::vector<RunSummary>& runs,
                   const std::vector<MethodSeries>& series,
                   const std::string& out_dir);

}  // namespace dslab
