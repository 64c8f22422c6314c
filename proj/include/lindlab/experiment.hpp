#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lindlab/instance_io.hpp"

namespace lindlab {

// Record of one experiment run. The manifest is the only artifact that
// carries wall-clock time, so artifact directories from runs with the same
// config and seed are byte-identical everywhere else.
struct RunManifest {
  std::string out_dir;
  std::string config_hash;  // fnv1a over instance+schedule bytes and settings
  std::uint64_t seed = 1;
  std::string mode;
  int workers = 1;
  std::vector<int> ls;               // schedule rows that completed
  std::vector<std::string> errors;   // "l=3: ..." or "<stage>: ..."
  std::vector<std::string> artifacts;  // relative to out_dir, write order
  double wall_seconds = 0;
};

// Runs the full pipeline: census once, then per row the window, base
// weights, orbit-segment measure, block statistics, the draw-side CDF, and
// reference deviations; then the cross-row growth, schedule, and series
// artifacts. A failing row is recorded and skipped; cross-row artifacts use
// the rows that survived.
RunManifest run_experiment(const ExperimentConfig& cfg);

// Census-only pipeline: per-row window CSVs plus the growth report.
RunManifest run_census(const ExperimentConfig& cfg);

// Copies one series ("ks", "ratios", "lindeberg", "deviation", "dynvar") or
// the final-row CDF tables ("cdf") from a finished run into dest_dir; "all"
// copies everything. Missing or empty sources raise MissingSeries.
void emit_plot_data(const std::string& out_dir, const std::string& which,
                    const std::string& dest_dir);

struct AcceptanceItem {
  std::string name;
  bool pass = false;
  double measured = 0;
  double threshold = 0;
  std::string detail;
};

struct AcceptanceReport {
  std::vector<AcceptanceItem> items;
  std::vector<std::string> warnings;
  bool all_pass = true;
};

// Evaluates named criteria against summary.json of a finished run. Trend
// criteria take the tail length as their value; unknown names are rejected.
AcceptanceReport check_acceptance(
    const std::string& out_dir,
    const std::vector<std::pair<std::string, double>>& criteria);

}  // namespace lindlab
