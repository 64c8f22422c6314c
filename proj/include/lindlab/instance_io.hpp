#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lindlab/regularity.hpp"
#include "lindlab/schedule.hpp"
#include "lindlab/symbolic.hpp"

namespace lindlab {

// A model system loaded from one instance file: transition structure, roof,
// regularity weights, and named observables.
struct InstanceSpec {
  std::string name;
  SymbolicSystem sys;
  RoofFunction roof;
  RegularityFunction lambda;
  std::vector<Observable> observables;  // file order

  const Observable& observable(const std::string& want) const;
};

// Instance file format: a key=value header (name, alphabet, row i = 0/1
// flags), then [roof], [lambda], and [observable NAME] sections. Table
// sections carry depth (observables also holder_L, holder_alpha) and one
// line per admissible word, either a scalar or "poly c0 c1 ..." in the
// normalized fiber coordinate. Every admissible word of the declared depth
// must appear; values on inadmissible words are rejected.
InstanceSpec load_instance(const std::string& path);

// Schedule files: a "# eps=.. eta=.. M=.. t0=.." header, a fixed column
// header, then one row per l. Doubles round-trip through fmt17.
std::vector<ScheduleEntry> load_schedule(const std::string& path);
void save_schedule(const std::string& path,
                   const std::vector<ScheduleEntry>& entries);

struct ExperimentConfig {
  std::string dir;        // directory of the config file
  std::string instance;   // resolved against dir
  std::string schedule;   // resolved against dir
  std::string observable;
  std::string mode = "mme";  // mme | equilibrium | array
  std::string potential;     // equilibrium mode: observable name
  std::vector<std::string> array_observables;      // array mode, one per row
  std::vector<std::string> reference_observables;  // convergence tracking
  long long exact_cap = 1'000'000;
  long long samples = 10'000;
  std::uint64_t seed = 1;
  bool has_seed = false;  // seed key present; feeds CLI precedence
  int workers = 1;
  double kappa_eps = 0;
  double ab_threshold = 0.1;
  std::vector<double> gammas{0.25, 0.5, 1.0, 2.0};
  std::string out = "out";  // resolved against dir
  std::size_t budget = 50'000'000;
};

ExperimentConfig load_experiment_config(const std::string& path);

// Named acceptance thresholds, file order preserved. Keys are validated by
// the acceptance checker, not here.
std::vector<std::pair<std::string, double>> load_criteria(
    const std::string& path);

}  // namespace lindlab
