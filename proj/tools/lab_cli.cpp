#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lindlab/census.hpp"
#include "lindlab/errors.hpp"
#include "lindlab/experiment.hpp"
#include "lindlab/instance_io.hpp"
#include "lindlab/measures.hpp"
#include "lindlab/schedule.hpp"
#include "lindlab/statistics.hpp"
#include "lindlab/util.hpp"

namespace {

struct Flags {
  std::string config;
  std::string schedule;  // validate-schedule can take the CSV directly
  std::string out;
  std::string dest;
  std::string mode;
  std::string which = "all";
  std::uint64_t seed = 0;
  bool seed_set = false;
  long long exact_cap = 0;
  long long samples = 0;
  int workers = 0;
};

// Flag wins over the environment, the environment over the config file.
void resolve_seed(lindlab::ExperimentConfig& cfg, const Flags& fl) {
  if (fl.seed_set) {
    cfg.seed = fl.seed;
    return;
  }
  if (const char* env = std::getenv("LINDEBERG_LAB_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      lindlab::fail(lindlab::ErrorCode::BadConfig,
                    std::string("LINDEBERG_LAB_SEED is not an integer: ") +
                        env);
    cfg.seed = v;
  }
}

lindlab::ExperimentConfig load_cfg(const Flags& fl) {
  if (fl.config.empty())
    lindlab::fail(lindlab::ErrorCode::BadConfig, "--config is required");
  lindlab::ExperimentConfig cfg = lindlab::load_experiment_config(fl.config);
  if (!fl.mode.empty()) cfg.mode = fl.mode;
  if (!fl.out.empty()) cfg.out = fl.out;
  if (fl.exact_cap > 0) cfg.exact_cap = fl.exact_cap;
  if (fl.samples > 0) cfg.samples = fl.samples;
  if (fl.workers > 0) cfg.workers = fl.workers;
  resolve_seed(cfg, fl);
  return cfg;
}

void print_manifest(const lindlab::RunManifest& man) {
  std::cout << "out: " << man.out_dir << "\n";
  std::cout << "config_hash: " << man.config_hash << "\n";
  std::cout << "seed: " << man.seed << "\n";
  std::cout << "rows completed:";
  for (int l : man.ls) std::cout << ' ' << l;
  std::cout << "\n";
  for (const auto& e : man.errors) std::cout << "error: " << e << "\n";
  std::cout << "wall_seconds: " << man.wall_seconds << "\n";
}

int cmd_run(const Flags& fl) {
  const lindlab::ExperimentConfig cfg = load_cfg(fl);
  const lindlab::RunManifest man = lindlab::run_experiment(cfg);
  print_manifest(man);
  if (man.ls.empty()) {
    std::cerr << "error: no schedule row completed\n";
    return 3;
  }
  return 0;
}

int cmd_census(const Flags& fl) {
  const lindlab::ExperimentConfig cfg = load_cfg(fl);
  const lindlab::RunManifest man = lindlab::run_census(cfg);
  print_manifest(man);
  return man.ls.empty() ? 3 : 0;
}

lindlab::ScheduleMode parse_mode(const std::string& s) {
  if (s.empty() || s == "plain") return lindlab::ScheduleMode::Plain;
  if (s == "array") return lindlab::ScheduleMode::Array;
  if (s == "relaxed") return lindlab::ScheduleMode::Relaxed;
  lindlab::fail(lindlab::ErrorCode::BadConfig,
                "unknown schedule mode '" + s + "'");
}

int cmd_validate(const Flags& fl) {
  std::vector<lindlab::ScheduleEntry> entries;
  lindlab::ExperimentConfig cfg;
  bool have_cfg = false;
  if (!fl.schedule.empty()) {
    entries = lindlab::load_schedule(fl.schedule);
  } else {
    cfg = load_cfg(fl);
    have_cfg = true;
    entries = lindlab::load_schedule(cfg.schedule);
  }
  lindlab::ScheduleMode mode = parse_mode(fl.mode);
  if (fl.mode.empty() && have_cfg && cfg.mode == "array")
    mode = lindlab::ScheduleMode::Array;

  std::vector<lindlab::ArrayEntryData> adata;
  std::vector<double> sigma;
  const std::vector<lindlab::ArrayEntryData>* adata_p = nullptr;
  const std::vector<double>* sigma_p = nullptr;
  if (mode == lindlab::ScheduleMode::Array) {
    if (!have_cfg)
      lindlab::fail(lindlab::ErrorCode::BadConfig,
                    "array mode needs --config for the observable list");
    const lindlab::InstanceSpec inst = lindlab::load_instance(cfg.instance);
    if (cfg.array_observables.size() != entries.size())
      lindlab::fail(lindlab::ErrorCode::BadConfig,
                    "array_observables must list one name per schedule row");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const lindlab::Observable& f =
          inst.observable(cfg.array_observables[i]);
      const double kappa =
          cfg.kappa_eps > 0 ? cfg.kappa_eps : entries[i].eps;
      const double denom =
          1.0 - std::exp(-entries[i].eta * f.holder_alpha / 2.0);
      adata.push_back(
          {f.sup_norm, denom > 0 ? f.holder_L * kappa / denom : 1e300});
    }
    adata_p = &adata;
  } else if (mode == lindlab::ScheduleMode::Relaxed) {
    if (!have_cfg)
      lindlab::fail(lindlab::ErrorCode::BadConfig,
                    "relaxed mode needs --config for the variance series");
    const lindlab::InstanceSpec inst = lindlab::load_instance(cfg.instance);
    const lindlab::Observable& f = inst.observable(cfg.observable);
    const double lmax = inst.lambda.lambda_max();
    double max_T = 0;
    for (const auto& e : entries) max_T = std::max(max_T, e.T);
    const auto max_len =
        static_cast<std::size_t>(std::ceil(max_T / inst.roof.min()));
    const auto cycles = lindlab::enumerate_cycles(
        inst.sys, inst.roof, inst.lambda, max_len, cfg.budget);
    for (const auto& e : entries) {
      const auto win = lindlab::census_window(cycles, inst.lambda, e.T,
                                              e.delta, e.eta, e.eta / lmax);
      const auto base = lindlab::uniform_measure(win);
      sigma.push_back(lindlab::sigma_l(inst.roof, f, base, e.T));
    }
    sigma_p = &sigma;
  }

  const lindlab::ScheduleReport rep =
      lindlab::validate_schedule(entries, mode, adata_p, sigma_p);
  std::cout << "mode: " << lindlab::schedule_mode_name(rep.mode) << "\n";
  for (const auto& c : rep.checks) {
    std::cout << "check " << c.name << ": ";
    if (c.ok) {
      std::cout << "ok\n";
    } else if (c.violation) {
      std::cout << "VIOLATED at entries (" << c.violation->first << ", "
                << c.violation->second << ")\n";
    } else {
      std::cout << "VIOLATED\n";
    }
  }
  for (const auto& v : rep.violations)
    std::cout << "entry violation: " << v << "\n";
  std::cout << (rep.all_ok ? "schedule accepted" : "schedule rejected")
            << "\n";
  return rep.all_ok ? 0 : 2;
}

int cmd_emit_plots(const Flags& fl) {
  if (fl.out.empty())
    lindlab::fail(lindlab::ErrorCode::BadConfig,
                  "--out must name a finished run directory");
  const std::string dest = fl.dest.empty() ? fl.out + "/plots" : fl.dest;
  lindlab::emit_plot_data(fl.out, fl.which, dest);
  std::cout << "wrote " << fl.which << " plot data to " << dest << "\n";
  return 0;
}

int cmd_check(const Flags& fl) {
  if (fl.config.empty())
    lindlab::fail(lindlab::ErrorCode::BadConfig,
                  "--config must name a criteria file");
  if (fl.out.empty())
    lindlab::fail(lindlab::ErrorCode::BadConfig,
                  "--out must name a finished run directory");
  const auto criteria = lindlab::load_criteria(fl.config);
  const lindlab::AcceptanceReport rep =
      lindlab::check_acceptance(fl.out, criteria);
  for (const auto& w : rep.warnings) std::cout << "warning: " << w << "\n";
  for (const auto& item : rep.items) {
    std::printf("[%s] %s measured=%s threshold=%s%s%s\n",
                item.pass ? "PASS" : "FAIL", item.name.c_str(),
                lindlab::fmt17(item.measured).c_str(),
                lindlab::fmt17(item.threshold).c_str(),
                item.detail.empty() ? "" : " ", item.detail.c_str());
  }
  std::cout << (rep.all_pass ? "acceptance: pass" : "acceptance: fail")
            << "\n";
  return rep.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"periodic-orbit measure laboratory"};
  app.require_subcommand(1);
  Flags fl;

  auto* run = app.add_subcommand("run", "run the full pipeline");
  run->add_option("--config", fl.config, "experiment config file")
      ->required();
  run->add_option("--seed", fl.seed, "master seed (wins over env and config)")
      ->each([&](const std::string&) { fl.seed_set = true; });
  run->add_option("--out", fl.out, "output directory override");
  run->add_option("--mode", fl.mode, "mme | equilibrium | array");
  run->add_option("--exact-cap", fl.exact_cap, "exact tuple enumeration cap");
  run->add_option("--samples", fl.samples, "sampled tuple count");
  run->add_option("--workers", fl.workers, "statistics worker threads");

  auto* census = app.add_subcommand("census", "census and growth report only");
  census->add_option("--config", fl.config, "experiment config file")
      ->required();
  census->add_option("--out", fl.out, "output directory override");

  auto* val = app.add_subcommand("validate-schedule",
                                 "check the trend requirements of a schedule");
  val->add_option("--config", fl.config, "experiment config file");
  val->add_option("--schedule", fl.schedule,
                  "schedule CSV (plain mode needs nothing else)");
  val->add_option("--mode", fl.mode, "plain | array | relaxed");

  auto* plots = app.add_subcommand("emit-plots", "export plot series");
  plots->add_option("which", fl.which,
                    "ks | ratios | lindeberg | deviation | dynvar | cdf | all");
  plots->add_option("--out", fl.out, "finished run directory")->required();
  plots->add_option("--dest", fl.dest, "destination (default <out>/plots)");

  auto* check = app.add_subcommand("check-acceptance",
                                   "evaluate criteria against a run");
  check->add_option("--config", fl.config, "criteria file")->required();
  check->add_option("--out", fl.out, "finished run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(fl);
    if (census->parsed()) return cmd_census(fl);
    if (val->parsed()) return cmd_validate(fl);
    if (plots->parsed()) return cmd_emit_plots(fl);
    if (check->parsed()) return cmd_check(fl);
  } catch (const lindlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lindlab::is_validation_error(e.code()) ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
