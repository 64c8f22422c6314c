#include "lindlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "lindlab/census.hpp"
#include "lindlab/errors.hpp"
#include "lindlab/measures.hpp"
#include "lindlab/statistics.hpp"
#include "lindlab/util.hpp"

namespace lindlab {
namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

// JSON fragments as preformatted text. Doubles go through fmt17 and
// non-finite values become null, so artifact bytes are reproducible.
std::string jnum(double v) { return std::isfinite(v) ? fmt17(v) : "null"; }
std::string jint(long long v) { return std::to_string(v); }
std::string jbool(bool b) { return b ? "true" : "false"; }

std::string jstr(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(c));
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
  return out;
}

std::string jarr(const std::vector<std::string>& xs) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += xs[i];
  }
  s += ']';
  return s;
}

std::string jnums(const std::vector<double>& xs) {
  std::vector<std::string> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(jnum(x));
  return jarr(out);
}

std::string jints(const std::vector<long long>& xs) {
  std::vector<std::string> out;
  out.reserve(xs.size());
  for (long long x : xs) out.push_back(jint(x));
  return jarr(out);
}

std::string jopt(const std::optional<double>& v) {
  return v ? jnum(*v) : "null";
}

std::string jopts(const std::vector<std::optional<double>>& xs) {
  std::vector<std::string> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(jopt(x));
  return jarr(out);
}

std::string jstrs(const std::vector<std::string>& xs) {
  std::vector<std::string> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(jstr(x));
  return jarr(out);
}

struct Obj {
  std::string body;
  Obj& put(const std::string& k, const std::string& v) {
    if (!body.empty()) body += ',';
    body += jstr(k);
    body += ':';
    body += v;
    return *this;
  }
  std::string str() const { return "{" + body + "}"; }
};

// ---------------------------------------------------------------------------
// run_experiment

std::string hash_hex(const std::string& blob) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(blob)));
  return buf;
}

// The hash identifies the computation: raw instance and schedule bytes plus
// every setting that feeds the numerics. Output directory and worker count
// stay out because results do not depend on them; the seed is recorded as
// its own manifest field.
std::string canonical_config(const ExperimentConfig& cfg) {
  std::string s;
  s += "mode=" + cfg.mode + "\n";
  s += "observable=" + cfg.observable + "\n";
  s += "potential=" + cfg.potential + "\n";
  s += "array=";
  for (const auto& n : cfg.array_observables) s += n + " ";
  s += "\nreference=";
  for (const auto& n : cfg.reference_observables) s += n + " ";
  s += "\nexact_cap=" + std::to_string(cfg.exact_cap);
  s += "\nsamples=" + std::to_string(cfg.samples);
  s += "\nkappa_eps=" + fmt17(cfg.kappa_eps);
  s += "\nab_threshold=" + fmt17(cfg.ab_threshold);
  s += "\ngammas=";
  for (double g : cfg.gammas) s += fmt17(g) + " ";
  s += "\nbudget=" + std::to_string(cfg.budget);
  return s;
}

std::string cdf_csv(const CltCurve& c) {
  std::string s = "a,empirical,normal\n";
  if (!c.defined) return s;
  for (std::size_t i = 0; i < c.cdf.position.size(); ++i) {
    s += fmt17(c.cdf.position[i]);
    s += ',';
    s += fmt17(c.cdf.cumulative[i]);
    s += ',';
    s += fmt17(normal_cdf(c.cdf.position[i]));
    s += '\n';
  }
  return s;
}

std::string curve_obj(const CltCurve& c) {
  return Obj()
      .put("defined", jbool(c.defined))
      .put("degenerate", jbool(c.degenerate))
      .put("scale", jnum(c.scale))
      .put("ks", c.defined ? jnum(c.ks) : "null")
      .str();
}

std::string ratio_arr(const std::vector<LindebergRatio>& rs) {
  std::vector<std::string> out;
  for (const auto& r : rs)
    out.push_back(Obj()
                      .put("gamma", jnum(r.gamma))
                      .put("value", r.defined ? jnum(r.value) : "null")
                      .str());
  return jarr(out);
}

struct RowResult {
  ScheduleEntry e;
  const Observable* f = nullptr;
  bool ok = false;
  CensusWindow win;
  DiscreteMeasure base;
  BlockStatistics bs;
  CltCurve mu;
  long long k_auto = 0;
  std::vector<LindebergRatio> lr_auto;
  std::vector<DeviationRow> devs;
  // measure shape, copied out so the tuple set itself can be dropped
  std::size_t tuple_count = 0;
  bool tuples_exact = true;
  bool closure_exact = true;
  double worst_residual = 0;
};

std::string report_json(const RowResult& r) {
  const VarianceBundle& vb = r.bs.variances;
  const LemmaDiagnostics& lem = r.bs.lemmas;
  const DeviationDiagnostics& dd = lem.deviations;
  std::vector<std::string> devs;
  for (const auto& d : r.devs)
    devs.push_back(Obj()
                       .put("name", jstr(d.observable))
                       .put("measured", jnum(d.measured))
                       .put("reference", jnum(d.reference))
                       .put("deviation", jnum(d.deviation))
                       .put("se", jnum(d.se))
                       .str());
  return Obj()
      .put("l", jint(r.e.l))
      .put("T", jnum(r.e.T))
      .put("k", jint(r.e.k))
      .put("delta", jnum(r.e.delta))
      .put("C", jint(r.e.C))
      .put("M", jnum(r.e.M))
      .put("Q", jint(vb.Q))
      .put("S", jnum(r.e.S()))
      .put("census", Obj()
                         .put("total", jint(static_cast<long long>(
                                           r.win.total_count())))
                         .put("regular", jint(static_cast<long long>(
                                             r.win.members.size())))
                         .str())
      .put("nu", Obj()
                     .put("base_atoms", jint(static_cast<long long>(
                                            r.base.atoms.size())))
                     .put("tuples", jint(static_cast<long long>(
                                        r.tuple_count)))
                     .put("tuples_exact", jbool(r.tuples_exact))
                     .put("atoms_used", jint(static_cast<long long>(
                                            r.bs.atoms_used)))
                     .put("closure_exact", jbool(r.closure_exact))
                     .put("worst_residual", jnum(r.worst_residual))
                     .str())
      .put("means", Obj()
                        .put("base", jnum(r.bs.mean_base))
                        .put("segment", jnum(r.bs.mean_segment))
                        .str())
      .put("variances",
           Obj()
               .put("base", jnum(vb.base_variance))
               .put("block_sum", jnum(vb.block_variance_sum))
               .put("sum", jnum(vb.sum_variance))
               .put("segment", jnum(vb.segment_variance))
               .put("max_ratio_dev",
                    vb.ratio_defined ? jnum(vb.max_ratio_dev) : "null")
               .put("zero_variance", jbool(vb.zero_variance))
               .put("zero_base_variance", jbool(vb.zero_base_variance))
               .put("se_block_sum", jnum(vb.se_block_variance_sum))
               .put("se_sum", jnum(vb.se_sum_variance))
               .put("se_segment", jnum(vb.se_segment_variance))
               .str())
      .put("lindeberg_nu", ratio_arr(r.bs.lindeberg_nu))
      .put("lindeberg_m", ratio_arr(r.bs.lindeberg_m))
      .put("lindeberg_m_auto", Obj()
                                   .put("k_auto", jint(r.k_auto))
                                   .put("ratios", ratio_arr(r.lr_auto))
                                   .str())
      .put("cdf", Obj()
                      .put("blocksum", curve_obj(r.bs.cdf_blocksum))
                      .put("sumvar", curve_obj(r.bs.cdf_sumvar))
                      .put("segment", curve_obj(r.bs.cdf_segment))
                      .put("mu", curve_obj(r.mu))
                      .str())
      .put("lemmas",
           Obj()
               .put("max_ratio_dev",
                    lem.ratio_defined ? jnum(lem.max_ratio_dev) : "null")
               .put("sup_delta", jnum(dd.sup_delta))
               .put("delta_bound", jnum(dd.delta_bound))
               .put("bound_constant", jnum(dd.bound_constant))
               .put("bound_ok", jbool(dd.bound_ok))
               .put("ab_mass", dd.defined ? jnum(dd.ab_mass) : "null")
               .put("ab_threshold", jnum(dd.ab_threshold))
               .put("ab_atoms", jint(static_cast<long long>(dd.ab_atoms)))
               .str())
      .put("reference", jarr(devs))
      .put("fast_path", jbool(r.bs.fast_path))
      .str();
}

std::string growth_json(const GrowthReport& g) {
  std::vector<std::string> rows;
  for (const auto& r : g.rows)
    rows.push_back(
        Obj()
            .put("T", jnum(r.T))
            .put("total", jint(static_cast<long long>(r.total_count)))
            .put("regular", jint(static_cast<long long>(r.regular_count)))
            .put("rate", jnum(r.rate))
            .put("reference", jnum(r.reference))
            .put("envelope_lo", jnum(r.envelope_lo))
            .put("envelope_hi", jnum(r.envelope_hi))
            .put("envelope_ok", jbool(r.envelope_ok))
            .str());
  auto opt = [](const std::optional<double>& v) {
    return v ? jnum(*v) : "null";
  };
  return Obj()
      .put("entropy", jnum(g.entropy))
      .put("beta_fit", jnum(g.beta_fit))
      .put("entropy_midpoint", opt(g.entropy_midpoint))
      .put("singular_entropy", opt(g.singular_entropy))
      .put("t0_empirical", opt(g.t0_empirical))
      .put("rows", jarr(rows))
      .str();
}

std::string schedule_json(const ScheduleReport& rep) {
  std::vector<std::string> checks;
  for (const auto& c : rep.checks) {
    std::string viol = "null";
    if (c.violation)
      viol = jarr({jint(static_cast<long long>(c.violation->first)),
                   jint(static_cast<long long>(c.violation->second))});
    checks.push_back(Obj()
                         .put("name", jstr(c.name))
                         .put("want_increasing", jbool(c.want_increasing))
                         .put("ok", jbool(c.ok))
                         .put("violation", viol)
                         .put("values", jnums(c.values))
                         .str());
  }
  return Obj()
      .put("mode", jstr(schedule_mode_name(rep.mode)))
      .put("all_ok", jbool(rep.all_ok))
      .put("note", jstr(rep.note))
      .put("checks", jarr(checks))
      .put("violations", jstrs(rep.violations))
      .str();
}

std::string gamma_block(const std::vector<double>& gammas,
                        const std::vector<std::vector<std::optional<double>>>&
                            per_gamma) {
  std::vector<std::string> out;
  for (std::size_t gi = 0; gi < gammas.size(); ++gi)
    out.push_back(Obj()
                      .put("gamma", jnum(gammas[gi]))
                      .put("values", jopts(per_gamma[gi]))
                      .str());
  return jarr(out);
}

double tracking_constant(const Observable& f, double eta, double kappa) {
  const double denom = 1.0 - std::exp(-eta * f.holder_alpha / 2.0);
  if (denom <= 0) return std::numeric_limits<double>::infinity();
  return f.holder_L * kappa / denom;
}

struct LoadedRun {
  InstanceSpec inst;
  std::vector<ScheduleEntry> sched;
};

LoadedRun load_and_check(const ExperimentConfig& cfg) {
  LoadedRun lr{load_instance(cfg.instance), load_schedule(cfg.schedule)};
  const double lmax = lr.inst.lambda.lambda_max();
  for (const auto& e : lr.sched) {
    const std::string at = "schedule row l=" + std::to_string(e.l) + ": ";
    if (e.eta <= 0)
      fail(ErrorCode::BadConfig, at + "eta must be positive");
    if (e.eta > lmax)
      fail(ErrorCode::BadConfig,
           at + "eta " + fmt17(e.eta) + " exceeds lambda_max " + fmt17(lmax));
    if (e.delta >= e.eta / lmax)
      fail(ErrorCode::DeltaTooLarge,
           at + "delta " + fmt17(e.delta) + " reaches the regularity scale " +
               fmt17(e.eta / lmax));
  }
  return lr;
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& cfg) {
  const auto t_begin = std::chrono::steady_clock::now();
  RunManifest man;
  man.seed = cfg.seed;
  man.mode = cfg.mode;
  man.workers = cfg.workers;

  LoadedRun lr = load_and_check(cfg);
  const InstanceSpec& inst = lr.inst;
  const std::vector<ScheduleEntry>& sched = lr.sched;
  const double lmax = inst.lambda.lambda_max();

  const Observable* phi = nullptr;
  if (cfg.mode == "equilibrium") phi = &inst.observable(cfg.potential);
  std::vector<const Observable*> row_f;
  if (cfg.mode == "array") {
    if (cfg.array_observables.size() != sched.size())
      fail(ErrorCode::BadConfig,
           "array_observables lists " +
               std::to_string(cfg.array_observables.size()) + " names for " +
               std::to_string(sched.size()) + " schedule rows");
    for (const auto& n : cfg.array_observables)
      row_f.push_back(&inst.observable(n));
  } else {
    row_f.assign(sched.size(), &inst.observable(cfg.observable));
  }
  std::vector<Observable> refobs;
  for (const auto& n : cfg.reference_observables)
    refobs.push_back(inst.observable(n));

  const ReferenceMeasure ref = phi ? reference_measure(inst.sys, inst.roof, *phi)
                                   : reference_measure(inst.sys, inst.roof);

  const fs::path out = cfg.out;
  std::error_code ec;
  fs::create_directories(out / "series", ec);
  if (ec)
    fail(ErrorCode::IoFailure, "cannot create " + (out / "series").string());
  man.out_dir = out.string();
  man.config_hash = hash_hex(canonical_config(cfg) + '\x1f' +
                             slurp(cfg.instance) + '\x1f' +
                             slurp(cfg.schedule));

  double max_T = 0;
  for (const auto& e : sched) max_T = std::max(max_T, e.T);
  const auto max_len =
      static_cast<std::size_t>(std::ceil(max_T / inst.roof.min()));
  const std::vector<Cycle> cycles = enumerate_cycles(
      inst.sys, inst.roof, inst.lambda, max_len, cfg.budget);

  std::vector<RowResult> rows;
  rows.reserve(sched.size());
  for (std::size_t i = 0; i < sched.size(); ++i) {
    RowResult r;
    r.e = sched[i];
    r.f = row_f[i];
    const std::string lname = "l" + std::to_string(r.e.l);
    try {
      r.win = census_window(cycles, inst.lambda, r.e.T, r.e.delta, r.e.eta,
                            r.e.eta / lmax);
      spill(out / ("census_" + lname + ".csv"), census_csv(r.win));
      man.artifacts.push_back("census_" + lname + ".csv");
      if (r.win.members.empty())
        fail(ErrorCode::EmptyWindow, "no regular cycles in the window");
      r.base = phi ? gibbs_weighted_measure(inst.sys, inst.roof, r.win, *phi,
                                            r.e.T)
                   : uniform_measure(r.win);
      const OrbitSegmentMeasure nu = nu_measure(
          inst.sys, inst.roof, r.base, r.e.k, static_cast<int>(r.e.C), r.e.M,
          r.e.T, cfg.exact_cap, cfg.samples, cfg.seed,
          static_cast<std::uint64_t>(r.e.l));
      r.tuple_count = nu.tuples.count();
      r.tuples_exact = nu.tuples.exact;
      r.closure_exact = nu.closure_exact;
      r.worst_residual = nu.worst_residual;

      BlockStatParams bp;
      bp.entry = r.e;
      bp.kappa_eps = cfg.kappa_eps;
      bp.ab_threshold = cfg.ab_threshold;
      bp.gammas = cfg.gammas;
      bp.workers = cfg.workers;
      r.bs = block_statistics(inst.sys, inst.roof, *r.f, nu, bp);

      r.mu = clt_cdf_mu(inst.roof, *r.f, r.base, r.e.T, r.e.k, cfg.exact_cap,
                        cfg.samples, cfg.seed,
                        1000 + static_cast<std::uint64_t>(r.e.l));

      const double s2 = r.bs.variances.base_variance;
      if (s2 > 0) {
        r.k_auto = auto_k(s2, r.e.delta);
        for (double g : cfg.gammas)
          r.lr_auto.push_back(lindeberg_ratio_m(inst.roof, *r.f, r.base,
                                                r.e.T, r.k_auto,
                                                std::sqrt(s2), g));
      }
      if (!refobs.empty())
        r.devs = compare_to_reference(inst.sys, inst.roof, nu, ref, refobs);

      spill(out / ("report_" + lname + ".json"), report_json(r) + "\n");
      man.artifacts.push_back("report_" + lname + ".json");
      const std::pair<const char*, const CltCurve*> curves[] = {
          {"blocksum", &r.bs.cdf_blocksum},
          {"sumvar", &r.bs.cdf_sumvar},
          {"segment", &r.bs.cdf_segment},
          {"mu", &r.mu}};
      for (const auto& [nm, c] : curves) {
        const std::string file = "cdf_" + lname + "_" + nm + ".csv";
        spill(out / file, cdf_csv(*c));
        man.artifacts.push_back(file);
      }
      r.ok = true;
      man.ls.push_back(r.e.l);
    } catch (const Error& err) {
      man.errors.push_back("l=" + std::to_string(r.e.l) + ": " + err.what());
    }
    rows.push_back(std::move(r));
  }

  std::vector<const RowResult*> done;
  for (const auto& r : rows)
    if (r.ok) done.push_back(&r);

  // growth over the completed windows
  if (done.size() >= 2) {
    std::vector<CensusWindow> wins;
    for (const auto* r : done) wins.push_back(r->win);
    try {
      spill(out / "growth.json",
            growth_json(growth_report(inst.sys, inst.lambda, wins)) + "\n");
      man.artifacts.push_back("growth.json");
    } catch (const Error& err) {
      man.errors.push_back(std::string("growth: ") + err.what());
    }
  } else {
    man.errors.push_back("growth: fewer than two completed rows");
  }

  // schedule trend report over the full template
  bool sched_ok = false;
  try {
    ScheduleReport srep;
    if (cfg.mode == "array") {
      std::vector<ArrayEntryData> data;
      for (std::size_t i = 0; i < sched.size(); ++i) {
        const double kappa =
            cfg.kappa_eps > 0 ? cfg.kappa_eps : sched[i].eps;
        data.push_back({row_f[i]->sup_norm,
                        tracking_constant(*row_f[i], sched[i].eta, kappa)});
      }
      srep = validate_schedule(sched, ScheduleMode::Array, &data, nullptr);
    } else {
      srep = validate_schedule(sched, ScheduleMode::Plain);
    }
    sched_ok = srep.all_ok;
    spill(out / "schedule_report.json", schedule_json(srep) + "\n");
    man.artifacts.push_back("schedule_report.json");
  } catch (const Error& err) {
    man.errors.push_back(std::string("schedule: ") + err.what());
  }

  // dynamic variance over the completed rows (single-observable modes)
  DynVarianceSeries dyn;
  bool dyn_done = false;
  if (cfg.mode != "array" && !done.empty()) {
    try {
      std::vector<DiscreteMeasure> ms;
      std::vector<double> Ts;
      for (const auto* r : done) {
        ms.push_back(r->base);
        Ts.push_back(r->e.T);
      }
      dyn = dyn_variance_series(inst.roof, *row_f[0], ms, Ts);
      dyn_done = true;
    } catch (const Error& err) {
      man.errors.push_back(std::string("dynvar: ") + err.what());
    }
  }

  // flat series tables
  std::string ks_csv = "l,curve,ks\n";
  std::string ratios_csv = "l,name,value\n";
  std::string lind_csv = "l,series,gamma,value\n";
  std::string dev_csv = "l,observable,measured,reference,deviation,se\n";
  std::string dynvar_csv = "l,T,value\n";
  for (const auto* r : done) {
    const std::string l = std::to_string(r->e.l);
    const std::pair<const char*, const CltCurve*> curves[] = {
        {"blocksum", &r->bs.cdf_blocksum},
        {"sumvar", &r->bs.cdf_sumvar},
        {"segment", &r->bs.cdf_segment},
        {"mu", &r->mu}};
    for (const auto& [nm, c] : curves)
      if (c->defined)
        ks_csv += l + "," + nm + "," + fmt17(c->ks) + "\n";
    const VarianceBundle& vb = r->bs.variances;
    if (vb.ratio_defined)
      ratios_csv += l + ",max_ratio_dev," + fmt17(vb.max_ratio_dev) + "\n";
    if (vb.block_variance_sum > 0) {
      ratios_csv += l + ",sum_over_block," +
                    fmt17(vb.sum_variance / vb.block_variance_sum) + "\n";
      ratios_csv += l + ",segment_over_block," +
                    fmt17(vb.segment_variance / vb.block_variance_sum) + "\n";
    }
    const std::pair<const char*, const std::vector<LindebergRatio>*> sides[] =
        {{"nu", &r->bs.lindeberg_nu},
         {"m", &r->bs.lindeberg_m},
         {"m_auto", &r->lr_auto}};
    for (const auto& [nm, rs] : sides)
      for (const auto& lrv : *rs)
        if (lrv.defined)
          lind_csv += l + "," + nm + "," + fmt17(lrv.gamma) + "," +
                      fmt17(lrv.value) + "\n";
    for (const auto& d : r->devs)
      dev_csv += l + "," + d.observable + "," + fmt17(d.measured) + "," +
                 fmt17(d.reference) + "," + fmt17(d.deviation) + "," +
                 fmt17(d.se) + "\n";
  }
  if (dyn_done)
    for (std::size_t i = 0; i < done.size(); ++i)
      dynvar_csv += std::to_string(done[i]->e.l) + "," +
                    fmt17(done[i]->e.T) + "," + fmt17(dyn.values[i]) + "\n";
  const std::pair<const char*, const std::string*> series[] = {
      {"ks", &ks_csv},         {"ratios", &ratios_csv},
      {"lindeberg", &lind_csv}, {"deviation", &dev_csv},
      {"dynvar", &dynvar_csv}};
  for (const auto& [nm, text] : series) {
    spill(out / "series" / (std::string(nm) + ".csv"), *text);
    man.artifacts.push_back(std::string("series/") + nm + ".csv");
  }

  // summary: the cross-row series the acceptance checker reads
  std::vector<long long> s_ls, s_k;
  std::vector<double> s_T;
  std::vector<std::optional<double>> s_kauto, ks_b, ks_sv, ks_seg, ks_mu, mrd,
      sob, segob;
  std::vector<std::vector<std::optional<double>>> lm_auto(cfg.gammas.size()),
      lm(cfg.gammas.size()), lnu(cfg.gammas.size());
  std::vector<std::vector<std::optional<double>>> refdev(refobs.size());
  std::optional<double> fitc;
  auto curve_ks = [](const CltCurve& c) -> std::optional<double> {
    if (!c.defined) return std::nullopt;
    return c.ks;
  };
  for (const auto* r : done) {
    s_ls.push_back(r->e.l);
    s_k.push_back(r->e.k);
    s_T.push_back(r->e.T);
    s_kauto.push_back(r->k_auto > 0
                          ? std::optional<double>(
                                static_cast<double>(r->k_auto))
                          : std::nullopt);
    ks_b.push_back(curve_ks(r->bs.cdf_blocksum));
    ks_sv.push_back(curve_ks(r->bs.cdf_sumvar));
    ks_seg.push_back(curve_ks(r->bs.cdf_segment));
    ks_mu.push_back(curve_ks(r->mu));
    const VarianceBundle& vb = r->bs.variances;
    mrd.push_back(vb.ratio_defined
                      ? std::optional<double>(vb.max_ratio_dev)
                      : std::nullopt);
    const bool s2pos = vb.block_variance_sum > 0;
    sob.push_back(s2pos ? std::optional<double>(vb.sum_variance /
                                                vb.block_variance_sum)
                        : std::nullopt);
    segob.push_back(s2pos ? std::optional<double>(vb.segment_variance /
                                                  vb.block_variance_sum)
                          : std::nullopt);
    auto take = [&](std::vector<std::vector<std::optional<double>>>& dst,
                    const std::vector<LindebergRatio>& src) {
      for (std::size_t gi = 0; gi < cfg.gammas.size(); ++gi) {
        if (gi < src.size() && src[gi].defined)
          dst[gi].push_back(src[gi].value);
        else
          dst[gi].push_back(std::nullopt);
      }
    };
    take(lm_auto, r->lr_auto);
    take(lm, r->bs.lindeberg_m);
    take(lnu, r->bs.lindeberg_nu);
    for (std::size_t oi = 0; oi < refobs.size(); ++oi)
      refdev[oi].push_back(oi < r->devs.size()
                               ? std::optional<double>(
                                     std::abs(r->devs[oi].deviation))
                               : std::nullopt);
    if (r->mu.defined && !r->mu.degenerate)
      fitc = std::max(fitc.value_or(0.0),
                      r->mu.ks * std::sqrt(static_cast<double>(r->e.k)));
  }
  std::vector<std::string> refblock;
  for (std::size_t oi = 0; oi < refobs.size(); ++oi)
    refblock.push_back(Obj()
                           .put("name", jstr(refobs[oi].name))
                           .put("values", jopts(refdev[oi]))
                           .str());
  const std::string summary =
      Obj()
          .put("ls", jints(s_ls))
          .put("T", jnums(s_T))
          .put("k", jints(s_k))
          .put("k_auto", jopts(s_kauto))
          .put("ks_blocksum", jopts(ks_b))
          .put("ks_sumvar", jopts(ks_sv))
          .put("ks_segment", jopts(ks_seg))
          .put("ks_mu", jopts(ks_mu))
          .put("max_ratio_dev", jopts(mrd))
          .put("sum_over_block", jopts(sob))
          .put("segment_over_block", jopts(segob))
          .put("lindeberg_m_auto", gamma_block(cfg.gammas, lm_auto))
          .put("lindeberg_m", gamma_block(cfg.gammas, lm))
          .put("lindeberg_nu", gamma_block(cfg.gammas, lnu))
          .put("reference_deviation", jarr(refblock))
          .put("dyn_variance",
               Obj()
                   .put("values", jnums(dyn.values))
                   .put("liminf", jnum(dyn.liminf_estimate))
                   .put("positive", jbool(dyn_done && dyn.positive))
                   .str())
          .put("mu_fitted_c", jopt(fitc))
          .put("schedule_all_ok", jbool(sched_ok))
          .str();
  spill(out / "summary.json", summary + "\n");
  man.artifacts.push_back("summary.json");

  man.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    t_begin)
          .count();
  const std::string manifest =
      Obj()
          .put("config_hash", jstr(man.config_hash))
          .put("seed", jint(static_cast<long long>(man.seed)))
          .put("mode", jstr(man.mode))
          .put("instance", jstr(inst.name))
          .put("workers", jint(man.workers))
          .put("ls", jints(std::vector<long long>(man.ls.begin(),
                                                  man.ls.end())))
          .put("errors", jstrs(man.errors))
          .put("artifacts", jstrs(man.artifacts))
          .put("wall_seconds", jnum(man.wall_seconds))
          .str();
  spill(out / "manifest.json", manifest + "\n");
  return man;
}

RunManifest run_census(const ExperimentConfig& cfg) {
  const auto t_begin = std::chrono::steady_clock::now();
  RunManifest man;
  man.seed = cfg.seed;
  man.mode = "census";
  man.workers = cfg.workers;

  LoadedRun lr = load_and_check(cfg);
  const double lmax = lr.inst.lambda.lambda_max();
  const fs::path out = cfg.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + out.string());
  man.out_dir = out.string();
  man.config_hash = hash_hex(canonical_config(cfg) + '\x1f' +
                             slurp(cfg.instance) + '\x1f' +
                             slurp(cfg.schedule));

  double max_T = 0;
  for (const auto& e : lr.sched) max_T = std::max(max_T, e.T);
  const auto max_len =
      static_cast<std::size_t>(std::ceil(max_T / lr.inst.roof.min()));
  const std::vector<Cycle> cycles = enumerate_cycles(
      lr.inst.sys, lr.inst.roof, lr.inst.lambda, max_len, cfg.budget);

  std::vector<CensusWindow> wins;
  for (const auto& e : lr.sched) {
    try {
      CensusWindow w = census_window(cycles, lr.inst.lambda, e.T, e.delta,
                                     e.eta, e.eta / lmax);
      const std::string file = "census_l" + std::to_string(e.l) + ".csv";
      spill(out / file, census_csv(w));
      man.artifacts.push_back(file);
      man.ls.push_back(e.l);
      wins.push_back(std::move(w));
    } catch (const Error& err) {
      man.errors.push_back("l=" + std::to_string(e.l) + ": " + err.what());
    }
  }
  if (wins.size() >= 2) {
    try {
      spill(out / "growth.json",
            growth_json(growth_report(lr.inst.sys, lr.inst.lambda, wins)) +
                "\n");
      man.artifacts.push_back("growth.json");
    } catch (const Error& err) {
      man.errors.push_back(std::string("growth: ") + err.what());
    }
  } else {
    man.errors.push_back("growth: fewer than two completed rows");
  }
  man.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    t_begin)
          .count();
  spill(out / "manifest.json",
        Obj()
            .put("config_hash", jstr(man.config_hash))
            .put("seed", jint(static_cast<long long>(man.seed)))
            .put("mode", jstr(man.mode))
            .put("workers", jint(man.workers))
            .put("ls", jints(std::vector<long long>(man.ls.begin(),
                                                    man.ls.end())))
            .put("errors", jstrs(man.errors))
            .put("artifacts", jstrs(man.artifacts))
            .put("wall_seconds", jnum(man.wall_seconds))
            .str() +
            "\n");
  return man;
}

// ---------------------------------------------------------------------------
// emit_plot_data

namespace {

void copy_checked(const fs::path& src, const fs::path& dst,
                  bool need_data_row) {
  if (!fs::exists(src))
    fail(ErrorCode::MissingSeries, src.string() + " not found");
  const std::string text = slurp(src.string());
  const auto lines = std::count(text.begin(), text.end(), '\n');
  if (lines < (need_data_row ? 2 : 1))
    fail(ErrorCode::MissingSeries, src.string() + " has no data rows");
  spill(dst, text);
}

void emit_cdf(const fs::path& out, const fs::path& dest) {
  int best = -1;
  for (const auto& entry : fs::directory_iterator(out)) {
    int l = 0;
    if (std::sscanf(entry.path().filename().string().c_str(),
                    "cdf_l%d_segment.csv", &l) == 1)
      best = std::max(best, l);
  }
  if (best < 0)
    fail(ErrorCode::MissingSeries, "no cdf tables in " + out.string());
  const std::string stem = "cdf_l" + std::to_string(best) + "_";
  for (const char* nm : {"blocksum", "sumvar", "segment", "mu"})
    copy_checked(out / (stem + nm + ".csv"),
                 dest / ("cdf_final_" + std::string(nm) + ".csv"),
                 std::string(nm) == "segment");
}

}  // namespace

void emit_plot_data(const std::string& out_dir, const std::string& which,
                    const std::string& dest_dir) {
  const fs::path out = out_dir;
  const fs::path dest = dest_dir;
  std::error_code ec;
  fs::create_directories(dest, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dest.string());
  const std::vector<std::string> names = {"ks", "ratios", "lindeberg",
                                          "deviation", "dynvar"};
  if (which == "all") {
    for (const auto& n : names)
      copy_checked(out / "series" / (n + ".csv"), dest / (n + ".csv"), true);
    emit_cdf(out, dest);
    return;
  }
  if (which == "cdf") {
    emit_cdf(out, dest);
    return;
  }
  if (std::find(names.begin(), names.end(), which) == names.end())
    fail(ErrorCode::BadConfig, "unknown plot series '" + which + "'");
  copy_checked(out / "series" / (which + ".csv"), dest / (which + ".csv"),
               true);
}

// ---------------------------------------------------------------------------
// check_acceptance

namespace {

using Series = std::vector<std::optional<double>>;

const nlohmann::json& field(const nlohmann::json& j, const std::string& k) {
  const auto it = j.find(k);
  if (it == j.end())
    fail(ErrorCode::MissingSeries, "summary.json lacks '" + k + "'");
  return *it;
}

Series num_series(const nlohmann::json& a) {
  Series out;
  for (const auto& x : a)
    out.push_back(x.is_null() ? std::nullopt
                              : std::optional<double>(x.get<double>()));
  return out;
}

struct TrendResult {
  bool pass = false;
  double worst = 0;  // max adjacent increase; negative means decreasing
  std::string detail;
};

TrendResult tail_trend(const Series& v, std::size_t n, bool strict) {
  TrendResult r;
  if (n < 2) {
    r.detail = "tail length below 2";
    return r;
  }
  if (v.size() < n) {
    r.detail = "series has " + std::to_string(v.size()) +
               " entries, tail needs " + std::to_string(n);
    return r;
  }
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = v.size() - n; i + 1 < v.size(); ++i) {
    if (!v[i] || !v[i + 1]) {
      r.detail = "undefined value in tail";
      return r;
    }
    worst = std::max(worst, *v[i + 1] - *v[i]);
  }
  r.worst = worst;
  r.pass = strict ? worst < 0 : worst <= 0;
  return r;
}

void apply_trend(AcceptanceItem& it, const Series& v, std::size_t n,
                 bool strict) {
  const TrendResult tr = tail_trend(v, n, strict);
  it.pass = tr.pass;
  it.measured = tr.worst;
  it.detail = tr.detail.empty()
                  ? (strict ? "max adjacent increase (want < 0)"
                            : "max adjacent increase (want <= 0)")
                  : tr.detail;
}

void apply_final_max(AcceptanceItem& it, const Series& v, double thr) {
  if (v.empty() || !v.back()) {
    it.detail = "final value undefined";
    return;
  }
  it.measured = *v.back();
  it.pass = it.measured <= thr;
}

}  // namespace

AcceptanceReport check_acceptance(
    const std::string& out_dir,
    const std::vector<std::pair<std::string, double>>& criteria) {
  AcceptanceReport rep;
  if (criteria.empty()) {
    rep.warnings.push_back("no criteria supplied; vacuous pass");
    return rep;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(slurp(out_dir + "/summary.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoFailure,
         std::string("summary.json is not parseable: ") + e.what());
  }

  const Series mrd = num_series(field(j, "max_ratio_dev"));
  const Series sob = num_series(field(j, "sum_over_block"));
  const Series segob = num_series(field(j, "segment_over_block"));
  const Series ks_seg = num_series(field(j, "ks_segment"));
  const Series ks = num_series(field(j, "k"));
  auto abs1 = [](const Series& v) {
    Series out;
    for (const auto& x : v)
      out.push_back(x ? std::optional<double>(std::abs(*x - 1.0))
                      : std::nullopt);
    return out;
  };
  const Series sob_dev = abs1(sob);
  const Series segob_dev = abs1(segob);

  std::vector<std::pair<double, Series>> lm_auto;
  for (const auto& g : field(j, "lindeberg_m_auto"))
    lm_auto.emplace_back(g.at("gamma").get<double>(),
                         num_series(g.at("values")));
  std::vector<std::pair<std::string, Series>> refdev;
  for (const auto& o : field(j, "reference_deviation"))
    refdev.emplace_back(o.at("name").get<std::string>(),
                        num_series(o.at("values")));
  const nlohmann::json& dyn = field(j, "dyn_variance");
  const nlohmann::json& fitc = field(j, "mu_fitted_c");

  for (const auto& [name, thr] : criteria) {
    AcceptanceItem it;
    it.name = name;
    it.threshold = thr;
    const auto n = static_cast<std::size_t>(std::llround(thr));
    if (name == "ratio_uniformity_final_max") {
      apply_final_max(it, mrd, thr);
    } else if (name == "ratio_uniformity_tail_nonincreasing") {
      apply_trend(it, mrd, n, false);
    } else if (name == "normalizer_dev_final_max") {
      AcceptanceItem a = it, b = it;
      apply_final_max(a, sob_dev, thr);
      apply_final_max(b, segob_dev, thr);
      it.pass = a.pass && b.pass;
      it.measured = std::max(a.measured, b.measured);
      it.detail = !a.detail.empty() ? a.detail : b.detail;
    } else if (name == "normalizer_dev_tail_nonincreasing") {
      AcceptanceItem a = it, b = it;
      apply_trend(a, sob_dev, n, false);
      apply_trend(b, segob_dev, n, false);
      it.pass = a.pass && b.pass;
      it.measured = std::max(a.measured, b.measured);
      it.detail = a.detail;
    } else if (name == "ks_segment_strictly_decreasing") {
      if (ks_seg.size() < std::max<std::size_t>(n, 2)) {
        it.detail = "series shorter than required length";
      } else {
        apply_trend(it, ks_seg, ks_seg.size(), true);
      }
    } else if (name == "ks_segment_final_max") {
      apply_final_max(it, ks_seg, thr);
    } else if (name == "ks_final_min_k") {
      if (ks.empty() || !ks.back()) {
        it.detail = "final k undefined";
      } else {
        it.measured = *ks.back();
        it.pass = it.measured >= thr;
      }
    } else if (name == "mu_ks_fitted_c_max") {
      if (fitc.is_null()) {
        it.detail = "no defined mu-side curve";
      } else {
        it.measured = fitc.get<double>();
        it.pass = std::isfinite(it.measured) && it.measured <= thr;
      }
    } else if (name == "reference_deviation_final_max") {
      if (refdev.empty()) {
        it.detail = "no reference observables";
      } else {
        it.pass = true;
        for (const auto& [nm, v] : refdev) {
          AcceptanceItem a = it;
          apply_final_max(a, v, thr);
          if (!a.pass) {
            it.pass = false;
            if (it.detail.empty()) it.detail = "observable " + nm;
          }
          it.measured = std::max(it.measured, a.measured);
        }
      }
    } else if (name == "reference_deviation_decreasing") {
      if (refdev.empty()) {
        it.detail = "no reference observables";
      } else {
        it.pass = true;
        it.measured = -std::numeric_limits<double>::infinity();
        for (const auto& [nm, v] : refdev) {
          AcceptanceItem a = it;
          apply_trend(a, v, n, true);
          if (!a.pass) {
            it.pass = false;
            if (it.detail.empty())
              it.detail = "observable " + nm +
                          (a.detail.empty() ? "" : ": " + a.detail);
          }
          it.measured = std::max(it.measured, a.measured);
        }
      }
    } else if (name == "lindeberg_m_auto_final_max") {
      if (lm_auto.empty()) {
        it.detail = "no gamma series";
      } else {
        it.pass = true;
        for (const auto& [g, v] : lm_auto) {
          AcceptanceItem a = it;
          apply_final_max(a, v, thr);
          if (!a.pass) {
            it.pass = false;
            if (it.detail.empty()) it.detail = "gamma " + fmt17(g);
          }
          it.measured = std::max(it.measured, a.measured);
        }
      }
    } else if (name == "lindeberg_m_auto_tail_nonincreasing") {
      if (lm_auto.empty()) {
        it.detail = "no gamma series";
      } else {
        it.pass = true;
        it.measured = -std::numeric_limits<double>::infinity();
        for (const auto& [g, v] : lm_auto) {
          AcceptanceItem a = it;
          apply_trend(a, v, n, false);
          if (!a.pass) {
            it.pass = false;
            if (it.detail.empty())
              it.detail = "gamma " + fmt17(g) +
                          (a.detail.empty() ? "" : ": " + a.detail);
          }
          it.measured = std::max(it.measured, a.measured);
        }
      }
    } else if (name == "dynvar_positive") {
      const bool pos = dyn.at("positive").get<bool>();
      const double liminf = dyn.at("liminf").is_null()
                                ? 0.0
                                : dyn.at("liminf").get<double>();
      it.measured = liminf;
      it.pass = pos && liminf > 0;
    } else {
      fail(ErrorCode::BadConfig, "unknown criterion '" + name + "'");
    }
    rep.all_pass = rep.all_pass && it.pass;
    rep.items.push_back(std::move(it));
  }
  return rep;
}

}  // namespace lindlab
