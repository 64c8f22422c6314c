#include "lindlab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lindlab/errors.hpp"
#include "lindlab/util.hpp"

namespace lindlab {

namespace {

// Guard against a mathematically integral value landing one ulp below it.
double nudge(double x) { return x + 4e-12 * std::max(1.0, std::fabs(x)); }

}  // namespace

long long q_loops(double T, double delta, long long C) {
  if (!(T > 0) || !(delta > 0) || delta >= T || C < 1)
    fail(ErrorCode::BadConfig, "q needs 0 < delta < T and C >= 1");
  const long long q =
      static_cast<long long>(std::floor(nudge((T - delta) * static_cast<double>(C) / T))) - 1;
  if (q < 1)
    fail(ErrorCode::NonPositiveQ, "Q = " + std::to_string(q) + " < 1 for T=" + fmt17(T) +
                                      " delta=" + fmt17(delta) + " C=" + std::to_string(C));
  return q;
}

long long auto_k(double sigma_sq, double delta) {
  if (!(sigma_sq > 0)) fail(ErrorCode::ZeroVariance, "sigma^2 = " + fmt17(sigma_sq));
  if (!(delta > 0)) fail(ErrorCode::BadConfig, "delta must be positive");
  const double raw = sigma_sq / delta;
  return static_cast<long long>(std::ceil(raw - 4e-12 * std::max(1.0, raw)));
}

long long ScheduleEntry::Q() const { return q_loops(T, delta, C); }

double ScheduleEntry::S() const {
  return static_cast<double>(k) * (static_cast<double>(C) * T + M);
}

const char* trend_name(Trend t) {
  switch (t) {
    case Trend::Increasing: return "increasing";
    case Trend::Flat: return "flat";
    case Trend::NonIncreasing: return "non-increasing";
  }
  return "unknown";
}

const char* schedule_mode_name(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::Plain: return "plain";
    case ScheduleMode::Array: return "array";
    case ScheduleMode::Relaxed: return "relaxed";
  }
  return "unknown";
}

namespace {

TrendCheck run_check(std::string name, bool want_increasing,
                     std::vector<double> values) {
  TrendCheck c;
  c.name = std::move(name);
  c.want_increasing = want_increasing;
  c.values = std::move(values);
  c.ok = true;
  for (std::size_t i = 0; i + 1 < c.values.size(); ++i) {
    const bool fine = want_increasing ? c.values[i + 1] > c.values[i]
                                      : c.values[i + 1] < c.values[i];
    if (!fine) {
      c.ok = false;
      c.violation = std::make_pair(i, i + 1);
      break;
    }
  }
  return c;
}

}  // namespace

ScheduleReport validate_schedule(const std::vector<ScheduleEntry>& entries,
                                 ScheduleMode mode,
                                 const std::vector<ArrayEntryData>* array_data,
                                 const std::vector<double>* sigma_sq) {
  if (entries.size() < 2) fail(ErrorCode::BadConfig, "schedule needs >= 2 entries");
  if (mode == ScheduleMode::Array &&
      (!array_data || array_data->size() != entries.size()))
    fail(ErrorCode::MissingSeries, "array mode needs per-entry observable data");
  if (mode == ScheduleMode::Relaxed &&
      (!sigma_sq || sigma_sq->size() != entries.size()))
    fail(ErrorCode::MissingSeries, "relaxed mode needs the per-entry variance series");

  ScheduleReport rep;
  rep.mode = mode;
  rep.note = "trend verdicts cover the supplied prefix only";

  const std::size_t n = entries.size();
  std::vector<double> T(n), k(n), ratio_t0(n), item3(n), item_c(n);
  std::vector<double> qv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ScheduleEntry& e = entries[i];
    T[i] = e.T;
    k[i] = static_cast<double>(e.k);
    ratio_t0[i] = e.T / std::max(e.t0, 1e-300);
    if (!(e.T > std::max(e.t0, 1.0)))
      rep.violations.push_back("entry " + std::to_string(e.l) +
                               ": T must exceed max(T0, 1)");
    if (!(e.delta > 0))
      rep.violations.push_back("entry " + std::to_string(e.l) + ": delta must be positive");
    if (e.k < 1)
      rep.violations.push_back("entry " + std::to_string(e.l) + ": k must be >= 1");
    if (e.C < 1)
      rep.violations.push_back("entry " + std::to_string(e.l) + ": C must be >= 1");
    try {
      qv[i] = static_cast<double>(e.Q());
    } catch (const Error&) {
      qv[i] = 0;
      rep.violations.push_back("entry " + std::to_string(e.l) + ": Q below 1");
    }
    if (!(e.S() > 0))
      rep.violations.push_back("entry " + std::to_string(e.l) + ": S must be positive");

    const double kd2 = k[i] * e.delta * e.delta;
    switch (mode) {
      case ScheduleMode::Plain:
        item3[i] = kd2;
        break;
      case ScheduleMode::Array:
        item3[i] = kd2 * std::max((*array_data)[i].sup_norm, 1.0);
        break;
      case ScheduleMode::Relaxed:
        item3[i] = (*sigma_sq)[i] > 0 ? kd2 / (*sigma_sq)[i]
                                      : std::numeric_limits<double>::infinity();
        break;
    }
    item_c[i] = std::sqrt(k[i]) * e.T / static_cast<double>(e.C);
  }

  rep.checks.push_back(run_check("T increasing", true, T));
  rep.checks.push_back(run_check("T/T0 increasing", true, ratio_t0));
  rep.checks.push_back(run_check("k increasing", true, k));
  switch (mode) {
    case ScheduleMode::Plain:
      rep.checks.push_back(run_check("k*delta^2 decreasing", false, item3));
      rep.checks.push_back(run_check("sqrt(k)*T/C decreasing", false, item_c));
      break;
    case ScheduleMode::Array: {
      rep.checks.push_back(
          run_check("k*delta^2*max(supnorm,1) decreasing", false, item3));
      std::vector<double> r1(n), r2(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double base = std::sqrt(k[i]) * T[i] / std::max(qv[i], 1e-300);
        r1[i] = base * std::max(std::fabs((*array_data)[i].K), 1.0);
        r2[i] = base * std::max((*array_data)[i].sup_norm, 1.0);
      }
      rep.checks.push_back(run_check("sqrt(k)*T*max(|K|,1)/Q decreasing", false, r1));
      rep.checks.push_back(run_check("sqrt(k)*T*max(supnorm,1)/Q decreasing", false, r2));
      break;
    }
    case ScheduleMode::Relaxed:
      rep.checks.push_back(run_check("k*delta^2/sigma^2 decreasing", false, item3));
      rep.checks.push_back(run_check("sqrt(k)*T/C decreasing", false, item_c));
      break;
  }

  rep.all_ok = rep.violations.empty();
  for (const TrendCheck& c : rep.checks) rep.all_ok = rep.all_ok && c.ok;
  return rep;
}

Trend lindeberg_precheck(const std::vector<double>& sigma,
                         const std::vector<double>& T,
                         const std::vector<double>& k) {
  if (sigma.size() != T.size() || sigma.size() != k.size() || sigma.size() < 2)
    fail(ErrorCode::MissingSeries, "precheck needs aligned series of length >= 2");
  std::vector<double> r(sigma.size());
  double scale = 0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    r[i] = std::sqrt(k[i]) * sigma[i] / T[i];
    scale = std::max(scale, std::fabs(r[i]));
  }
  const double tol = 1e-9 * std::max(scale, 1e-300);
  bool increasing = true, flat = true;
  for (std::size_t i = 0; i + 1 < r.size(); ++i) {
    if (!(r[i + 1] > r[i] + tol)) increasing = false;
    if (std::fabs(r[i + 1] - r[i]) > tol) flat = false;
  }
  if (increasing) return Trend::Increasing;
  if (flat) return Trend::Flat;
  return Trend::NonIncreasing;
}

}  // namespace lindlab
