#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lindlab {

// One row of the tuple sequence (T_l, k_l, delta_l, C_l) with its shared
// scales. Q and S are derived.
struct ScheduleEntry {
  int l = 0;
  double T = 0;
  long long k = 0;
  double delta = 0;
  long long C = 0;
  double M = 1;     // transition time
  double eps = 0;   // tracking scale
  double eta = 0;   // regularity threshold
  double t0 = 1;    // empirical window threshold, feeds the T/T0 trend

  long long Q() const;             // loops within one block, >= 1
  double S() const;                // total period k (C T + M)
};

// floor((T - delta) C / T) - 1; raises NonPositiveQ below 1.
long long q_loops(double T, double delta, long long C);

// ceil(sigma^2 / delta); raises ZeroVariance when sigma^2 <= 0.
long long auto_k(double sigma_sq, double delta);

enum class Trend { Increasing, Flat, NonIncreasing };
const char* trend_name(Trend t);

struct TrendCheck {
  std::string name;
  bool want_increasing = true;  // else strictly decreasing is wanted
  bool ok = false;
  std::optional<std::pair<std::size_t, std::size_t>> violation;  // entry indices
  std::vector<double> values;
};

enum class ScheduleMode { Plain, Array, Relaxed };
const char* schedule_mode_name(ScheduleMode m);

// Regularity data of the observable paired with entry l in array mode.
struct ArrayEntryData {
  double sup_norm = 1;
  double K = 1;  // tracking-error constant
};

struct ScheduleReport {
  ScheduleMode mode = ScheduleMode::Plain;
  std::vector<TrendCheck> checks;
  std::vector<std::string> violations;  // per-entry invariant breaches
  bool all_ok = false;
  // Verdicts cover the supplied prefix only; they encode no limit claim.
  std::string note;
};

// Strict monotone-trend verdicts for the mode's constraint list plus
// per-entry invariants (T > max(t0, 1), delta > 0, Q >= 1, S > 0).
// Array mode requires per-entry observable data; relaxed mode requires the
// per-entry variance series.
ScheduleReport validate_schedule(
    const std::vector<ScheduleEntry>& entries, ScheduleMode mode,
    const std::vector<ArrayEntryData>* array_data = nullptr,
    const std::vector<double>* sigma_sq = nullptr);

// Trend of sqrt(k_l) sigma_l / T_l over the prefix: Increasing when strictly
// monotone up, Flat when constant to relative tolerance, else NonIncreasing.
Trend lindeberg_precheck(const std::vector<double>& sigma,
                         const std::vector<double>& T,
                         const std::vector<double>& k);

}  // namespace lindlab
