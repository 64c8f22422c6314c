#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lindlab/regularity.hpp"
#include "lindlab/symbolic.hpp"

namespace lindlab {

// A primitive periodic orbit of the suspension flow, stored as the
// lexicographically minimal rotation of its symbol loop.
struct Cycle {
  Word word;               // canonical (lex-min) rotation, primitive
  double flow_period = 0;  // exact loop flow time, rotation invariant
  double lambda_avg = 0;   // roof-weighted mean of lambda along the loop
  int base_rotation = 0;   // rotation picked as the orbit's marked point

  std::size_t symbol_length() const { return word.size(); }
  Word rotated_word() const;       // word rotated left by base_rotation
  FlowPoint base_point() const;    // marked point, fiber height 0
};

// Enumerates every primitive cycle with at most max_symbol_length symbols,
// ordered by symbol length then lexicographically. budget caps the number
// of search-tree nodes; exceeding it raises BudgetExceeded.
std::vector<Cycle> enumerate_cycles(const SymbolicSystem& sys,
                                    const RoofFunction& roof,
                                    const RegularityFunction& reg,
                                    std::size_t max_symbol_length,
                                    std::size_t budget = 50'000'000);

// Cycles with flow period in (T-delta, T], split by the lambda-average
// threshold eta. members carries the regular part with base rotations
// assigned; irregular_count counts the rest of the window.
struct CensusWindow {
  double T = 0;
  double delta = 0;
  double eta = 0;
  std::vector<Cycle> members;
  std::vector<Cycle> irregular;  // in the window, below the threshold

  std::size_t total_count() const { return members.size() + irregular.size(); }
};

// delta must be positive and below T; when delta_prime (the regularity
// scale eta/lambda_max) is supplied, delta must stay below it too.
// An empty window is data, not an error.
CensusWindow census_window(const std::vector<Cycle>& cycles,
                           const RegularityFunction& reg, double T,
                           double delta, double eta,
                           std::optional<double> delta_prime = std::nullopt);

struct SeparationReport {
  bool separated = true;
  std::size_t pairs_checked = 0;
  double min_distance = 0;  // smallest pairwise sup distance seen
  std::optional<std::pair<std::size_t, std::size_t>> first_violation;
};

// Checks that the marked points of the window members are pairwise
// (T, scale)-separated: sup over [0, T] of the flow distance is >= scale.
SeparationReport verify_separated(const RoofFunction& roof,
                                  const CensusWindow& window, double scale);

struct GrowthRow {
  double T = 0;
  std::size_t total_count = 0;    // all cycles in the window
  std::size_t regular_count = 0;  // lambda-average above the threshold
  double rate = 0;                // log(total_count * T) / T, -inf when empty
  double reference = 0;           // e^{T h} / T
  double envelope_lo = 0;         // (beta / T) e^{T h}
  double envelope_hi = 0;         // e^{T h} / beta
  bool envelope_ok = false;
};

struct GrowthReport {
  std::vector<GrowthRow> rows;
  double entropy = 0;
  std::optional<double> singular_entropy;  // nullopt encodes -inf
  std::optional<double> entropy_midpoint;
  double beta_fit = 0;
  // Least grid T from which every row meets the (beta/2T)e^{Th} floor with
  // its regular count; nullopt when no suffix of the grid does.
  std::optional<double> t0_empirical;
};

// Compares window counts against the e^{Th}/T growth envelopes. Requires
// at least two windows.
GrowthReport growth_report(const SymbolicSystem& sys,
                           const RegularityFunction& reg,
                           const std::vector<CensusWindow>& windows);

// CSV dump of a window: word, symbol_length, flow_period, lambda_avg,
// selected_base_point. Includes irregular members only when with_irregular
// rows are supplied by the caller via a second census at eta = 0.
std::string census_csv(const CensusWindow& window);

}  // namespace lindlab
