#pragma once

#include <string>
#include <vector>

#include "lindlab/census.hpp"

namespace lindlab {

struct TransitionWord {
  Word word;
  double target = 0;    // requested flow time
  double realized = 0;  // roof sum over the bridge, next block as context
  double residual = 0;  // realized - target
};

// Shortest-deviation admissible bridge from the end of `from`'s marked
// rotation to the start of `to`'s. Exact (residual 0) for constant roofs
// with target a positive multiple of the roof value; otherwise deviation is
// minimized and recorded, ties broken by shorter then lexicographically
// smaller word. Targets below the shortest admissible bridge raise
// NoTransition carrying the minimal feasible time.
TransitionWord find_transition_word(const SymbolicSystem& sys,
                                    const RoofFunction& roof, const Cycle& from,
                                    const Cycle& to, double target,
                                    double tol = 1e-9);

// Periodic point looping C times around each component cycle in order, with
// transition bridges closing the tuple back on itself.
struct GluedPoint {
  std::vector<Cycle> components;  // x_1 .. x_k
  int loops = 1;                  // C
  double window_top = 0;          // T in the block schedule
  double transition_time = 0;     // M
  std::vector<TransitionWord> transitions;  // k bridges, cyclic
  Word period_word;               // blocks and bridges, one full period
  FlowPoint realized_sequence;    // periodic(period_word) at height 0
  double nominal_period = 0;      // k (C T + M)
  double realized_period = 0;     // exact loop flow time of period_word
  std::vector<double> block_schedule;      // t_p = (p-1)(C T + M)
  std::vector<std::size_t> block_offsets;  // symbol index of block p
};

// T <= 0 selects the largest component flow period. Bridge p is aimed at
// C (T - period_p) + M so each block starts at its scheduled time exactly
// whenever bridges realize their targets exactly.
GluedPoint glue(const SymbolicSystem& sys, const RoofFunction& roof,
                const std::vector<Cycle>& components, int C, double M,
                double T = -1.0, double tol = 1e-9);

struct TrackingReport {
  bool ok = false;
  double eps = 0;
  int margin_symbols = 0;         // symbols trimmed at each window end
  double worst_distance = 0;      // largest tracked distance over blocks
  std::vector<double> distances;  // per block
};

// Checks that from each scheduled time t_p the glued orbit stays within eps
// of component p's marked orbit for C least periods. The symbol metric is 1/2
// or more right at a block boundary, so the compared window is trimmed by
// enough symbols to make eps attainable; the trim is reported.
TrackingReport verify_tracking(const RoofFunction& roof, const GluedPoint& g,
                               double eps);

// JSON dump: components, transition words, block schedule, tracking margins.
std::string glued_point_json(const GluedPoint& g,
                             const TrackingReport* tracking = nullptr);

}  // namespace lindlab
