#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lindlab/census.hpp"
#include "lindlab/gluing.hpp"

namespace lindlab {

// Probability measure on the marked cycles of a census window. Weights are
// kept both linearly (normalized, sum 1 within 1e-12) and as natural logs so
// weighted variants survive large exponents.
struct DiscreteMeasure {
  std::vector<Cycle> atoms;
  std::vector<double> weights;
  std::vector<double> log_weights;
  double log_normalizer = 0.0;  // log of the raw weight mass
};

DiscreteMeasure uniform_measure(const CensusWindow& window);

// Weights exp(integral of phi over [0, T] along the marked orbit), normalized
// in the log domain. phi == 0 reproduces uniform_measure bit for bit: the
// shifted exponentials are exactly 1 and their sum is exactly the atom count.
DiscreteMeasure gibbs_weighted_measure(const SymbolicSystem& sys,
                                       const RoofFunction& roof,
                                       const CensusWindow& window,
                                       const Observable& phi, double T);

// k-fold product atoms over a base measure: exact enumeration while the
// tuple count stays within exact_cap, else sample_count seeded draws. Each
// draw's stream is derived from (seed, stream, tuple index), so results do
// not depend on evaluation order.
struct TupleSet {
  long long arity = 1;
  bool exact = true;
  std::vector<std::int32_t> flat;  // arity entries per tuple
  std::vector<double> weights;     // product weights, or 1/N when sampled

  std::size_t count() const { return weights.size(); }
  std::span<const std::int32_t> tuple(std::size_t i) const {
    return {flat.data() + static_cast<std::size_t>(arity) * i,
            static_cast<std::size_t>(arity)};
  }
};

TupleSet product_tuples(const DiscreteMeasure& base, long long k,
                        long long exact_cap, long long sample_count,
                        std::uint64_t seed, std::uint64_t stream);

// Measure on glued tuple orbits. Integrating a function h of the flow space
// means weight-averaging (1/T) int_0^T h(g_t y) dt over atoms, with T =
// window_top shared by every atom. Bridges are memoized per ordered pair of
// base atoms; glued points themselves are realized on demand (period words
// grow like k C T symbols).
struct OrbitSegmentMeasure {
  DiscreteMeasure base;
  TupleSet tuples;
  int loops = 1;               // C
  double transition_time = 1;  // M
  double window_top = 0;       // T
  double segment = 0;          // S = k (C T + M)

  // occurring cyclic-neighbor pairs, sorted; bridges aligned with pair_index
  std::vector<std::pair<std::int32_t, std::int32_t>> pair_index;
  std::vector<TransitionWord> pair_bridge;
  bool closure_exact = true;  // every bridge hit its target within tol
  double worst_residual = 0;
  double glue_tol = 1e-9;  // tolerance the bridges were searched with

  const TransitionWord& bridge(std::int32_t from, std::int32_t to) const;
};

OrbitSegmentMeasure nu_measure(const SymbolicSystem& sys,
                               const RoofFunction& roof,
                               const DiscreteMeasure& base, long long k, int C,
                               double M, double T,
                               long long exact_cap = 1'000'000,
                               long long sample_count = 10'000,
                               std::uint64_t seed = 1, std::uint64_t stream = 0,
                               double tol = 1e-9);

// Glued orbit realizing one tuple.
GluedPoint realize_atom(const SymbolicSystem& sys, const RoofFunction& roof,
                        const OrbitSegmentMeasure& nu, std::size_t atom);

struct IntegralEstimate {
  double value = 0;
  double se = 0;  // standard error of the atom average; 0 in exact mode
  bool sampled = false;
};

// Average of f against nu: sum of weight * (1/T) int_0^T f(g_t y) dt.
IntegralEstimate integrate(const SymbolicSystem& sys, const RoofFunction& roof,
                           const Observable& f, const OrbitSegmentMeasure& nu);

// Same for the windowed functional v -> int_s^u f(g_r v) dr; the window must
// lie inside [0, segment]. Values beyond the segment would read the cyclic
// closure rather than the paper's one-way continuation, so they are refused.
IntegralEstimate integrate_window(const SymbolicSystem& sys,
                                  const RoofFunction& roof, const Observable& f,
                                  const OrbitSegmentMeasure& nu, double s,
                                  double u);

enum class ReferenceKind { MaxEntropy, Equilibrium };

// Stationary Markov chain on admissible depth-d words whose suspension is the
// convergence target: the maximal-entropy measure, or the equilibrium state
// of a potential. Built from the weighted transfer operator; the flow
// pressure P solves leading-eigenvalue(weights e^{fiber potential - P roof})
// = 1 by bisection.
struct ReferenceMeasure {
  ReferenceKind kind = ReferenceKind::MaxEntropy;
  int depth = 1;
  std::vector<Word> states;        // admissible depth-d words, lex order
  std::vector<double> stationary;  // sums to 1
  std::vector<double> kernel;      // row-stochastic, states x states
  double pressure = 0;
  double stationarity_residual = 0;  // max |pi K - pi|, < 1e-10 on success
  double mean_roof = 0;              // base average of the roof
};

ReferenceMeasure reference_measure(const SymbolicSystem& sys,
                                   const RoofFunction& roof);
ReferenceMeasure reference_measure(const SymbolicSystem& sys,
                                   const RoofFunction& roof,
                                   const Observable& phi);

// Suspension integral of f: (cylinder weights x fiber profile integrals)
// normalized by the mean roof.
double reference_integral(const SymbolicSystem& sys, const RoofFunction& roof,
                          const ReferenceMeasure& ref, const Observable& f);

struct DeviationRow {
  std::string observable;
  double measured = 0;
  double reference = 0;
  double deviation = 0;
  double se = 0;
};

std::vector<DeviationRow> compare_to_reference(const SymbolicSystem& sys,
                                               const RoofFunction& roof,
                                               const OrbitSegmentMeasure& nu,
                                               const ReferenceMeasure& ref,
                                               std::span<const Observable> fs);

}  // namespace lindlab
