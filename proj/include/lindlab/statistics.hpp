#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lindlab/measures.hpp"
#include "lindlab/regularity.hpp"
#include "lindlab/schedule.hpp"

namespace lindlab {

// Standard normal CDF via the complementary error function.
double normal_cdf(double a);

// Weighted empirical CDF. Atom CDFs are right-continuous steps with exact
// masses; continuous CDFs carry exact sublevel masses sampled on a fixed
// probe grid (the t-direction of orbit-segment measures).
struct EmpiricalCdf {
  std::vector<double> position;    // strictly increasing
  std::vector<double> cumulative;  // nondecreasing, ends at 1
  bool continuous = false;

  double eval(double a) const;
};

// sup_a |F(a) - N(a)|: exact over the step positions (both one-sided limits)
// for atom CDFs; sup over the probe grid for continuous ones.
double ks_to_normal(const EmpiricalCdf& cdf);

// L(h, c) = sum_i w_i (h_i - mean)^2 over { |h_i - mean| > c }, strict.
double lindeberg_function(std::span<const double> values,
                          std::span<const double> weights, double c);

// Ratio values carry a defined flag instead of raising: a vanishing
// normalizing variance is data about the run, not a crash.
struct LindebergRatio {
  double gamma = 0;
  double value = 0;
  bool defined = false;
};

enum class CltNormalizer { BlockSum, SumVariance, Segment };

struct CltCurve {
  std::string normalizer;  // "blocksum", "sumvar", "segment", or "mu"
  double scale = 0;        // the normalizer value used
  EmpiricalCdf cdf;
  double ks = 1;
  bool defined = false;
  // Zero normalizer with identically zero deviations: the distribution is a
  // unit mass at 0, reported as a step there (KS 1/2) rather than refused.
  bool degenerate = false;
};

struct VarianceBundle {
  double base_variance = 0;       // Var of F(., T) under the base weights
  double block_variance_sum = 0;  // s^2  = sum_p Var(F_p), exactly that sum
  double sum_variance = 0;        // s'^2 = Var(sum_p F_p)
  double segment_variance = 0;    // s''^2 = Var(F(., S))
  std::vector<double> per_block;        // Var(F_p)
  std::vector<double> per_block_ratio;  // Var(F_p) / (Q^2 sigma^2)
  double max_ratio_dev = 0;             // max_p |ratio - 1|
  bool ratio_defined = false;
  long long Q = 0;
  bool zero_variance = false;       // s == 0
  bool zero_base_variance = false;  // sigma == 0
  // delta-method standard errors of the three nu-side variances over the
  // sampled atoms; zero in exact mode
  double se_block_variance_sum = 0;
  double se_sum_variance = 0;
  double se_segment_variance = 0;
};

struct DeviationDiagnostics {
  double sup_delta = 0;       // sup over blocks and atoms of |Delta_p|
  double delta_bound = 0;     // 2 (2KT + kappa ||f|| + 2 delta Q ||f||)
  double bound_constant = 0;  // K = L kappa / (1 - exp(-eta alpha / 2))
  bool bound_ok = false;
  double ab_mass = 0;       // nu{ |A - B| > a }, A/B the s-normalized pair
  double ab_threshold = 0;  // the configured a
  std::size_t ab_atoms = 0;  // deterministic atom prefix the mass used
  bool defined = false;      // false when s == 0 (A, B not normalizable)
};

struct LemmaDiagnostics {
  std::vector<double> per_block_ratio;
  double max_ratio_dev = 0;
  bool ratio_defined = false;
  DeviationDiagnostics deviations;
};

struct BlockStatParams {
  ScheduleEntry entry;
  double kappa_eps = 0;  // <= 0: use entry.eps
  double ab_threshold = 0.1;
  std::vector<double> gammas = {0.25, 0.5, 1.0, 2.0};
  double root_tol = 1e-12;
  int workers = 1;
  bool force_generic = false;  // testing hook: skip the per-cycle table path
  std::size_t generic_atom_cap = 2048;  // atom prefix in the generic path
  std::size_t ab_atom_cap = 512;        // atom prefix for the A/B mass
};

struct BlockStatistics {
  VarianceBundle variances;
  std::vector<LindebergRatio> lindeberg_nu;  // aligned with params.gammas
  std::vector<LindebergRatio> lindeberg_m;
  CltCurve cdf_blocksum;  // normalizer s
  CltCurve cdf_sumvar;    // normalizer s'
  CltCurve cdf_segment;   // normalizer s''
  LemmaDiagnostics lemmas;
  double mean_base = 0;     // int F(., T) dm
  double mean_segment = 0;  // int F(., S) dnu
  bool fast_path = false;
  std::size_t atoms_used = 0;
};

// All orbit-segment statistics of one schedule entry in one pass. Cyclic
// closure within tolerance and block windows that fit inside single blocks
// select an exact per-cycle table path; otherwise each atom is realized and
// integrated directly (over a deterministic atom prefix when capped).
BlockStatistics block_statistics(const SymbolicSystem& sys,
                                 const RoofFunction& roof, const Observable& f,
                                 const OrbitSegmentMeasure& nu,
                                 const BlockStatParams& params);

// Variance of x -> int_0^T f along the marked orbit, under the base weights.
double sigma_l(const RoofFunction& roof, const Observable& f,
               const DiscreteMeasure& m, double T);

// F_{p,q} over [t_p + qT, t_p + (q+1)T], or F_p over [t_p, t_p + QT] when q
// is omitted; p, q are 0-based and windows must lie inside [0, S].
double block_functional_value(const RoofFunction& roof, const Observable& f,
                              const GluedPoint& g, long long Q, long long p,
                              std::optional<long long> q = std::nullopt);

VarianceBundle variance_bundle(const SymbolicSystem& sys,
                               const RoofFunction& roof, const Observable& f,
                               const OrbitSegmentMeasure& nu,
                               const ScheduleEntry& entry);

// L_m(F(., T), gamma sqrt(k) sigma) / sigma^2, with the indicator shortcut:
// thresholds beyond 2 T ||f|| have empty deviation sets.
LindebergRatio lindeberg_ratio_m(const RoofFunction& roof, const Observable& f,
                                 const DiscreteMeasure& m, double T,
                                 long long k, double sigma, double gamma);

// sum_p L_nu(F_p, gamma s) / s^2.
LindebergRatio lindeberg_ratio_nu(const SymbolicSystem& sys,
                                  const RoofFunction& roof,
                                  const Observable& f,
                                  const OrbitSegmentMeasure& nu,
                                  const ScheduleEntry& entry, double gamma);

CltCurve clt_cdf(const SymbolicSystem& sys, const RoofFunction& roof,
                 const Observable& f, const OrbitSegmentMeasure& nu,
                 const ScheduleEntry& entry, CltNormalizer normalizer);

// Distribution of (sum_i F(v_i, T) - k int F dm) / sqrt(k sigma^2) over
// independent base draws: exact k-fold convolution with merging of equal
// support points while the tuple count stays within exact_cap, else seeded
// sampling. Zero base variance is flagged, not stepped.
CltCurve clt_cdf_mu(const RoofFunction& roof, const Observable& f,
                    const DiscreteMeasure& m, double T, long long k,
                    long long exact_cap = 1'000'000,
                    long long samples = 10'000, std::uint64_t seed = 1,
                    std::uint64_t stream = 0);

struct DynVarianceSeries {
  std::vector<double> values;  // sigma_l^2 / T_l
  double liminf_estimate = 0;  // minimum over the tail half of the prefix
  bool positive = false;
};

DynVarianceSeries dyn_variance_series(const RoofFunction& roof,
                                      const Observable& f,
                                      std::span<const DiscreteMeasure> ms,
                                      std::span<const double> T);

LemmaDiagnostics lemma_diagnostics(const SymbolicSystem& sys,
                                   const RoofFunction& roof,
                                   const Observable& f,
                                   const OrbitSegmentMeasure& nu,
                                   const ScheduleEntry& entry,
                                   double kappa_eps = 0,
                                   double ab_threshold = 0.1);

struct VariationEstimate {
  double value = 0;
  bool no_data = false;
};

// Sampled lower bound on the Bowen-ball variation omega(f, T, delta0) / T
// over the eta-regular set: pairs are phase offsets within delta0 along
// random regular orbits (the symbol metric over-penalizes time shifts at
// crossings, so offsets model the geometric ball).
VariationEstimate variation_estimate(const SymbolicSystem& sys,
                                     const RoofFunction& roof,
                                     const RegularityFunction& reg,
                                     const Observable& f, double eta, double T,
                                     double delta0, std::uint64_t pairs,
                                     std::uint64_t seed = 1);

}  // namespace lindlab
