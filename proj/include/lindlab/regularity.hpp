#pragma once

#include <optional>

#include "lindlab/symbolic.hpp"

namespace lindlab {

// Nonnegative cylinder function of finite depth, constant on fibers; the
// regularity weight lambda. lambda == 0 marks the singular sub-alphabet.
class RegularityFunction {
public:
  RegularityFunction(const SymbolicSystem& sys, WordTable table);

  int depth() const { return table_.depth; }
  const WordTable& table() const { return table_; }
  double lambda_max() const { return lambda_max_; }

  // delta' = eta / lambda_max, the admissible-window bound.
  double delta_prime(double eta) const;

private:
  WordTable table_;
  double lambda_max_ = 0.0;
};

double lambda_at(const RegularityFunction& reg, const FlowPoint& x);

// (1/t) * integral of lambda along [0, t]; exact (lambda is constant on
// fibers, so the integral is a weighted sum of segment lengths).
double lambda_average(const RegularityFunction& reg, const RoofFunction& roof,
                      const FlowPoint& x, double t);

// Average of lambda over one loop of the cycle word, weighted by roof times.
double cycle_lambda_average(const RegularityFunction& reg,
                            const RoofFunction& roof,
                            std::span<const Symbol> word);

// (v, t) in C(eta): lambda >= eta at both endpoints of the orbit segment.
bool in_C_eta(const RegularityFunction& reg, const RoofFunction& roof,
              const FlowPoint& x, double t, double eta);

// (v, t) in B(eta): the average along [0, t] is strictly below eta.
bool in_B_eta(const RegularityFunction& reg, const RoofFunction& roof,
              const FlowPoint& x, double t, double eta);

// Entropy of the subshift spanned by the lambda == 0 depth-d words (the
// singular model). nullopt when the singular subgraph carries no orbits
// (empty or loop-free); reported downstream as -inf.
std::optional<double> singular_entropy(const SymbolicSystem& sys,
                                       const RegularityFunction& reg);

// h' = (h(Sing) + h) / 2, the growth-floor exponent midpoint.
std::optional<double> entropy_midpoint(std::optional<double> h_sing, double h);

}  // namespace lindlab
