#pragma once

// Internal closed-form Birkhoff machinery shared by measures.cpp and
// statistics.cpp. A periodic symbol loop induces a piecewise polynomial
// cumulative integral c(u) = int_0^u f(g_s x) ds; window functionals
// t -> c(t+b) - c(t+a) are assembled exactly on merged crossing grids.

#include <cstddef>
#include <span>
#include <vector>

#include "lindlab/poly.hpp"
#include "lindlab/symbolic.hpp"

namespace lindlab::detail {

// Cyclic read of a depth-d table along a loop word.
double cyclic_table_value(const WordTable& table, std::span<const Symbol> word,
                          std::size_t pos);
const Poly& cyclic_profile(const Observable& f, int alphabet,
                           std::span<const Symbol> word, std::size_t pos);

struct OrbitCumulative {
  std::vector<double> brk;   // cumulative flow times, brk[0] = 0
  std::vector<double> cum;   // cum[i] = c(brk[i]); cum[L] = loop integral
  std::vector<Poly> value;   // f at time brk[i] + s, poly in s on [0, roof_i)
  std::vector<Poly> anti;    // antiderivative of value, anti[i](0) = 0
  double period = 0;         // brk.back()
  double loop_integral = 0;  // cum.back()

  double c(double u) const;  // u >= 0
};

OrbitCumulative build_orbit_cumulative(const RoofFunction& roof,
                                       const Observable& f,
                                       std::span<const Symbol> loop);

// t -> c(t + b) - c(t + a) on [0, len] as an exact piecewise polynomial;
// requires b >= a >= 0, len > 0.
PiecewiseFn window_fn(const OrbitCumulative& oc, double a, double b,
                      double len);

// c(t + a) restricted to t in [0, len], same grid construction.
PiecewiseFn cumulative_fn(const OrbitCumulative& oc, double a, double len);

}  // namespace lindlab::detail
