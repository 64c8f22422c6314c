#pragma once

#include <array>
#include <span>
#include <vector>

namespace lindlab {

// Dense polynomial with inline storage; degree stays small (fiber profiles
// are capped at degree 4, so squares of cumulative differences stay within
// capacity). Value type, no heap.
struct Poly {
  static constexpr int kMaxCoeffs = 13;
  std::array<double, kMaxCoeffs> c{};
  int n = 1;  // coefficient count, degree n-1; n >= 1, c[0] defaults to 0

  static Poly constant(double v);
  static Poly from_coeffs(std::span<const double> coeffs);

  int degree() const { return n - 1; }
  double eval(double u) const;
  Poly derivative() const;
  Poly antiderivative() const;   // constant term 0
  Poly shifted(double dx) const; // returns q with q(u) = (*this)(u + dx)
  Poly scaled(double s) const;   // returns q with q(u) = (*this)(s * u)
  Poly squared() const;
  Poly times(const Poly& o) const;
  void add_scaled(const Poly& p, double s);  // *this += s * p
  void negate();
  bool is_zero() const;
};

// Sign-change roots of p in [a, b], strictly increasing, refined to abs_tol.
// Tangential touches (no sign change) are not reported; callers use roots
// only to split integration domains, where touch points have measure zero.
void poly_roots(const Poly& p, double a, double b, double abs_tol,
                std::vector<double>& out);

// min / max of p over [a, b], exact up to root refinement of p'.
void poly_range(const Poly& p, double a, double b, double& lo, double& hi);

// Piecewise polynomial function of t on [brk.front(), brk.back()];
// piece i is anchored at its left endpoint: value(t) = piece[i](t - brk[i]).
struct PiecewiseFn {
  std::vector<double> brk;
  std::vector<Poly> piece;

  double domain_length() const { return brk.back() - brk.front(); }
  double eval(double t) const;
  double integrate() const;
  double integrate_square() const;
  // integral of (g - c)^2 over { t : |g(t) - c| > tau }, threshold crossings
  // located by root finding (tolerance root_tol on t).
  double integrate_square_tail(double c, double tau, double root_tol) const;
  // Lebesgue measure of { t : g(t) <= a }.
  double sublevel_measure(double a, double root_tol) const;
  double inf() const;
  double sup() const;
  void add_constant(double v);

  void check() const;  // structural asserts (sizes, increasing breaks)
};

// Sum of several piecewise functions over a common domain, as a single
// piecewise function on the merged breakpoint grid. Incremental sweep with
// Taylor rebasing; parts must share identical domain endpoints.
PiecewiseFn piecewise_sum(std::span<const PiecewiseFn> parts);

}  // namespace lindlab
