#include "lindlab/poly.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>

namespace lindlab {

Poly Poly::constant(double v) {
  Poly p;
  p.c[0] = v;
  p.n = 1;
  return p;
}

Poly Poly::from_coeffs(std::span<const double> coeffs) {
  Poly p;
  assert(!coeffs.empty() &&
         coeffs.size() <= static_cast<std::size_t>(kMaxCoeffs));
  p.n = static_cast<int>(coeffs.size());
  std::copy(coeffs.begin(), coeffs.end(), p.c.begin());
  return p;
}

double Poly::eval(double u) const {
  double acc = c[n - 1];
  for (int i = n - 2; i >= 0; --i) acc = acc * u + c[i];
  return acc;
}

Poly Poly::derivative() const {
  Poly d;
  if (n == 1) {
    d.c[0] = 0.0;
    d.n = 1;
    return d;
  }
  d.n = n - 1;
  for (int i = 1; i < n; ++i) d.c[i - 1] = c[i] * i;
  return d;
}

Poly Poly::antiderivative() const {
  Poly a;
  assert(n + 1 <= kMaxCoeffs);
  a.n = n + 1;
  a.c[0] = 0.0;
  for (int i = 0; i < n; ++i) a.c[i + 1] = c[i] / (i + 1);
  return a;
}

Poly Poly::shifted(double dx) const {
  // Horner-style Taylor shift: repeatedly divide by (u - (-dx)).
  Poly r = *this;
  if (dx == 0.0) return r;
  for (int i = 0; i < n - 1; ++i)
    for (int j = n - 2; j >= i; --j) r.c[j] += r.c[j + 1] * dx;
  return r;
}

Poly Poly::scaled(double s) const {
  Poly r = *this;
  double f = 1.0;
  for (int i = 1; i < n; ++i) {
    f *= s;
    r.c[i] *= f;
  }
  return r;
}

Poly Poly::squared() const {
  Poly s;
  assert(2 * n - 1 <= kMaxCoeffs);
  s.n = 2 * n - 1;
  s.c.fill(0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s.c[i + j] += c[i] * c[j];
  return s;
}

Poly Poly::times(const Poly& o) const {
  Poly s;
  assert(n + o.n - 1 <= kMaxCoeffs);
  s.n = n + o.n - 1;
  s.c.fill(0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o.n; ++j) s.c[i + j] += c[i] * o.c[j];
  return s;
}

void Poly::add_scaled(const Poly& p, double s) {
  if (p.n > n) {
    for (int i = n; i < p.n; ++i) c[i] = 0.0;
    n = p.n;
  }
  for (int i = 0; i < p.n; ++i) c[i] += s * p.c[i];
}

void Poly::negate() {
  for (int i = 0; i < n; ++i) c[i] = -c[i];
}

bool Poly::is_zero() const {
  for (int i = 0; i < n; ++i)
    if (c[i] != 0.0) return false;
  return true;
}

namespace {

// Bisection refinement on a bracketing interval; the bracket is assumed to
// change sign. Tolerance is absolute on the argument.
double refine_root(const Poly& p, double lo, double hi, double fl,
                   double abs_tol) {
  for (int it = 0; it < 200 && hi - lo > abs_tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = p.eval(mid);
    if (fm == 0.0) return mid;
    if ((fl < 0.0) == (fm < 0.0)) {
      lo = mid;
      fl = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void roots_rec(const Poly& p, double a, double b, double abs_tol,
               std::vector<double>& out) {
  if (p.n <= 1) return;  // constant: no sign-change roots
  if (p.n == 2) {
    // linear
    if (p.c[1] == 0.0) return;
    const double r = -p.c[0] / p.c[1];
    if (r > a && r < b) out.push_back(r);
    return;
  }
  // Critical points split [a, b] into monotone cells.
  std::vector<double> crit;
  roots_rec(p.derivative(), a, b, abs_tol, crit);
  crit.push_back(b);
  double lo = a;
  double flo = p.eval(lo);
  for (double hi : crit) {
    if (hi <= lo) continue;
    const double fhi = p.eval(hi);
    if (flo == 0.0) {
      if (lo > a) out.push_back(lo);
    } else if (fhi != 0.0 && (flo < 0.0) != (fhi < 0.0)) {
      out.push_back(refine_root(p, lo, hi, flo, abs_tol));
    }
    lo = hi;
    flo = fhi;
  }
  if (flo == 0.0 && b > a && crit.size() > 1) {
    // endpoint root at b handled by caller via interval endpoints
  }
}

}  // namespace

void poly_roots(const Poly& p, double a, double b, double abs_tol,
                std::vector<double>& out) {
  out.clear();
  if (!(b > a)) return;
  roots_rec(p, a, b, abs_tol, out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(),
                        [abs_tol](double x, double y) {
                          return std::fabs(x - y) <= abs_tol;
                        }),
            out.end());
}

void poly_range(const Poly& p, double a, double b, double& lo, double& hi) {
  lo = std::min(p.eval(a), p.eval(b));
  hi = std::max(p.eval(a), p.eval(b));
  if (p.n <= 2) return;
  std::vector<double> crit;
  poly_roots(p.derivative(), a, b, 1e-14 * std::max(1.0, b - a), crit);
  for (double t : crit) {
    const double v = p.eval(t);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
}

double PiecewiseFn::eval(double t) const {
  assert(!piece.empty());
  const auto it = std::upper_bound(brk.begin(), brk.end(), t);
  std::size_t i = it == brk.begin() ? 0 : (it - brk.begin()) - 1;
  if (i >= piece.size()) i = piece.size() - 1;
  return piece[i].eval(t - brk[i]);
}

double PiecewiseFn::integrate() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < piece.size(); ++i)
    acc += piece[i].antiderivative().eval(brk[i + 1] - brk[i]);
  return acc;
}

double PiecewiseFn::integrate_square() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < piece.size(); ++i)
    acc += piece[i].squared().antiderivative().eval(brk[i + 1] - brk[i]);
  return acc;
}

double PiecewiseFn::integrate_square_tail(double c, double tau,
                                          double root_tol) const {
  // Split each piece at |g - c| = tau and integrate (g - c)^2 where the
  // deviation strictly exceeds tau.
  assert(tau >= 0.0);
  double acc = 0.0;
  std::vector<double> cuts;
  std::vector<double> tmp;
  for (std::size_t i = 0; i < piece.size(); ++i) {
    const double len = brk[i + 1] - brk[i];
    Poly dev = piece[i];
    dev.c[0] -= c;
    cuts.clear();
    cuts.push_back(0.0);
    Poly up = dev;
    up.c[0] -= tau;
    poly_roots(up, 0.0, len, root_tol, tmp);
    cuts.insert(cuts.end(), tmp.begin(), tmp.end());
    Poly dn = dev;
    dn.c[0] += tau;
    poly_roots(dn, 0.0, len, root_tol, tmp);
    cuts.insert(cuts.end(), tmp.begin(), tmp.end());
    cuts.push_back(len);
    std::sort(cuts.begin(), cuts.end());
    const Poly devsq_int = dev.squared().antiderivative();
    for (std::size_t j = 0; j + 1 < cuts.size(); ++j) {
      const double a = cuts[j], b = cuts[j + 1];
      if (!(b > a)) continue;
      const double mid = dev.eval(0.5 * (a + b));
      if (std::fabs(mid) > tau)
        acc += devsq_int.eval(b) - devsq_int.eval(a);
    }
  }
  return acc;
}

double PiecewiseFn::sublevel_measure(double a, double root_tol) const {
  double acc = 0.0;
  std::vector<double> cuts;
  for (std::size_t i = 0; i < piece.size(); ++i) {
    const double len = brk[i + 1] - brk[i];
    Poly g = piece[i];
    g.c[0] -= a;
    std::vector<double> tmp;
    poly_roots(g, 0.0, len, root_tol, tmp);
    cuts.clear();
    cuts.push_back(0.0);
    cuts.insert(cuts.end(), tmp.begin(), tmp.end());
    cuts.push_back(len);
    for (std::size_t j = 0; j + 1 < cuts.size(); ++j) {
      const double lo = cuts[j], hi = cuts[j + 1];
      if (!(hi > lo)) continue;
      if (g.eval(0.5 * (lo + hi)) <= 0.0) acc += hi - lo;
    }
  }
  return acc;
}

double PiecewiseFn::inf() const {
  double lo = piece.front().eval(0.0), hi = lo;
  double best = lo;
  for (std::size_t i = 0; i < piece.size(); ++i) {
    poly_range(piece[i], 0.0, brk[i + 1] - brk[i], lo, hi);
    best = std::min(best, lo);
  }
  return best;
}

double PiecewiseFn::sup() const {
  double lo = piece.front().eval(0.0), hi = lo;
  double best = lo;
  for (std::size_t i = 0; i < piece.size(); ++i) {
    poly_range(piece[i], 0.0, brk[i + 1] - brk[i], lo, hi);
    best = std::max(best, hi);
  }
  return best;
}

void PiecewiseFn::add_constant(double v) {
  for (Poly& p : piece) p.c[0] += v;
}

void PiecewiseFn::check() const {
  assert(brk.size() == piece.size() + 1);
  for (std::size_t i = 0; i + 1 < brk.size(); ++i) assert(brk[i + 1] > brk[i]);
}

PiecewiseFn piecewise_sum(std::span<const PiecewiseFn> parts) {
  assert(!parts.empty());
  const double t0 = parts.front().brk.front();
  const double t1 = parts.front().brk.back();
  // Merge all interior breakpoints.
  std::vector<double> grid;
  grid.push_back(t0);
  for (const PiecewiseFn& f : parts) {
    assert(f.brk.front() == t0 && f.brk.back() == t1);
    grid.insert(grid.end(), f.brk.begin() + 1, f.brk.end() - 1);
  }
  grid.push_back(t1);
  std::sort(grid.begin(), grid.end());
  const double merge_tol = 1e-12 * std::max(1.0, t1 - t0);
  std::vector<double> brk;
  for (double g : grid)
    if (brk.empty() || g - brk.back() > merge_tol) brk.push_back(g);
  if (brk.back() != t1) brk.back() = t1;

  PiecewiseFn out;
  out.brk = brk;
  out.piece.resize(brk.size() - 1);
  std::vector<std::size_t> idx(parts.size(), 0);
  // Running sum anchored at the current piece start, advanced by rebasing.
  Poly run = Poly::constant(0.0);
  for (std::size_t p = 0; p < parts.size(); ++p)
    run.add_scaled(parts[p].piece[0], 1.0);
  double anchor = t0;
  for (std::size_t i = 0; i + 1 < brk.size(); ++i) {
    const double a = brk[i];
    if (i > 0) {
      run = run.shifted(a - anchor);
      anchor = a;
      // Swap in pieces that change at (or within merge_tol of) a.
      for (std::size_t p = 0; p < parts.size(); ++p) {
        const PiecewiseFn& f = parts[p];
        while (idx[p] + 1 < f.piece.size() &&
               f.brk[idx[p] + 1] <= a + merge_tol) {
          // retire old piece, rebased to the current anchor
          Poly old = f.piece[idx[p]].shifted(a - f.brk[idx[p]]);
          run.add_scaled(old, -1.0);
          ++idx[p];
          Poly fresh = f.piece[idx[p]].shifted(a - f.brk[idx[p]]);
          run.add_scaled(fresh, 1.0);
        }
      }
    }
    out.piece[i] = run;
  }
  return out;
}

}  // namespace lindlab
