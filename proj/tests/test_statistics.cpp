#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lindlab/errors.hpp"
#include "lindlab/gluing.hpp"
#include "lindlab/kernels.hpp"
#include "lindlab/measures.hpp"
#include "lindlab/regularity.hpp"
#include "lindlab/schedule.hpp"
#include "lindlab/statistics.hpp"
#include "lindlab/util.hpp"

using namespace lindlab;

namespace {

template <typename F>
ErrorCode thrown_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::logic_error("expected an Error");
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

Cycle make_cycle(const RoofFunction& roof, const std::string& w,
                 int rotation = 0) {
  Cycle c;
  c.word = word_from_string(w);
  c.flow_period = loop_flow_period(roof, c.word);
  c.base_rotation = rotation;
  return c;
}

RoofFunction depth1_roof(const SymbolicSystem& sys, double r0, double r1) {
  WordTable t;
  t.depth = 1;
  t.alphabet = 2;
  t.value = {r0, r1};
  t.has = {1, 1};
  return RoofFunction(sys, t);
}

RegularityFunction ones_lambda(const SymbolicSystem& sys) {
  WordTable t;
  t.depth = 1;
  t.alphabet = 2;
  t.value = {0.0, 1.0};
  t.has = {1, 1};
  return RegularityFunction(sys, t);
}

Observable const_obs(const SymbolicSystem& sys, const std::string& name,
                     int depth, const std::vector<double>& vals) {
  std::vector<Poly> prof(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i)
    prof[i] = Poly::constant(vals[i]);
  return Observable::from_profiles(sys, name, depth, prof, 1.0, 1.0);
}

DiscreteMeasure two_atom_base(const RoofFunction& roof, const std::string& a,
                              const std::string& b, double wa, double wb) {
  DiscreteMeasure m;
  m.atoms = {make_cycle(roof, a), make_cycle(roof, b)};
  m.weights = {wa, wb};
  m.log_weights = {std::log(wa), std::log(wb)};
  return m;
}

// ---- independent integration oracle ----------------------------------------
// Walks a periodic symbol loop fiber by fiber and integrates the profile of
// each fiber with 8-point Gauss-Legendre (exact for polynomial degree <= 15).

double gauss8(const Poly& p, double a, double b) {
  static const double x[4] = {0.1834346424956498, 0.5255324099163290,
                              0.7966664774136267, 0.9602898564975363};
  static const double w[4] = {0.3626837833783620, 0.3137066458778873,
                              0.2223810344533745, 0.1012285362903763};
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 4; ++i)
    s += w[i] * (p.eval(mid + half * x[i]) + p.eval(mid - half * x[i]));
  return s * half;
}

double oracle_orbit_integral(const RoofFunction& roof, const Observable& f,
                             const Word& loop, double s, double t) {
  REQUIRE(s >= 0.0);
  const std::size_t L = loop.size();
  const int alpha = roof.table().alphabet;
  double acc = 0.0, pos = 0.0;
  std::size_t i = 0;
  while (pos < t) {
    std::size_t rc = 0, fc = 0;
    for (int j = 0; j < roof.depth(); ++j)
      rc = rc * static_cast<std::size_t>(alpha) + loop[(i + j) % L];
    for (int j = 0; j < f.depth; ++j)
      fc = fc * static_cast<std::size_t>(alpha) + loop[(i + j) % L];
    const double r = roof.table().at_code(rc);
    const double lo = std::max(s, pos), hi = std::min(t, pos + r);
    if (hi > lo)
      acc += r * gauss8(f.profile[fc], (lo - pos) / r, (hi - pos) / r);
    pos += r;
    ++i;
  }
  return acc;
}

// Normal CDF oracle: Phi(a) = 1/2 + phi(a) sum_n a^(2n+1) / (1 3 5 .. (2n+1)),
// summed in long double. Independent of erfc.
double oracle_phi(double a) {
  const long double x = a;
  long double term = x, sum = x;
  for (int n = 1; n < 400; ++n) {
    term *= x * x / (2.0L * n + 1.0L);
    sum += term;
    if (std::fabs(static_cast<double>(term)) < 1e-22) break;
  }
  const long double pi = 3.14159265358979323846264338327950288L;
  const long double dens = std::exp(-0.5L * x * x) / std::sqrt(2.0L * pi);
  return static_cast<double>(0.5L + dens * sum);
}

// Window functional oracle: t -> integral of f over [t+a, t+b] along a loop.
// Cuts come from the loop's own crossing times, so each cell is polynomial.

struct OrbitFn {
  const RoofFunction* roof = nullptr;
  const Observable* f = nullptr;
  Word word;

  double roof_at(std::size_t i) const {
    std::size_t rc = 0;
    for (int j = 0; j < roof->depth(); ++j)
      rc = rc * static_cast<std::size_t>(roof->table().alphabet) +
           word[(i + j) % word.size()];
    return roof->table().at_code(rc);
  }
  std::vector<double> crossings(double up) const {
    std::vector<double> out;
    double pos = 0.0;
    for (std::size_t i = 0; pos < up; ++i) {
      pos += roof_at(i);
      if (pos < up) out.push_back(pos);
    }
    return out;
  }
  double at(double a, double b) const {
    return oracle_orbit_integral(*roof, *f, word, a, b);
  }
};

struct WindowOracle {
  OrbitFn o;
  double a = 0, b = 0, len = 0;
  std::vector<double> cuts;

  double eval(double t) const { return o.at(t + a, t + b); }
};

WindowOracle make_window(OrbitFn o, double a, double b, double len) {
  WindowOracle wo;
  wo.o = std::move(o);
  wo.a = a;
  wo.b = b;
  wo.len = len;
  wo.cuts = {0.0, len};
  for (double x : wo.o.crossings(b + len + 1.0))
    for (double off : {a, b}) {
      const double t = x - off;
      if (t > 1e-13 && t < len - 1e-13) wo.cuts.push_back(t);
    }
  std::sort(wo.cuts.begin(), wo.cuts.end());
  return wo;
}

template <typename Fn>
double gauss_cells(const std::vector<double>& cuts, Fn&& fn) {
  static const double x[4] = {0.1834346424956498, 0.5255324099163290,
                              0.7966664774136267, 0.9602898564975363};
  static const double w[4] = {0.3626837833783620, 0.3137066458778873,
                              0.2223810344533745, 0.1012285362903763};
  double acc = 0.0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double lo = cuts[c], hi = cuts[c + 1];
    if (!(hi > lo)) continue;
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    double cell = 0.0;
    for (int i = 0; i < 4; ++i)
      cell += w[i] * (fn(mid + half * x[i]) + fn(mid - half * x[i]));
    acc += cell * half;
  }
  return acc;
}

std::vector<double> merge_cuts(std::vector<double> a,
                               const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  return a;
}

// Tail and level-set helpers for windows that are piecewise LINEAR in t
// (constant roof with constant fiber profiles). Exact by linear root solving.

template <typename Fn>
double linear_tail_integral(const std::vector<double>& cuts, Fn&& F,
                            double center, double tau) {
  double acc = 0.0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double lo = cuts[c], hi = cuts[c + 1];
    if (!(hi > lo)) continue;
    const double v0 = F(lo) - center, v1 = F(hi) - center;
    const double m = (v1 - v0) / (hi - lo);
    if (std::abs(m) < 1e-12) {
      const double v = 0.5 * (v0 + v1);
      if (std::abs(v) > tau) acc += v * v * (hi - lo);
      continue;
    }
    auto cube = [&](double t) {
      const double g = v0 + m * (t - lo);
      return g * g * g;
    };
    double t1 = lo + (-tau - v0) / m, t2 = lo + (tau - v0) / m;
    if (t1 > t2) std::swap(t1, t2);
    const double c1 = std::clamp(t1, lo, hi), c2 = std::clamp(t2, lo, hi);
    acc += (cube(c1) - cube(lo)) / (3.0 * m);
    acc += (cube(hi) - cube(c2)) / (3.0 * m);
  }
  return acc;
}

template <typename Fn>
double linear_outside_measure(const std::vector<double>& cuts, Fn&& F,
                              double center, double tau) {
  double acc = 0.0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double lo = cuts[c], hi = cuts[c + 1];
    if (!(hi > lo)) continue;
    const double v0 = F(lo) - center, v1 = F(hi) - center;
    const double m = (v1 - v0) / (hi - lo);
    if (std::abs(m) < 1e-12) {
      if (std::abs(0.5 * (v0 + v1)) > tau) acc += hi - lo;
      continue;
    }
    double t1 = lo + (-tau - v0) / m, t2 = lo + (tau - v0) / m;
    if (t1 > t2) std::swap(t1, t2);
    const double c1 = std::clamp(t1, lo, hi), c2 = std::clamp(t2, lo, hi);
    acc += (c1 - lo) + (hi - c2);
  }
  return acc;
}

template <typename Fn>
void linear_extrema(const std::vector<double>& cuts, Fn&& F, double& mn,
                    double& mx) {
  mn = F(cuts.front());
  mx = mn;
  for (double t : cuts) {
    const double v = F(t);
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
}

// Full first-principles recomputation of the slot statistics of nu: every
// atom is realized, every window integrated with Gauss cells on its own
// crossing grid. Valid for any roof; degree stays far below Gauss-8 range.

struct SlotOracle {
  double W = 0;
  std::vector<double> mean_p, var_p;
  double s2 = 0;
  double sum_mean = 0, sum_var = 0;
  double seg_mean = 0, seg_var = 0;
  std::vector<double> seg1;  // per atom, time averaged F(., S)
  std::vector<double> itot;  // per atom, F over one nominal period from 0
  double base_mean = 0, base_var = 0;
  std::vector<double> Fb;
};

SlotOracle oracle_stats(const SymbolicSystem& sys, const RoofFunction& roof,
                        const Observable& f, const OrbitSegmentMeasure& nu,
                        long long Q) {
  const auto k = static_cast<std::size_t>(nu.tuples.arity);
  const std::size_t N = nu.tuples.count();
  const std::size_t n = nu.base.atoms.size();
  const double T = nu.window_top;
  const double QT = static_cast<double>(Q) * T;
  SlotOracle so;

  so.Fb.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    OrbitFn bo{&roof, &f, nu.base.atoms[i].rotated_word()};
    so.Fb[i] = bo.at(0.0, T);
  }
  for (std::size_t i = 0; i < n; ++i) so.base_mean += nu.base.weights[i] * so.Fb[i];
  for (std::size_t i = 0; i < n; ++i) {
    const double d = so.Fb[i] - so.base_mean;
    so.base_var += nu.base.weights[i] * d * d;
  }

  std::vector<double> e1(k, 0.0), e2(k, 0.0);
  double sm1 = 0, sm2 = 0, g1 = 0, g2 = 0;
  so.seg1.resize(N);
  so.itot.resize(N);
  for (std::size_t j = 0; j < N; ++j) {
    const double wj = nu.tuples.weights[j];
    so.W += wj;
    const GluedPoint g = realize_atom(sys, roof, nu, j);
    OrbitFn o{&roof, &f, g.period_word};
    std::vector<WindowOracle> wins;
    wins.reserve(k);
    std::vector<double> allcuts{0.0, T};
    for (std::size_t p = 0; p < k; ++p) {
      const double tp = g.block_schedule[p];
      wins.push_back(make_window(o, tp, tp + QT, T));
      allcuts = merge_cuts(std::move(allcuts), wins.back().cuts);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const auto& wo = wins[p];
      e1[p] += wj * gauss_cells(wo.cuts, [&](double t) { return wo.eval(t); }) / T;
      e2[p] += wj * gauss_cells(wo.cuts, [&](double t) {
                 const double v = wo.eval(t);
                 return v * v;
               }) / T;
    }
    auto hval = [&](double t) {
      double v = 0;
      for (const auto& wo : wins) v += wo.eval(t);
      return v;
    };
    sm1 += wj * gauss_cells(allcuts, hval) / T;
    sm2 += wj * gauss_cells(allcuts, [&](double t) {
             const double v = hval(t);
             return v * v;
           }) / T;
    const WindowOracle fs = make_window(o, 0.0, nu.segment, T);
    const double v1 = gauss_cells(fs.cuts, [&](double t) { return fs.eval(t); }) / T;
    const double v2 = gauss_cells(fs.cuts, [&](double t) {
                        const double v = fs.eval(t);
                        return v * v;
                      }) / T;
    so.seg1[j] = v1;
    g1 += wj * v1;
    g2 += wj * v2;
    so.itot[j] = o.at(0.0, nu.segment);
  }

  so.mean_p.resize(k);
  so.var_p.resize(k);
  for (std::size_t p = 0; p < k; ++p) {
    so.mean_p[p] = e1[p] / so.W;
    so.var_p[p] = e2[p] / so.W - so.mean_p[p] * so.mean_p[p];
    so.s2 += so.var_p[p];
  }
  so.sum_mean = sm1 / so.W;
  so.sum_var = sm2 / so.W - so.sum_mean * so.sum_mean;
  so.seg_mean = g1 / so.W;
  so.seg_var = g2 / so.W - so.seg_mean * so.seg_mean;
  return so;
}

struct StepOracle {
  std::vector<double> pos, cum;
};

StepOracle cluster_steps(std::vector<std::pair<double, double>> vw,
                         double tol) {
  std::sort(vw.begin(), vw.end());
  StepOracle so;
  double total = 0;
  for (const auto& e : vw) total += e.second;
  double acc = 0;
  for (std::size_t i = 0; i < vw.size(); ++i) {
    acc += vw[i].second;
    if (i + 1 == vw.size() || vw[i + 1].first - vw[i].first > tol) {
      so.pos.push_back(vw[i].first);
      so.cum.push_back(acc / total);
    }
  }
  return so;
}

double step_ks_oracle(const StepOracle& so) {
  double ks = 0, prev = 0;
  for (std::size_t i = 0; i < so.pos.size(); ++i) {
    const double ph = oracle_phi(so.pos[i]);
    ks = std::max({ks, std::abs(prev - ph), std::abs(so.cum[i] - ph)});
    prev = so.cum[i];
  }
  return ks;
}

double probe_at(int i) { return -6.0 + 12.0 * i / 480.0; }

// Exact instance: constant roof 1 on the full 2-shift, depth-2 observable
// with values {00:0, 01:1, 10:0, 11:2}; per-cycle windows are piecewise
// linear with integer breakpoints.
struct MicroInstance {
  SymbolicSystem sys = SymbolicSystem::full_shift(2);
  RoofFunction roof = RoofFunction::constant(sys, 1.0);
  Observable f = const_obs(sys, "pairweight", 2, {0.0, 1.0, 0.0, 2.0});
  DiscreteMeasure base = two_atom_base(roof, "001", "011", 0.5, 0.5);
  OrbitSegmentMeasure nu;
  ScheduleEntry entry;

  MicroInstance() {
    nu = nu_measure(sys, roof, base, 2, 4, 1.0, 3.5);
    entry.l = 1;
    entry.T = 3.5;
    entry.k = 2;
    entry.delta = 0.6;
    entry.C = 4;
    entry.M = 1.0;
    entry.eps = 0.0625;
    entry.eta = 0.25;
  }
};

}  // namespace

TEST_CASE("normal cdf matches a series oracle") {
  CHECK(normal_cdf(0.0) == 0.5);
  for (int i = 0; i <= 48; ++i) {
    const double a = -6.0 + 0.25 * i;
    CHECK(close(normal_cdf(a), oracle_phi(a), 1e-12));
    CHECK(close(normal_cdf(a) + normal_cdf(-a), 1.0, 1e-14));
  }
  CHECK(normal_cdf(8.0) > 1.0 - 1e-14);
  CHECK(normal_cdf(-8.0) < 1e-14);
}

TEST_CASE("empirical cdf evaluation and ks distance") {
  EmpiricalCdf step;
  step.position = {-1.0, 2.0};
  step.cumulative = {0.3, 1.0};
  CHECK(step.eval(-2.0) == 0.0);
  CHECK(step.eval(-1.0) == 0.3);
  CHECK(step.eval(0.5) == 0.3);
  CHECK(step.eval(2.0) == 1.0);
  CHECK(step.eval(9.0) == 1.0);

  EmpiricalCdf lin;
  lin.continuous = true;
  lin.position = {0.0, 1.0};
  lin.cumulative = {0.0, 1.0};
  CHECK(close(lin.eval(0.25), 0.25, 1e-15));
  CHECK(lin.eval(-1.0) == 0.0);
  CHECK(lin.eval(2.0) == 1.0);

  EmpiricalCdf pm;
  pm.position = {0.0};
  pm.cumulative = {1.0};
  CHECK(ks_to_normal(pm) == 0.5);

  StepOracle so{step.position, step.cumulative};
  CHECK(close(ks_to_normal(step), step_ks_oracle(so), 1e-12));
}

TEST_CASE("lindeberg function on weighted atoms") {
  const std::vector<double> v{0.0, 1.0};
  const std::vector<double> w{0.5, 0.5};
  CHECK(close(lindeberg_function(v, w, 0.0), 0.25, 1e-15));
  CHECK(lindeberg_function(v, w, 0.6) == 0.0);
  CHECK(close(lindeberg_function(v, w, 0.4), 0.25, 1e-15));

  const std::vector<double> w1{0.5};
  CHECK(thrown_code([&] { (void)lindeberg_function(v, w1, 0.0); }) ==
        ErrorCode::BadConfig);
  CHECK(thrown_code([&] { (void)lindeberg_function(v, w, -1.0); }) ==
        ErrorCode::BadConfig);

  // randomized: monotone in the threshold, equals the variance at 0, dies at
  // the spread, never exceeds the variance
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    auto rng = make_rng(7, 3, trial);
    const std::size_t n = 2 + rng() % 7;
    std::vector<double> val(n), wt(n);
    for (std::size_t i = 0; i < n; ++i) {
      val[i] = 4.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 2.0;
      wt[i] = 0.05 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
    double tw = 0, mean = 0;
    for (std::size_t i = 0; i < n; ++i) tw += wt[i];
    for (std::size_t i = 0; i < n; ++i) mean += wt[i] * val[i] / tw;
    double var = 0;
    for (std::size_t i = 0; i < n; ++i)
      var += wt[i] * (val[i] - mean) * (val[i] - mean);
    CHECK(close(lindeberg_function(val, wt, 0.0), var, 1e-12 * (1.0 + var)));
    double prev = var + 1e-18;
    for (int s = 0; s <= 20; ++s) {
      const double c = 0.25 * s;
      const double L = lindeberg_function(val, wt, c);
      CHECK(L <= prev + 1e-15);
      CHECK(L <= var + 1e-15);
      CHECK(L >= 0.0);
      prev = L;
    }
    const double spread =
        *std::max_element(val.begin(), val.end()) -
        *std::min_element(val.begin(), val.end());
    CHECK(lindeberg_function(val, wt, spread) == 0.0);
  }
}

TEST_CASE("block windows tile exactly on a glued orbit") {
  auto sys = SymbolicSystem::full_shift(2);
  auto roof = RoofFunction::constant(sys, 1.0);
  auto f = const_obs(sys, "pairweight", 2, {0.0, 1.0, 0.0, 2.0});
  const std::vector<Cycle> comps{make_cycle(roof, "001"),
                                 make_cycle(roof, "011")};
  const GluedPoint g = glue(sys, roof, comps, 4, 1.0, 3.5);
  const long long Q = 2;

  // partial windows tile the block window with exact cancellation
  for (long long p = 0; p < 2; ++p) {
    double acc = 0.0;
    for (long long q = 0; q < Q; ++q)
      acc += block_functional_value(roof, f, g, Q, p, q);
    CHECK(acc == block_functional_value(roof, f, g, Q, p));
  }

  // f == 1 makes every partial window integrate to exactly T
  auto unit = const_obs(sys, "unit", 1, {1.0, 1.0});
  for (long long p = 0; p < 2; ++p)
    for (long long q = 0; q < Q; ++q)
      CHECK(block_functional_value(roof, unit, g, Q, p, q) == 3.5);

  // against the walking oracle
  OrbitFn o{&roof, &f, g.period_word};
  for (long long p = 0; p < 2; ++p) {
    const double tp = g.block_schedule[static_cast<std::size_t>(p)];
    CHECK(close(block_functional_value(roof, f, g, Q, p),
                o.at(tp, tp + Q * 3.5), 1e-12));
  }

  // one component, C = 2: the block functional is Q loop windows
  const GluedPoint g1 = glue(sys, roof, {make_cycle(roof, "011")}, 2, 1.0, 3.5);
  OrbitFn o1{&roof, &f, g1.period_word};
  CHECK(close(block_functional_value(roof, f, g1, 2, 0), o1.at(0.0, 7.0),
              1e-12));

  CHECK(thrown_code([&] { (void)block_functional_value(roof, f, g, Q, -1); }) ==
        ErrorCode::WindowOutOfRange);
  CHECK(thrown_code([&] { (void)block_functional_value(roof, f, g, Q, 2); }) ==
        ErrorCode::WindowOutOfRange);
  CHECK(thrown_code([&] { (void)block_functional_value(roof, f, g, Q, 0, 2); }) ==
        ErrorCode::WindowOutOfRange);
  CHECK(thrown_code([&] { (void)block_functional_value(roof, f, g, 0, 0, 0); }) ==
        ErrorCode::WindowOutOfRange);
  CHECK(thrown_code([&] { (void)block_functional_value(roof, f, g, 9, 1); }) ==
        ErrorCode::WindowOutOfRange);
  CHECK(thrown_code([&] { (void)block_functional_value(roof, f, g, -1, 0); }) ==
        ErrorCode::BadConfig);

  // varying roof: tiling within rounding
  auto roof2 = depth1_roof(sys, 1.0, 1.5);
  const GluedPoint g2 = glue(
      sys, roof2, {make_cycle(roof2, "001"), make_cycle(roof2, "011")}, 3, 1.0,
      4.0);
  for (long long p = 0; p < 2; ++p) {
    double acc = 0.0;
    for (long long q = 0; q < 1; ++q)
      acc += block_functional_value(roof2, f, g2, 1, p, q);
    CHECK(close(acc, block_functional_value(roof2, f, g2, 1, p), 1e-12));
  }
}

TEST_CASE("block statistics on an exact instance match the linear oracle") {
  MicroInstance mi;
  REQUIRE(mi.nu.closure_exact);
  REQUIRE(mi.nu.worst_residual == 0.0);
  REQUIRE(mi.nu.tuples.count() == 4);
  REQUIRE(mi.entry.Q() == 2);

  BlockStatParams params;
  params.entry = mi.entry;
  params.gammas = {0.3, 0.9, 1.2};
  params.ab_threshold = 0.37;
  const BlockStatistics bs =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);

  CHECK(bs.fast_path);
  CHECK(bs.atoms_used == 4);
  const VarianceBundle& vb = bs.variances;
  CHECK(vb.Q == 2);

  const SlotOracle so = oracle_stats(mi.sys, mi.roof, mi.f, mi.nu, 2);
  // base functional values are 1 and 3.5 by hand
  CHECK(close(so.Fb[0], 1.0, 1e-12));
  CHECK(close(so.Fb[1], 3.5, 1e-12));
  CHECK(close(bs.mean_base, so.base_mean, 1e-12));
  CHECK(close(vb.base_variance, so.base_var, 1e-12));
  CHECK(close(vb.base_variance, 1.5625, 1e-12));

  REQUIRE(vb.per_block.size() == 2);
  for (std::size_t p = 0; p < 2; ++p) {
    CAPTURE(p);
    CHECK(close(vb.per_block[p], so.var_p[p], 1e-12));
    CHECK(vb.per_block[p] > 0.01);
  }
  CHECK(vb.block_variance_sum == kernels::sum(vb.per_block));
  CHECK(close(vb.sum_variance, so.sum_var, 1e-12));
  CHECK(close(vb.segment_variance, so.seg_var, 1e-10));
  CHECK(close(bs.mean_segment, so.seg_mean, 1e-10));
  CHECK(!vb.zero_variance);
  CHECK(!vb.zero_base_variance);
  CHECK(vb.se_block_variance_sum == 0.0);
  CHECK(vb.se_sum_variance == 0.0);
  CHECK(vb.se_segment_variance == 0.0);

  REQUIRE(vb.ratio_defined);
  for (std::size_t p = 0; p < 2; ++p) {
    const double want = vb.per_block[p] / (4.0 * vb.base_variance);
    CHECK(close(vb.per_block_ratio[p], want, 1e-15));
  }
  double maxdev = 0;
  for (double r : vb.per_block_ratio)
    maxdev = std::max(maxdev, std::abs(r - 1.0));
  CHECK(vb.max_ratio_dev == maxdev);

  // Lindeberg against the linear tail oracle, marginal by marginal
  const double s2 = vb.block_variance_sum;
  const double s = std::sqrt(s2);
  std::vector<WindowOracle> cw;
  for (const Cycle& c : mi.base.atoms)
    cw.push_back(make_window(OrbitFn{&mi.roof, &mi.f, c.rotated_word()}, 0.0,
                             7.0, 3.5));
  std::vector<std::array<double, 2>> marg(2, {0.0, 0.0});
  for (std::size_t j = 0; j < 4; ++j) {
    const auto tup = mi.nu.tuples.tuple(j);
    for (std::size_t p = 0; p < 2; ++p)
      marg[p][static_cast<std::size_t>(tup[p])] += mi.nu.tuples.weights[j];
  }
  REQUIRE(bs.lindeberg_nu.size() == 3);
  for (std::size_t gi = 0; gi < 3; ++gi) {
    const double gamma = params.gammas[gi];
    double tail = 0.0;
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t i = 0; i < 2; ++i)
        tail += marg[p][i] *
                linear_tail_integral(cw[i].cuts,
                                     [&](double t) { return cw[i].eval(t); },
                                     so.mean_p[p], gamma * s);
    const double want = tail / (3.5 * so.W * s2);
    CAPTURE(gamma);
    CHECK(bs.lindeberg_nu[gi].defined);
    CHECK(bs.lindeberg_nu[gi].gamma == gamma);
    CHECK(close(bs.lindeberg_nu[gi].value, want, 1e-10));
  }
  CHECK(bs.lindeberg_nu[0].value > 0.5);  // both cycles deviate fully
  CHECK(bs.lindeberg_nu[2].value == 0.0);  // threshold beyond every deviation

  // base-side ratios: deviations are +-1.25, sigma = 1.25
  REQUIRE(bs.lindeberg_m.size() == 3);
  CHECK(close(bs.lindeberg_m[0].value, 1.0, 1e-12));
  CHECK(bs.lindeberg_m[1].value == 0.0);
  CHECK(bs.lindeberg_m[2].value == 0.0);

  // CLT curves: steps at the segment deviations over three normalizers
  const StepOracle seg_steps = [&] {
    std::vector<std::pair<double, double>> vw;
    const double ssd = std::sqrt(vb.segment_variance);
    for (std::size_t j = 0; j < 4; ++j)
      vw.push_back({(so.itot[j] - so.seg_mean) / ssd, mi.nu.tuples.weights[j]});
    return cluster_steps(std::move(vw), 1e-9);
  }();
  REQUIRE(bs.cdf_segment.defined);
  CHECK(!bs.cdf_segment.degenerate);
  CHECK(bs.cdf_segment.normalizer == "segment");
  CHECK(bs.cdf_segment.scale == std::sqrt(vb.segment_variance));
  REQUIRE(bs.cdf_segment.cdf.position.size() == seg_steps.pos.size());
  CHECK(seg_steps.pos.size() == 3);  // the two mixed tuples share one value
  for (std::size_t i = 0; i < seg_steps.pos.size(); ++i) {
    CHECK(close(bs.cdf_segment.cdf.position[i], seg_steps.pos[i], 1e-9));
    CHECK(close(bs.cdf_segment.cdf.cumulative[i], seg_steps.cum[i], 1e-15));
  }
  CHECK(close(bs.cdf_segment.ks, step_ks_oracle(seg_steps), 1e-8));
  CHECK(bs.cdf_blocksum.defined);
  CHECK(bs.cdf_blocksum.scale == s);
  CHECK(bs.cdf_sumvar.defined);
  CHECK(bs.cdf_sumvar.scale == std::sqrt(vb.sum_variance));
  CHECK(bs.cdf_blocksum.cdf.cumulative.back() == 1.0);
  for (std::size_t i = 1; i < bs.cdf_blocksum.cdf.position.size(); ++i) {
    CHECK(bs.cdf_blocksum.cdf.position[i] > bs.cdf_blocksum.cdf.position[i - 1]);
    CHECK(bs.cdf_blocksum.cdf.cumulative[i] >=
          bs.cdf_blocksum.cdf.cumulative[i - 1]);
  }

  // lemma diagnostics: ratio fields mirror the bundle, deviation sup and the
  // A/B mass against the linear oracle
  CHECK(bs.lemmas.ratio_defined == vb.ratio_defined);
  CHECK(bs.lemmas.max_ratio_dev == vb.max_ratio_dev);
  const DeviationDiagnostics& dd = bs.lemmas.deviations;
  CHECK(dd.defined);
  CHECK(dd.ab_threshold == 0.37);
  CHECK(dd.ab_atoms == 4);

  double sup = 0.0;
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < 2; ++i) {
      if (marg[p][i] == 0.0) continue;
      const double shift = so.mean_p[p] + 2.0 * (so.Fb[i] - so.base_mean);
      double mn = 0, mx = 0;
      linear_extrema(cw[i].cuts, [&](double t) { return cw[i].eval(t); }, mn,
                     mx);
      sup = std::max({sup, mx - shift, shift - mn});
    }
  CHECK(close(dd.sup_delta, sup, 1e-11));

  const double denom = 1.0 - std::exp(-0.25 * 1.0 / 2.0);
  const double K = 1.0 * 0.0625 / denom;
  const double bound =
      2.0 * (2.0 * K * 3.5 + 0.0625 * mi.f.sup_norm +
             2.0 * 0.6 * 2.0 * mi.f.sup_norm);
  CHECK(close(dd.bound_constant, K, 1e-12));
  CHECK(close(dd.delta_bound, bound, 1e-12));
  CHECK(dd.bound_ok == (dd.sup_delta <= dd.delta_bound));

  const double dmeans = so.seg_mean - so.sum_mean;
  double ab = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const auto tup = mi.nu.tuples.tuple(j);
    const auto ia = static_cast<std::size_t>(tup[0]);
    const auto ib = static_cast<std::size_t>(tup[1]);
    const auto cuts = merge_cuts(cw[ia].cuts, cw[ib].cuts);
    auto hv = [&](double t) { return cw[ia].eval(t) + cw[ib].eval(t); };
    const double key = so.itot[j] - dmeans;
    ab += mi.nu.tuples.weights[j] *
          linear_outside_measure(cuts, hv, key, 0.37 * s);
  }
  ab /= 3.5 * so.W;
  CHECK(close(dd.ab_mass, ab, 1e-10));
}

TEST_CASE("fast and generic paths agree on the exact instance") {
  MicroInstance mi;
  BlockStatParams params;
  params.entry = mi.entry;
  params.gammas = {0.3, 0.9, 1.2};
  params.ab_threshold = 0.37;
  const BlockStatistics fast =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
  params.force_generic = true;
  const BlockStatistics gen =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);

  REQUIRE(fast.fast_path);
  REQUIRE(!gen.fast_path);
  CHECK(gen.atoms_used == 4);
  for (std::size_t p = 0; p < 2; ++p)
    CHECK(close(gen.variances.per_block[p], fast.variances.per_block[p], 1e-9));
  CHECK(close(gen.variances.sum_variance, fast.variances.sum_variance, 1e-9));
  CHECK(close(gen.variances.segment_variance, fast.variances.segment_variance,
              1e-9));
  CHECK(close(gen.mean_segment, fast.mean_segment, 1e-9));
  CHECK(close(gen.mean_base, fast.mean_base, 1e-12));
  for (std::size_t gi = 0; gi < 3; ++gi) {
    CHECK(gen.lindeberg_nu[gi].defined == fast.lindeberg_nu[gi].defined);
    CHECK(close(gen.lindeberg_nu[gi].value, fast.lindeberg_nu[gi].value, 1e-9));
  }
  CHECK(close(gen.lemmas.deviations.sup_delta, fast.lemmas.deviations.sup_delta,
              1e-9));
  CHECK(close(gen.lemmas.deviations.ab_mass, fast.lemmas.deviations.ab_mass,
              1e-9));

  // the probe cdf must sample the step cdf exactly, and its KS statistic is
  // the probe-restricted supremum
  REQUIRE(gen.cdf_segment.defined);
  REQUIRE(gen.cdf_segment.cdf.continuous);
  REQUIRE(gen.cdf_segment.cdf.position.size() == 481);
  double want_ks = 0.0;
  for (int pr = 0; pr < 481; ++pr) {
    const double x = probe_at(pr);
    CHECK(gen.cdf_segment.cdf.position[pr] == x);
    CHECK(close(gen.cdf_segment.cdf.cumulative[pr], fast.cdf_segment.cdf.eval(x),
                1e-9));
    want_ks = std::max(want_ks,
                       std::abs(fast.cdf_segment.cdf.eval(x) - oracle_phi(x)));
  }
  CHECK(close(gen.cdf_segment.ks, want_ks, 2e-9));
  for (int pr = 0; pr < 481; ++pr) {
    const double x = probe_at(pr);
    CHECK(close(gen.cdf_blocksum.cdf.cumulative[pr],
                fast.cdf_blocksum.cdf.eval(x), 1e-9));
    CHECK(close(gen.cdf_sumvar.cdf.cumulative[pr], fast.cdf_sumvar.cdf.eval(x),
                1e-9));
  }
}

TEST_CASE("statistics do not depend on the worker count") {
  MicroInstance mi;
  BlockStatParams params;
  params.entry = mi.entry;
  params.gammas = {0.3, 0.9};
  params.ab_threshold = 0.37;
  const BlockStatistics one =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
  params.workers = 3;
  const BlockStatistics three =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
  CHECK(one.variances.per_block == three.variances.per_block);
  CHECK(one.variances.block_variance_sum == three.variances.block_variance_sum);
  CHECK(one.variances.sum_variance == three.variances.sum_variance);
  CHECK(one.variances.segment_variance == three.variances.segment_variance);
  CHECK(one.lindeberg_nu[0].value == three.lindeberg_nu[0].value);
  CHECK(one.lindeberg_nu[1].value == three.lindeberg_nu[1].value);
  CHECK(one.cdf_segment.ks == three.cdf_segment.ks);
  CHECK(one.cdf_segment.cdf.position == three.cdf_segment.cdf.position);
  CHECK(one.cdf_segment.cdf.cumulative == three.cdf_segment.cdf.cumulative);
  CHECK(one.lemmas.deviations.ab_mass == three.lemmas.deviations.ab_mass);
  CHECK(one.lemmas.deviations.sup_delta == three.lemmas.deviations.sup_delta);

  params.workers = 1;
  params.force_generic = true;
  const BlockStatistics g1 =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
  params.workers = 2;
  const BlockStatistics g2 =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
  CHECK(g1.variances.per_block == g2.variances.per_block);
  CHECK(g1.cdf_segment.cdf.cumulative == g2.cdf_segment.cdf.cumulative);
  CHECK(g1.cdf_segment.ks == g2.cdf_segment.ks);
  CHECK(g1.lindeberg_nu[0].value == g2.lindeberg_nu[0].value);
  CHECK(g1.lemmas.deviations.ab_mass == g2.lemmas.deviations.ab_mass);
}

TEST_CASE("fast tables handle varying roofs and sloped profiles") {
  auto sys = SymbolicSystem::full_shift(2);
  auto roof = depth1_roof(sys, 1.0, 1.5);
  std::vector<Poly> prof(2);
  prof[0] = Poly::from_coeffs(std::vector<double>{0.25, 0.5});
  prof[1] = Poly::from_coeffs(std::vector<double>{1.0, 0.0, -1.0});
  auto f = Observable::from_profiles(sys, "slope", 1, prof, 2.0, 1.0);
  auto base = two_atom_base(roof, "001", "011", 0.5, 0.5);
  auto nu = nu_measure(sys, roof, base, 2, 3, 1.0, 4.0);
  REQUIRE(nu.closure_exact);

  ScheduleEntry entry;
  entry.l = 1;
  entry.T = 4.0;
  entry.k = 2;
  entry.delta = 0.9;
  entry.C = 3;
  entry.M = 1.0;
  entry.eps = 0.05;
  entry.eta = 0.3;
  REQUIRE(entry.Q() == 1);

  BlockStatParams params;
  params.entry = entry;
  params.gammas = {0.25, 1.0};
  const BlockStatistics bs = block_statistics(sys, roof, f, nu, params);
  REQUIRE(bs.fast_path);

  const SlotOracle so = oracle_stats(sys, roof, f, nu, 1);
  CHECK(close(so.Fb[0], 2.1875, 1e-13));
  CHECK(close(so.Fb[1], 2.5, 1e-13));
  CHECK(close(bs.mean_base, so.base_mean, 1e-12));
  CHECK(close(bs.variances.base_variance, so.base_var, 1e-12));
  for (std::size_t p = 0; p < 2; ++p)
    CHECK(close(bs.variances.per_block[p], so.var_p[p], 1e-12));
  CHECK(close(bs.variances.sum_variance, so.sum_var, 1e-12));
  CHECK(close(bs.variances.segment_variance, so.seg_var, 1e-11));
  CHECK(close(bs.mean_segment, so.seg_mean, 1e-11));

  const StepOracle seg_steps = [&] {
    std::vector<std::pair<double, double>> vw;
    const double ssd = std::sqrt(bs.variances.segment_variance);
    for (std::size_t j = 0; j < 4; ++j)
      vw.push_back({(so.itot[j] - so.seg_mean) / ssd, nu.tuples.weights[j]});
    return cluster_steps(std::move(vw), 1e-8);
  }();
  REQUIRE(bs.cdf_segment.cdf.position.size() == seg_steps.pos.size());
  for (std::size_t i = 0; i < seg_steps.pos.size(); ++i) {
    CHECK(close(bs.cdf_segment.cdf.position[i], seg_steps.pos[i], 1e-8));
    CHECK(close(bs.cdf_segment.cdf.cumulative[i], seg_steps.cum[i], 1e-15));
  }

  // the generic path integrates the same sloped windows
  params.force_generic = true;
  const BlockStatistics gen = block_statistics(sys, roof, f, nu, params);
  REQUIRE(!gen.fast_path);
  for (std::size_t p = 0; p < 2; ++p)
    CHECK(close(gen.variances.per_block[p], bs.variances.per_block[p], 1e-9));
  CHECK(close(gen.variances.segment_variance, bs.variances.segment_variance,
              1e-9));
  for (std::size_t gi = 0; gi < 2; ++gi)
    CHECK(close(gen.lindeberg_nu[gi].value, bs.lindeberg_nu[gi].value, 1e-9));
  CHECK(close(gen.lemmas.deviations.sup_delta,
              bs.lemmas.deviations.sup_delta, 1e-9));
  CHECK(close(gen.lemmas.deviations.ab_mass, bs.lemmas.deviations.ab_mass,
              1e-9));
}

TEST_CASE("generic path integrates inexact closures") {
  auto sys = SymbolicSystem::full_shift(2);
  auto roof = depth1_roof(sys, 1.0, 1.3);
  std::vector<Poly> prof(4);
  prof[0] = Poly::from_coeffs(std::vector<double>{0.2, 0.3});
  prof[1] = Poly::from_coeffs(std::vector<double>{1.0, -0.5});
  prof[2] = Poly::from_coeffs(std::vector<double>{0.5});
  prof[3] = Poly::from_coeffs(std::vector<double>{0.0, 1.0});
  auto f = Observable::from_profiles(sys, "mixed", 2, prof, 2.0, 0.8);
  auto base = two_atom_base(roof, "001", "011", 0.3, 0.7);
  auto nu = nu_measure(sys, roof, base, 2, 3, 1.0, 4.0);
  REQUIRE(!nu.closure_exact);
  CHECK(nu.worst_residual > 1e-3);

  ScheduleEntry entry;
  entry.l = 1;
  entry.T = 4.0;
  entry.k = 2;
  entry.delta = 0.9;
  entry.C = 3;
  entry.M = 1.0;
  entry.eps = 0.05;
  entry.eta = 0.3;
  REQUIRE(entry.Q() == 1);

  BlockStatParams params;
  params.entry = entry;
  params.gammas = {0.5};
  const BlockStatistics bs = block_statistics(sys, roof, f, nu, params);
  REQUIRE(!bs.fast_path);
  CHECK(bs.atoms_used == 4);

  const SlotOracle so = oracle_stats(sys, roof, f, nu, 1);
  CHECK(close(bs.mean_base, so.base_mean, 1e-12));
  CHECK(close(bs.variances.base_variance, so.base_var, 1e-12));
  for (std::size_t p = 0; p < 2; ++p)
    CHECK(close(bs.variances.per_block[p], so.var_p[p], 1e-11));
  CHECK(close(bs.variances.sum_variance, so.sum_var, 1e-11));
  CHECK(close(bs.variances.segment_variance, so.seg_var, 1e-10));
  CHECK(close(bs.mean_segment, so.seg_mean, 1e-10));
  CHECK(bs.variances.block_variance_sum ==
        kernels::sum(bs.variances.per_block));

  REQUIRE(bs.cdf_segment.defined);
  REQUIRE(bs.cdf_segment.cdf.continuous);
  const auto& cum = bs.cdf_segment.cdf.cumulative;
  CHECK(cum.front() == 0.0);
  CHECK(close(cum.back(), 1.0, 1e-12));
  for (std::size_t i = 1; i < cum.size(); ++i) CHECK(cum[i] >= cum[i - 1]);
  CHECK(bs.cdf_segment.ks <= 1.0);
  CHECK(bs.cdf_segment.ks >= 0.0);
  CHECK(bs.lindeberg_nu[0].defined);
}

TEST_CASE("degenerate and zero-variance flags") {
  MicroInstance mi;

  SUBCASE("empty block windows") {
    auto nu = nu_measure(mi.sys, mi.roof, mi.base, 2, 2, 1.0, 3.5);
    REQUIRE(nu.closure_exact);
    ScheduleEntry entry = mi.entry;
    entry.C = 2;
    CHECK(thrown_code([&] { (void)entry.Q(); }) == ErrorCode::NonPositiveQ);

    BlockStatParams params;
    params.entry = entry;
    const BlockStatistics bs =
        block_statistics(mi.sys, mi.roof, mi.f, nu, params);
    CHECK(bs.variances.Q == 0);
    CHECK(bs.variances.zero_variance);
    CHECK(!bs.variances.zero_base_variance);
    CHECK(bs.variances.per_block == std::vector<double>{0.0, 0.0});
    CHECK(!bs.variances.ratio_defined);
    for (const auto& r : bs.lindeberg_nu) CHECK(!r.defined);
    CHECK(!bs.cdf_blocksum.defined);
    CHECK(!bs.cdf_blocksum.degenerate);
    CHECK(bs.cdf_segment.defined);  // segment deviations are real
    CHECK(!bs.lemmas.deviations.defined);
    CHECK(bs.lemmas.deviations.sup_delta == 0.0);
    for (const auto& r : bs.lindeberg_m) CHECK(r.defined);
  }

  SUBCASE("constant observable") {
    auto flat = const_obs(mi.sys, "flat", 1, {0.7, 0.7});
    BlockStatParams params;
    params.entry = mi.entry;
    const BlockStatistics bs =
        block_statistics(mi.sys, mi.roof, flat, mi.nu, params);
    CHECK(bs.variances.zero_variance);
    CHECK(bs.variances.zero_base_variance);
    CHECK(bs.variances.base_variance == 0.0);
    CHECK(bs.variances.block_variance_sum == 0.0);
    CHECK(bs.variances.sum_variance == 0.0);
    CHECK(bs.variances.segment_variance == 0.0);
    CHECK(!bs.variances.ratio_defined);
    for (const auto& r : bs.lindeberg_nu) CHECK(!r.defined);
    for (const auto& r : bs.lindeberg_m) CHECK(!r.defined);
    CHECK(bs.cdf_segment.defined);
    CHECK(bs.cdf_segment.degenerate);
    CHECK(bs.cdf_segment.ks == 0.5);
    CHECK(bs.cdf_blocksum.degenerate);
    CHECK(!bs.lemmas.deviations.defined);
    CHECK(bs.lemmas.deviations.sup_delta <= 1e-12);
    CHECK(close(bs.mean_base, 0.7 * 3.5, 1e-12));
  }

  SUBCASE("single atom") {
    auto roof = mi.roof;
    DiscreteMeasure one;
    one.atoms = {make_cycle(roof, "011")};
    one.weights = {1.0};
    one.log_weights = {0.0};
    auto nu = nu_measure(mi.sys, roof, one, 1, 4, 1.0, 3.5);
    REQUIRE(nu.tuples.count() == 1);
    ScheduleEntry entry = mi.entry;
    entry.k = 1;

    BlockStatParams params;
    params.entry = entry;
    const BlockStatistics bs =
        block_statistics(mi.sys, roof, mi.f, nu, params);
    CHECK(bs.variances.zero_base_variance);
    CHECK(!bs.variances.zero_variance);  // time variation within the block
    CHECK(bs.variances.segment_variance == 0.0);
    CHECK(bs.cdf_segment.defined);
    CHECK(bs.cdf_segment.degenerate);
    CHECK(bs.cdf_segment.ks == 0.5);
    CHECK(bs.cdf_blocksum.defined);
    CHECK(!bs.cdf_blocksum.degenerate);
    CHECK(bs.cdf_blocksum.ks == 0.5);  // a single step lands at zero
  }
}

TEST_CASE("schedule entry must match the measure") {
  MicroInstance mi;
  ScheduleEntry bad = mi.entry;
  bad.k = 3;
  BlockStatParams params;
  params.entry = bad;
  CHECK(thrown_code([&] {
          (void)block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
        }) == ErrorCode::BadConfig);
  bad = mi.entry;
  bad.C = 5;
  params.entry = bad;
  CHECK(thrown_code([&] {
          (void)block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
        }) == ErrorCode::BadConfig);
  params.entry = mi.entry;
  params.gammas = {-0.5};
  CHECK(thrown_code([&] {
          (void)block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
        }) == ErrorCode::BadConfig);
}

TEST_CASE("wrappers project the full statistics") {
  MicroInstance mi;
  BlockStatParams params;
  params.entry = mi.entry;
  params.gammas.clear();
  const BlockStatistics bs =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);

  const VarianceBundle vb =
      variance_bundle(mi.sys, mi.roof, mi.f, mi.nu, mi.entry);
  CHECK(vb.per_block == bs.variances.per_block);
  CHECK(vb.block_variance_sum == bs.variances.block_variance_sum);
  CHECK(vb.sum_variance == bs.variances.sum_variance);
  CHECK(vb.segment_variance == bs.variances.segment_variance);
  CHECK(vb.base_variance == bs.variances.base_variance);
  CHECK(vb.max_ratio_dev == bs.variances.max_ratio_dev);

  BlockStatParams pg;
  pg.entry = mi.entry;
  pg.gammas = {0.7};
  const BlockStatistics bsg =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, pg);
  const LindebergRatio lr =
      lindeberg_ratio_nu(mi.sys, mi.roof, mi.f, mi.nu, mi.entry, 0.7);
  CHECK(lr.defined == bsg.lindeberg_nu[0].defined);
  CHECK(lr.value == bsg.lindeberg_nu[0].value);
  CHECK(lr.gamma == 0.7);

  const CltCurve seg =
      clt_cdf(mi.sys, mi.roof, mi.f, mi.nu, mi.entry, CltNormalizer::Segment);
  CHECK(seg.normalizer == bs.cdf_segment.normalizer);
  CHECK(seg.scale == bs.cdf_segment.scale);
  CHECK(seg.ks == bs.cdf_segment.ks);
  CHECK(seg.cdf.position == bs.cdf_segment.cdf.position);
  const CltCurve blk =
      clt_cdf(mi.sys, mi.roof, mi.f, mi.nu, mi.entry, CltNormalizer::BlockSum);
  CHECK(blk.normalizer == "blocksum");
  CHECK(blk.scale == bs.cdf_blocksum.scale);

  BlockStatParams pl;
  pl.entry = mi.entry;
  pl.gammas.clear();
  pl.ab_threshold = 0.37;
  const BlockStatistics bsl =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, pl);
  const LemmaDiagnostics ld =
      lemma_diagnostics(mi.sys, mi.roof, mi.f, mi.nu, mi.entry, 0.0, 0.37);
  CHECK(ld.max_ratio_dev == bsl.lemmas.max_ratio_dev);
  CHECK(ld.deviations.sup_delta == bsl.lemmas.deviations.sup_delta);
  CHECK(ld.deviations.ab_mass == bsl.lemmas.deviations.ab_mass);
  CHECK(ld.deviations.delta_bound == bsl.lemmas.deviations.delta_bound);
}

TEST_CASE("base-side lindeberg ratios") {
  auto sys = SymbolicSystem::full_shift(2);
  auto roof = RoofFunction::constant(sys, 1.0);
  auto ones = const_obs(sys, "ones", 1, {0.0, 1.0});
  auto base = two_atom_base(roof, "0", "1", 0.5, 0.5);

  // F over [0,1] is {0,1}: sigma^2 = 1/4
  CHECK(close(sigma_l(roof, ones, base, 1.0), 0.25, 1e-15));
  const LindebergRatio full =
      lindeberg_ratio_m(roof, ones, base, 1.0, 1, 0.5, 0.5);
  CHECK(full.defined);
  CHECK(close(full.value, 1.0, 1e-12));
  const LindebergRatio none =
      lindeberg_ratio_m(roof, ones, base, 1.0, 1, 0.5, 2.0);
  CHECK(none.defined);
  CHECK(none.value == 0.0);
  const LindebergRatio cut =
      lindeberg_ratio_m(roof, ones, base, 1.0, 1, 0.5, 5.0);
  CHECK(cut.defined);
  CHECK(cut.value == 0.0);  // threshold beyond 2 T sup|f|
  const LindebergRatio undef =
      lindeberg_ratio_m(roof, ones, base, 1.0, 1, 0.0, 0.5);
  CHECK(!undef.defined);

  CHECK(thrown_code([&] {
          (void)lindeberg_ratio_m(roof, ones, base, 1.0, 0, 0.5, 0.5);
        }) == ErrorCode::BadConfig);
  CHECK(thrown_code([&] {
          (void)lindeberg_ratio_m(roof, ones, base, 1.0, 1, 0.5, -1.0);
        }) == ErrorCode::BadConfig);
  CHECK(thrown_code([&] { (void)sigma_l(roof, ones, base, 0.0); }) ==
        ErrorCode::BadConfig);

  // brute recomputation on an uneven base
  auto roof2 = depth1_roof(sys, 1.0, 1.5);
  auto base2 = two_atom_base(roof2, "01", "001", 0.3, 0.7);
  const double T = 2.0;
  std::vector<double> F(2);
  for (std::size_t i = 0; i < 2; ++i) {
    OrbitFn o{&roof2, &ones, base2.atoms[i].rotated_word()};
    F[i] = o.at(0.0, T);
  }
  const double mean = 0.3 * F[0] + 0.7 * F[1];
  const double var =
      0.3 * (F[0] - mean) * (F[0] - mean) + 0.7 * (F[1] - mean) * (F[1] - mean);
  CHECK(close(sigma_l(roof2, ones, base2, T), var, 1e-12));
  const double sigma = std::sqrt(var);
  const double gamma = 0.4;
  const double c = gamma * std::sqrt(3.0) * sigma;
  double tail = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    if (std::abs(F[i] - mean) > c)
      tail += base2.weights[i] * (F[i] - mean) * (F[i] - mean);
  const LindebergRatio brute =
      lindeberg_ratio_m(roof2, ones, base2, T, 3, sigma, gamma);
  CHECK(close(brute.value, tail / var, 1e-12));
}

TEST_CASE("draw-side clt distribution") {
  auto sys = SymbolicSystem::full_shift(2);
  auto roof = RoofFunction::constant(sys, 1.0);
  auto ones = const_obs(sys, "ones", 1, {0.0, 1.0});
  auto base = two_atom_base(roof, "0", "1", 0.5, 0.5);

  SUBCASE("single draw reproduces the base steps") {
    const CltCurve c = clt_cdf_mu(roof, ones, base, 1.0, 1);
    REQUIRE(c.defined);
    CHECK(c.normalizer == "mu");
    CHECK(close(c.scale, 0.5, 1e-15));
    REQUIRE(c.cdf.position.size() == 2);
    CHECK(close(c.cdf.position[0], -1.0, 1e-15));
    CHECK(close(c.cdf.position[1], 1.0, 1e-15));
    CHECK(c.cdf.cumulative[0] == 0.5);
    CHECK(c.cdf.cumulative[1] == 1.0);
  }

  SUBCASE("two symmetric draws merge the middle step") {
    const CltCurve c = clt_cdf_mu(roof, ones, base, 1.0, 2);
    REQUIRE(c.defined);
    REQUIRE(c.cdf.position.size() == 3);
    const double r2 = std::sqrt(2.0);
    CHECK(close(c.cdf.position[0], -r2, 1e-14));
    CHECK(close(c.cdf.position[1], 0.0, 1e-14));
    CHECK(close(c.cdf.position[2], r2, 1e-14));
    CHECK(c.cdf.cumulative[0] == 0.25);
    CHECK(c.cdf.cumulative[1] == 0.75);
    CHECK(c.cdf.cumulative[2] == 1.0);
  }

  SUBCASE("exact convolution matches brute enumeration") {
    auto base3 = two_atom_base(roof, "0", "01", 0.2, 0.3);
    base3.atoms.push_back(make_cycle(roof, "1"));
    base3.weights.push_back(0.5);
    base3.log_weights.push_back(std::log(0.5));
    const double T = 2.0;
    const long long k = 3;
    std::vector<double> F(3);
    for (std::size_t i = 0; i < 3; ++i) {
      OrbitFn o{&roof, &ones, base3.atoms[i].rotated_word()};
      F[i] = o.at(0.0, T);
    }
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < 3; ++i) mean += base3.weights[i] * F[i];
    for (std::size_t i = 0; i < 3; ++i)
      var += base3.weights[i] * (F[i] - mean) * (F[i] - mean);
    const double scale = std::sqrt(3.0 * var);
    std::vector<std::pair<double, double>> vw;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t l = 0; l < 3; ++l)
          vw.push_back({((F[i] + F[j]) + F[l] - 3.0 * mean) / scale,
                        base3.weights[i] * base3.weights[j] * base3.weights[l]});
    const StepOracle so = cluster_steps(std::move(vw), 0.0);
    const CltCurve c = clt_cdf_mu(roof, ones, base3, T, k);
    REQUIRE(c.defined);
    REQUIRE(c.cdf.position.size() == so.pos.size());
    for (std::size_t i = 0; i < so.pos.size(); ++i) {
      CHECK(close(c.cdf.position[i], so.pos[i], 1e-12));
      CHECK(close(c.cdf.cumulative[i], so.cum[i], 1e-12));
    }
    CHECK(close(c.ks, step_ks_oracle(so), 1e-9));
  }

  SUBCASE("sampling approximates the exact curve") {
    const CltCurve exact = clt_cdf_mu(roof, ones, base, 1.0, 4);
    const CltCurve sampled = clt_cdf_mu(roof, ones, base, 1.0, 4, 1, 20000, 9, 1);
    REQUIRE(sampled.defined);
    for (double x : {-1.5, -0.5, 0.0, 0.5, 1.5})
      CHECK(close(sampled.cdf.eval(x), exact.cdf.eval(x), 0.03));
    CHECK(close(sampled.ks, exact.ks, 0.03));
  }

  SUBCASE("flags and validation") {
    auto flat = const_obs(sys, "flat", 1, {0.3, 0.3});
    const CltCurve c = clt_cdf_mu(roof, flat, base, 1.0, 2);
    CHECK(!c.defined);
    CHECK(c.scale == 0.0);
    CHECK(c.ks == 1.0);
    CHECK(thrown_code([&] { (void)clt_cdf_mu(roof, ones, base, 1.0, 0); }) ==
          ErrorCode::BadConfig);
    CHECK(thrown_code([&] { (void)clt_cdf_mu(roof, ones, base, 0.0, 2); }) ==
          ErrorCode::BadConfig);
  }
}

TEST_CASE("dynamic variance series") {
  auto sys = SymbolicSystem::full_shift(2);
  auto roof = RoofFunction::constant(sys, 1.0);
  auto ones = const_obs(sys, "ones", 1, {0.0, 1.0});
  auto base = two_atom_base(roof, "0", "1", 0.5, 0.5);

  std::vector<DiscreteMeasure> ms{base, base, base, base};
  std::vector<double> T{1.0, 2.0, 3.0, 4.0};
  const DynVarianceSeries dv = dyn_variance_series(roof, ones, ms, T);
  REQUIRE(dv.values.size() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(close(dv.values[i], T[i] / 4.0, 1e-12));  // Var = T^2/4
  CHECK(close(dv.liminf_estimate, 0.75, 1e-12));    // min over the tail half
  CHECK(dv.positive);

  auto flat = const_obs(sys, "flat", 1, {0.4, 0.4});
  const DynVarianceSeries dz = dyn_variance_series(roof, flat, ms, T);
  for (double v : dz.values) CHECK(v == 0.0);
  CHECK(dz.liminf_estimate == 0.0);
  CHECK(!dz.positive);

  CHECK(thrown_code([&] {
          (void)dyn_variance_series(roof, ones, std::span<const DiscreteMeasure>{},
                                    std::span<const double>{});
        }) == ErrorCode::BadConfig);
  std::vector<double> bad{1.0};
  CHECK(thrown_code([&] { (void)dyn_variance_series(roof, ones, ms, bad); }) ==
        ErrorCode::BadConfig);
}

TEST_CASE("variation estimate over regular orbits") {
  auto sys = SymbolicSystem::full_shift(2);
  auto roof = RoofFunction::constant(sys, 1.0);
  auto reg = ones_lambda(sys);
  auto ones = const_obs(sys, "ones", 1, {0.0, 1.0});

  const VariationEstimate none =
      variation_estimate(sys, roof, reg, ones, 0.25, 4.0, 0.25, 0);
  CHECK(none.no_data);

  auto flat = const_obs(sys, "flat", 1, {0.9, 0.9});
  const VariationEstimate fz =
      variation_estimate(sys, roof, reg, flat, 0.25, 4.0, 0.25, 32);
  CHECK(!fz.no_data);
  CHECK(fz.value <= 1e-14);  // two window decompositions, ulp-level residue

  const double d0 = 0.25, T = 4.0;
  const VariationEstimate ve =
      variation_estimate(sys, roof, reg, ones, 0.25, T, d0, 64);
  CHECK(!ve.no_data);
  CHECK(ve.value > 0.0);
  CHECK(ve.value <= 2.0 * d0 * ones.sup_norm / T + 1e-12);

  const VariationEstimate wide =
      variation_estimate(sys, roof, reg, ones, 0.25, 2.0 * T, d0, 64);
  CHECK(wide.value <= 2.0 * d0 * ones.sup_norm / (2.0 * T) + 1e-12);

  CHECK(thrown_code([&] {
          (void)variation_estimate(sys, roof, reg, ones, 0.25, 0.0, d0, 4);
        }) == ErrorCode::BadConfig);
  CHECK(thrown_code([&] {
          (void)variation_estimate(sys, roof, reg, ones, 0.25, T, 0.0, 4);
        }) == ErrorCode::BadConfig);
}

TEST_CASE("sampled atoms report standard errors") {
  MicroInstance mi;
  BlockStatParams params;
  params.entry = mi.entry;
  params.gammas = {0.3};

  const BlockStatistics exact =
      block_statistics(mi.sys, mi.roof, mi.f, mi.nu, params);
  REQUIRE(exact.variances.se_sum_variance == 0.0);

  auto nus = nu_measure(mi.sys, mi.roof, mi.base, 2, 4, 1.0, 3.5, 2, 3000, 11, 2);
  REQUIRE(!nus.tuples.exact);
  REQUIRE(nus.tuples.count() == 3000);
  const BlockStatistics bs =
      block_statistics(mi.sys, mi.roof, mi.f, nus, params);
  CHECK(bs.fast_path);
  CHECK(bs.atoms_used == 3000);
  CHECK(bs.variances.se_block_variance_sum > 0.0);
  CHECK(bs.variances.se_sum_variance > 0.0);
  CHECK(bs.variances.se_segment_variance > 0.0);
  CHECK(close(bs.variances.sum_variance, exact.variances.sum_variance,
              6.0 * bs.variances.se_sum_variance + 1e-9));
  CHECK(close(bs.variances.segment_variance, exact.variances.segment_variance,
              6.0 * bs.variances.se_segment_variance + 1e-9));
  CHECK(close(bs.variances.block_variance_sum,
              exact.variances.block_variance_sum,
              6.0 * bs.variances.se_block_variance_sum + 1e-9));
}
