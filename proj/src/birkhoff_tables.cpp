#include "birkhoff_tables.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "lindlab/errors.hpp"

namespace lindlab::detail {

double cyclic_table_value(const WordTable& table, std::span<const Symbol> word,
                          std::size_t pos) {
  const std::size_t L = word.size();
  std::size_t code = 0;
  for (int i = 0; i < table.depth; ++i)
    code = code * static_cast<std::size_t>(table.alphabet) +
           word[(pos + i) % L];
  return table.at_code(code);
}

const Poly& cyclic_profile(const Observable& f, int alphabet,
                           std::span<const Symbol> word, std::size_t pos) {
  const std::size_t L = word.size();
  std::size_t code = 0;
  for (int i = 0; i < f.depth; ++i)
    code = code * static_cast<std::size_t>(alphabet) + word[(pos + i) % L];
  return f.profile[code];
}

OrbitCumulative build_orbit_cumulative(const RoofFunction& roof,
                                       const Observable& f,
                                       std::span<const Symbol> loop) {
  const std::size_t L = loop.size();
  assert(L > 0);
  OrbitCumulative oc;
  oc.brk.resize(L + 1);
  oc.cum.resize(L + 1);
  oc.value.resize(L);
  oc.anti.resize(L);
  double t = 0.0, acc = 0.0;
  const int alphabet = roof.table().alphabet;
  for (std::size_t i = 0; i < L; ++i) {
    oc.brk[i] = t;
    oc.cum[i] = acc;
    const double r = cyclic_table_value(roof.table(), loop, i);
    std::size_t code = 0;
    for (int j = 0; j < f.depth; ++j)
      code = code * static_cast<std::size_t>(alphabet) + loop[(i + j) % L];
    // profile is a poly in u = h / roof; compose with h = s to get time units
    const Poly composed = f.profile[code].scaled(1.0 / r);
    oc.value[i] = composed;
    oc.anti[i] = composed.antiderivative();
    t += r;
    acc += oc.anti[i].eval(r);
  }
  oc.brk[L] = t;
  oc.cum[L] = acc;
  oc.period = t;
  oc.loop_integral = acc;
  return oc;
}

double OrbitCumulative::c(double u) const {
  assert(u >= -1e-12);
  if (u < 0) u = 0;
  double loops = std::floor(u / period);
  double rem = u - loops * period;
  if (rem >= period) {  // floating fence at exact multiples
    loops += 1.0;
    rem -= period;
    if (rem < 0) rem = 0;
  }
  const auto it = std::upper_bound(brk.begin(), brk.end(), rem);
  std::size_t i = it == brk.begin() ? 0 : (it - brk.begin()) - 1;
  if (i >= value.size()) i = value.size() - 1;
  return loops * loop_integral + cum[i] + anti[i].eval(rem - brk[i]);
}

namespace {

// Times t in (0, len) at which offset + t crosses the extended grid
// {brk[i] + m * period}; appended to out.
void grid_crossings(const OrbitCumulative& oc, double offset, double len,
                    std::vector<double>& out) {
  const double P = oc.period;
  double loops = std::floor(offset / P);
  double rem = offset - loops * P;
  if (rem >= P) {
    loops += 1.0;
    rem -= P;
    if (rem < 0) rem = 0;
  }
  std::size_t idx =
      std::upper_bound(oc.brk.begin(), oc.brk.end(), rem) - oc.brk.begin();
  // next grid time strictly above offset
  const double tol = 1e-12 * std::max(1.0, std::fabs(offset) + len);
  while (true) {
    if (idx >= oc.brk.size()) {
      loops += 1.0;
      idx = 1;  // brk[0] + (loops)P equals brk[L] + (loops-1)P, already seen
    }
    const double t = loops * P + oc.brk[idx] - offset;
    if (t >= len - tol) break;
    if (t > tol) out.push_back(t);
    ++idx;
  }
}

// Poly in s = t - t0 representing c(t + offset) for t in a cell where
// t0 + offset lies inside one roof fiber.
Poly cumulative_piece(const OrbitCumulative& oc, double offset, double t0) {
  const double P = oc.period;
  const double u = offset + t0;
  double loops = std::floor(u / P);
  double rem = u - loops * P;
  if (rem >= P) {
    loops += 1.0;
    rem -= P;
    if (rem < 0) rem = 0;
  }
  const auto it = std::upper_bound(oc.brk.begin(), oc.brk.end(), rem);
  std::size_t i = it == oc.brk.begin() ? 0 : (it - oc.brk.begin()) - 1;
  if (i >= oc.value.size()) i = oc.value.size() - 1;
  Poly p = oc.anti[i].shifted(rem - oc.brk[i]);
  p.c[0] += loops * oc.loop_integral + oc.cum[i];
  return p;
}

std::vector<double> merged_grid(const OrbitCumulative& oc,
                                std::span<const double> offsets, double len) {
  std::vector<double> cuts;
  cuts.push_back(0.0);
  for (double off : offsets) grid_crossings(oc, off, len, cuts);
  cuts.push_back(len);
  std::sort(cuts.begin(), cuts.end());
  const double tol = 1e-12 * std::max(1.0, len);
  std::vector<double> brk;
  for (double c : cuts)
    if (brk.empty() || c - brk.back() > tol) brk.push_back(c);
  if (brk.size() < 2) brk = {0.0, len};
  brk.back() = len;
  return brk;
}

}  // namespace

PiecewiseFn window_fn(const OrbitCumulative& oc, double a, double b,
                      double len) {
  assert(b >= a && a >= -1e-12 && len > 0);
  PiecewiseFn out;
  const double offs[2] = {a, b};
  out.brk = merged_grid(oc, offs, len);
  out.piece.resize(out.brk.size() - 1);
  for (std::size_t i = 0; i + 1 < out.brk.size(); ++i) {
    const double t0 = out.brk[i];
    const double mid = 0.5 * (t0 + out.brk[i + 1]);
    // anchor both cumulative pieces at t0, evaluated via the cell midpoint
    Poly hi = cumulative_piece(oc, b, mid).shifted(t0 - mid);
    Poly lo = cumulative_piece(oc, a, mid).shifted(t0 - mid);
    hi.add_scaled(lo, -1.0);
    out.piece[i] = hi;
  }
  return out;
}

PiecewiseFn cumulative_fn(const OrbitCumulative& oc, double a, double len) {
  assert(a >= -1e-12 && len > 0);
  PiecewiseFn out;
  const double offs[1] = {a};
  out.brk = merged_grid(oc, offs, len);
  out.piece.resize(out.brk.size() - 1);
  for (std::size_t i = 0; i + 1 < out.brk.size(); ++i) {
    const double t0 = out.brk[i];
    const double mid = 0.5 * (t0 + out.brk[i + 1]);
    out.piece[i] = cumulative_piece(oc, a, mid).shifted(t0 - mid);
  }
  return out;
}

}  // namespace lindlab::detail
