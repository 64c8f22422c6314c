#include "lindlab/measures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "birkhoff_tables.hpp"
#include "lindlab/errors.hpp"
#include "lindlab/kernels.hpp"
#include "lindlab/util.hpp"

namespace lindlab {

DiscreteMeasure uniform_measure(const CensusWindow& window) {
  const std::size_t n = window.members.size();
  if (n == 0) fail(ErrorCode::EmptyWindow, "no regular cycles to weight");
  DiscreteMeasure m;
  m.atoms = window.members;
  const double dn = static_cast<double>(n);
  m.weights.assign(n, 1.0 / dn);
  m.log_weights.assign(n, -std::log(dn));
  m.log_normalizer = std::log(dn);
  return m;
}

DiscreteMeasure gibbs_weighted_measure(const SymbolicSystem& sys,
                                       const RoofFunction& roof,
                                       const CensusWindow& window,
                                       const Observable& phi, double T) {
  (void)sys;
  const std::size_t n = window.members.size();
  if (n == 0) fail(ErrorCode::EmptyWindow, "no regular cycles to weight");
  if (T <= 0) fail(ErrorCode::BadConfig, "weighting horizon must be positive");
  DiscreteMeasure m;
  m.atoms = window.members;
  std::vector<double> b(n);
  for (std::size_t i = 0; i < n; ++i)
    b[i] = birkhoff_integral(roof, phi, window.members[i].base_point(), 0.0, T);
  const double bmax = *std::max_element(b.begin(), b.end());
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::exp(b[i] - bmax);
  const double z = kernels::sum(e);
  const double logz = std::log(z);
  m.weights.resize(n);
  m.log_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.weights[i] = e[i] / z;
    m.log_weights[i] = b[i] - bmax - logz;
  }
  m.log_normalizer = bmax + logz;
  return m;
}

TupleSet product_tuples(const DiscreteMeasure& base, long long k,
                        long long exact_cap, long long sample_count,
                        std::uint64_t seed, std::uint64_t stream) {
  const long long n = static_cast<long long>(base.atoms.size());
  if (n == 0) fail(ErrorCode::EmptyWindow, "empty base measure");
  if (k < 1) fail(ErrorCode::BadConfig, "tuple arity must be >= 1");
  if (exact_cap < 1) fail(ErrorCode::BadConfig, "exact_cap must be >= 1");
  if (sample_count < 1) fail(ErrorCode::BadConfig, "sample_count must be >= 1");

  TupleSet ts;
  ts.arity = k;
  long long total = 1;
  bool exact = true;
  for (long long i = 0; i < k && exact; ++i) {
    if (total > exact_cap / n)
      exact = false;
    else
      total *= n;
  }
  ts.exact = exact;

  if (exact) {
    const std::size_t count = static_cast<std::size_t>(total);
    ts.flat.resize(static_cast<std::size_t>(k) * count);
    ts.weights.resize(count);
    std::vector<std::int32_t> idx(static_cast<std::size_t>(k), 0);
    for (std::size_t j = 0; j < count; ++j) {
      double w = 1.0;
      for (long long p = 0; p < k; ++p) {
        ts.flat[static_cast<std::size_t>(k) * j + p] = idx[p];
        w *= base.weights[idx[p]];
      }
      ts.weights[j] = w;
      for (long long p = k - 1; p >= 0; --p) {
        if (++idx[p] < n) break;
        idx[p] = 0;
      }
    }
    return ts;
  }

  std::vector<double> cum(n);
  double mass = 0.0;
  for (long long i = 0; i < n; ++i) {
    mass += base.weights[i];
    cum[i] = mass;
  }
  const std::size_t count = static_cast<std::size_t>(sample_count);
  ts.flat.resize(static_cast<std::size_t>(k) * count);
  ts.weights.assign(count, 1.0 / static_cast<double>(sample_count));
  for (std::size_t j = 0; j < count; ++j) {
    auto rng = make_rng(seed, stream, j);
    for (long long p = 0; p < k; ++p) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      auto it = std::upper_bound(cum.begin(), cum.end(), u * mass);
      long long i = it - cum.begin();
      if (i >= n) i = n - 1;
      ts.flat[static_cast<std::size_t>(k) * j + p] =
          static_cast<std::int32_t>(i);
    }
  }
  return ts;
}

const TransitionWord& OrbitSegmentMeasure::bridge(std::int32_t from,
                                                  std::int32_t to) const {
  const std::pair<std::int32_t, std::int32_t> key{from, to};
  auto it = std::lower_bound(pair_index.begin(), pair_index.end(), key);
  if (it == pair_index.end() || *it != key)
    fail(ErrorCode::BadConfig, "bridge pair was never memoized");
  return pair_bridge[it - pair_index.begin()];
}

OrbitSegmentMeasure nu_measure(const SymbolicSystem& sys,
                               const RoofFunction& roof,
                               const DiscreteMeasure& base, long long k, int C,
                               double M, double T, long long exact_cap,
                               long long sample_count, std::uint64_t seed,
                               std::uint64_t stream, double tol) {
  if (base.atoms.empty()) fail(ErrorCode::EmptyWindow, "empty base measure");
  if (k < 1) fail(ErrorCode::BadConfig, "block count must be >= 1");
  if (C < 1) fail(ErrorCode::BadConfig, "loop count must be >= 1");
  if (M <= 0) fail(ErrorCode::BadConfig, "transition time must be positive");
  if (T <= 0) fail(ErrorCode::BadConfig, "window top must be positive");
  if (tol <= 0) fail(ErrorCode::BadConfig, "tolerance must be positive");

  OrbitSegmentMeasure nu;
  nu.base = base;
  nu.tuples = product_tuples(base, k, exact_cap, sample_count, seed, stream);
  nu.loops = C;
  nu.transition_time = M;
  nu.window_top = T;
  nu.segment = static_cast<double>(k) * (C * T + M);
  nu.glue_tol = tol;

  std::vector<std::pair<std::int32_t, std::int32_t>> pairs;
  pairs.reserve(nu.tuples.count() * static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < nu.tuples.count(); ++j) {
    auto t = nu.tuples.tuple(j);
    for (std::size_t p = 0; p < t.size(); ++p)
      pairs.emplace_back(t[p], t[(p + 1) % t.size()]);
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  nu.pair_index = std::move(pairs);

  nu.pair_bridge.reserve(nu.pair_index.size());
  double worst = 0.0;
  for (const auto& [a, b] : nu.pair_index) {
    const double target = C * (T - base.atoms[a].flow_period) + M;
    nu.pair_bridge.push_back(find_transition_word(
        sys, roof, base.atoms[a], base.atoms[b], target, tol));
    worst = std::max(worst, std::fabs(nu.pair_bridge.back().residual));
  }
  nu.worst_residual = worst;
  nu.closure_exact = worst <= tol;
  return nu;
}

GluedPoint realize_atom(const SymbolicSystem& sys, const RoofFunction& roof,
                        const OrbitSegmentMeasure& nu, std::size_t atom) {
  if (atom >= nu.tuples.count())
    fail(ErrorCode::BadConfig, "atom index out of range");
  auto t = nu.tuples.tuple(atom);
  std::vector<Cycle> comps;
  comps.reserve(t.size());
  for (auto i : t) comps.push_back(nu.base.atoms[i]);
  return glue(sys, roof, comps, nu.loops, nu.transition_time, nu.window_top,
              nu.glue_tol);
}

namespace {

// Depth-d reads from inside the first block never leave it when the block is
// long enough: T plus the worst lookahead fits in C least periods.
bool first_block_margin(const RoofFunction& roof, const Observable& f,
                        const OrbitSegmentMeasure& nu) {
  const double look = (f.depth - 1) * roof.max();
  for (const Cycle& c : nu.base.atoms)
    if (nu.window_top + look > nu.loops * c.flow_period) return false;
  return true;
}

IntegralEstimate reduce_atoms(const TupleSet& tuples,
                              std::span<const double> v) {
  IntegralEstimate est;
  est.sampled = !tuples.exact;
  est.value = kernels::dot(tuples.weights, v);
  if (est.sampled) {
    const double var = kernels::moment2(v, tuples.weights, est.value);
    est.se =
        std::sqrt(std::max(0.0, var) / static_cast<double>(tuples.count()));
  }
  return est;
}

}  // namespace

IntegralEstimate integrate(const SymbolicSystem& sys, const RoofFunction& roof,
                           const Observable& f,
                           const OrbitSegmentMeasure& nu) {
  const std::size_t count = nu.tuples.count();
  const double T = nu.window_top;
  std::vector<double> v(count);
  if (first_block_margin(roof, f, nu)) {
    std::vector<double> per_base(nu.base.atoms.size());
    for (std::size_t i = 0; i < nu.base.atoms.size(); ++i) {
      const Word w = nu.base.atoms[i].rotated_word();
      per_base[i] = detail::build_orbit_cumulative(roof, f, w).c(T) / T;
    }
    for (std::size_t j = 0; j < count; ++j)
      v[j] = per_base[nu.tuples.tuple(j)[0]];
  } else {
    for (std::size_t j = 0; j < count; ++j) {
      const GluedPoint g = realize_atom(sys, roof, nu, j);
      v[j] = birkhoff_integral(roof, f, g.realized_sequence, 0.0, T) / T;
    }
  }
  return reduce_atoms(nu.tuples, v);
}

IntegralEstimate integrate_window(const SymbolicSystem& sys,
                                  const RoofFunction& roof, const Observable& f,
                                  const OrbitSegmentMeasure& nu, double s,
                                  double u) {
  if (s > u) fail(ErrorCode::BadConfig, "window start exceeds window end");
  if (s < 0.0 || u > nu.segment + 1e-9)
    fail(ErrorCode::WindowOutOfRange, "window [" + fmt17(s) + ", " + fmt17(u) +
                                          "] leaves [0, " + fmt17(nu.segment) +
                                          "]");
  const std::size_t count = nu.tuples.count();
  std::vector<double> v(count);
  for (std::size_t j = 0; j < count; ++j) {
    const GluedPoint g = realize_atom(sys, roof, nu, j);
    v[j] = birkhoff_integral(roof, f, g.realized_sequence, s, u);
  }
  return reduce_atoms(nu.tuples, v);
}

namespace {

struct TransferOperator {
  int m = 0;
  std::vector<std::vector<int>> succ;
  std::vector<double> r;     // roof value per state
  std::vector<double> dphi;  // fiber integral of the potential per state
};

// Leading eigenvalue of diag(exp(dphi - P r)) * overlap adjacency by power
// iteration; h returns the (l1-normalized) eigenvector on the requested side.
double leading_eigen(const TransferOperator& op, double P,
                     std::vector<double>& h, bool transpose) {
  const int m = op.m;
  std::vector<double> wrow(m);
  for (int v = 0; v < m; ++v) wrow[v] = std::exp(op.dphi[v] - P * op.r[v]);
  h.assign(m, 1.0 / m);
  std::vector<double> nh(m);
  for (int it = 0; it < 20000; ++it) {
    if (!transpose) {
      for (int v = 0; v < m; ++v) {
        double a = 0.0;
        for (int w : op.succ[v]) a += h[w];
        nh[v] = wrow[v] * a;
      }
    } else {
      std::fill(nh.begin(), nh.end(), 0.0);
      for (int v = 0; v < m; ++v) {
        const double x = wrow[v] * h[v];
        for (int w : op.succ[v]) nh[w] += x;
      }
    }
    double s = 0.0;
    for (int v = 0; v < m; ++v) s += nh[v];
    if (!(s > 0.0))
      fail(ErrorCode::NonConvergence, "transfer operator lost positivity");
    double diff = 0.0;
    for (int v = 0; v < m; ++v) {
      nh[v] /= s;
      diff = std::max(diff, std::fabs(nh[v] - h[v]));
    }
    h.swap(nh);
    if (diff < 1e-15) return s;
  }
  fail(ErrorCode::NonConvergence, "transfer power iteration stalled");
}

// P with leading eigenvalue 1; log-eigenvalue is strictly decreasing in P.
double solve_pressure(const TransferOperator& op) {
  std::vector<double> h;
  auto logeig = [&](double P) { return std::log(leading_eigen(op, P, h, false)); };
  double f0 = logeig(0.0);
  if (f0 == 0.0) return 0.0;
  double lo, hi;
  if (f0 > 0.0) {
    lo = 0.0;
    hi = 1.0;
    int guard = 0;
    while (logeig(hi) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (++guard > 200)
        fail(ErrorCode::NonConvergence, "pressure bracket diverged");
    }
  } else {
    hi = 0.0;
    lo = -1.0;
    int guard = 0;
    while (logeig(lo) < 0.0) {
      hi = lo;
      lo *= 2.0;
      if (++guard > 200)
        fail(ErrorCode::NonConvergence, "pressure bracket diverged");
    }
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo < 1e-15 * std::max(1.0, std::fabs(mid))) break;
    if (logeig(mid) >= 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

ReferenceMeasure build_reference(const SymbolicSystem& sys,
                                 const RoofFunction& roof,
                                 const Observable* phi) {
  ReferenceMeasure ref;
  ref.kind = phi ? ReferenceKind::Equilibrium : ReferenceKind::MaxEntropy;
  int D = roof.depth();
  if (phi) D = std::max(D, phi->depth);
  ref.depth = D;
  ref.states = admissible_words(sys, D);
  const int m = static_cast<int>(ref.states.size());
  const int alpha = sys.alphabet();

  std::size_t codes = 1;
  for (int i = 0; i < D; ++i) codes *= static_cast<std::size_t>(alpha);
  std::vector<int> code_to_state(codes, -1);
  for (int i = 0; i < m; ++i)
    code_to_state[word_code(ref.states[i], alpha)] = i;

  TransferOperator op;
  op.m = m;
  op.succ.resize(m);
  op.r.resize(m);
  op.dphi.assign(m, 0.0);
  for (int v = 0; v < m; ++v) {
    const Word& sw = ref.states[v];
    op.r[v] = roof.table().at({sw.data(), static_cast<std::size_t>(roof.depth())});
    if (phi) {
      const std::size_t pc = word_code(
          {sw.data(), static_cast<std::size_t>(phi->depth)}, alpha);
      op.dphi[v] = op.r[v] * phi->profile[pc].antiderivative().eval(1.0);
    }
    for (int a = 0; a < alpha; ++a) {
      if (D == 1) {
        if (sys.allowed(sw[0], static_cast<Symbol>(a)))
          op.succ[v].push_back(code_to_state[static_cast<std::size_t>(a)]);
      } else {
        std::size_t c2 = 0;
        for (int i = 1; i < D; ++i)
          c2 = c2 * static_cast<std::size_t>(alpha) + sw[i];
        c2 = c2 * static_cast<std::size_t>(alpha) + static_cast<std::size_t>(a);
        const int t = code_to_state[c2];
        if (t >= 0) op.succ[v].push_back(t);
      }
    }
  }

  const double P = solve_pressure(op);
  std::vector<double> h, l;
  const double lambda = leading_eigen(op, P, h, false);
  leading_eigen(op, P, l, true);

  ref.kernel.assign(static_cast<std::size_t>(m) * m, 0.0);
  for (int v = 0; v < m; ++v) {
    const double wrow = std::exp(op.dphi[v] - P * op.r[v]);
    double rowsum = 0.0;
    for (int w : op.succ[v]) {
      const double kk = wrow * h[w] / (lambda * h[v]);
      ref.kernel[static_cast<std::size_t>(v) * m + w] = kk;
      rowsum += kk;
    }
    for (int w : op.succ[v])
      ref.kernel[static_cast<std::size_t>(v) * m + w] /= rowsum;
  }

  ref.stationary.resize(m);
  double mass = 0.0;
  for (int v = 0; v < m; ++v) {
    ref.stationary[v] = l[v] * h[v];
    mass += ref.stationary[v];
  }
  for (int v = 0; v < m; ++v) ref.stationary[v] /= mass;

  double res = 0.0;
  for (int w = 0; w < m; ++w) {
    double a = 0.0;
    for (int v = 0; v < m; ++v)
      a += ref.stationary[v] * ref.kernel[static_cast<std::size_t>(v) * m + w];
    res = std::max(res, std::fabs(a - ref.stationary[w]));
  }
  ref.stationarity_residual = res;
  ref.pressure = P;
  ref.mean_roof = 0.0;
  for (int v = 0; v < m; ++v) ref.mean_roof += ref.stationary[v] * op.r[v];
  return ref;
}

}  // namespace

ReferenceMeasure reference_measure(const SymbolicSystem& sys,
                                   const RoofFunction& roof) {
  return build_reference(sys, roof, nullptr);
}

ReferenceMeasure reference_measure(const SymbolicSystem& sys,
                                   const RoofFunction& roof,
                                   const Observable& phi) {
  return build_reference(sys, roof, &phi);
}

double reference_integral(const SymbolicSystem& sys, const RoofFunction& roof,
                          const ReferenceMeasure& ref, const Observable& f) {
  const int D = ref.depth;
  const int ext = std::max(D, f.depth);
  const int alpha = sys.alphabet();
  const int m = static_cast<int>(ref.states.size());

  std::size_t codes = 1;
  for (int i = 0; i < D; ++i) codes *= static_cast<std::size_t>(alpha);
  std::vector<int> code_to_state(codes, -1);
  for (int i = 0; i < m; ++i)
    code_to_state[word_code(ref.states[i], alpha)] = i;

  double num = 0.0, den = 0.0;
  for (const Word& w : admissible_words(sys, ext)) {
    int prev = code_to_state[word_code(
        {w.data(), static_cast<std::size_t>(D)}, alpha)];
    double p = ref.stationary[prev];
    for (int i = 1; i + D <= ext; ++i) {
      const int nxt = code_to_state[word_code(
          {w.data() + i, static_cast<std::size_t>(D)}, alpha)];
      p *= ref.kernel[static_cast<std::size_t>(prev) * m + nxt];
      prev = nxt;
    }
    const double r =
        roof.table().at({w.data(), static_cast<std::size_t>(roof.depth())});
    const std::size_t fc =
        word_code({w.data(), static_cast<std::size_t>(f.depth)}, alpha);
    num += p * r * f.profile[fc].antiderivative().eval(1.0);
    den += p * r;
  }
  return num / den;
}

std::vector<DeviationRow> compare_to_reference(const SymbolicSystem& sys,
                                               const RoofFunction& roof,
                                               const OrbitSegmentMeasure& nu,
                                               const ReferenceMeasure& ref,
                                               std::span<const Observable> fs) {
  std::vector<DeviationRow> rows;
  rows.reserve(fs.size());
  for (const Observable& f : fs) {
    const IntegralEstimate est = integrate(sys, roof, f, nu);
    DeviationRow row;
    row.observable = f.name;
    row.measured = est.value;
    row.reference = reference_integral(sys, roof, ref, f);
    row.deviation = est.value - row.reference;
    row.se = est.se;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace lindlab
