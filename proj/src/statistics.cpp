#include "lindlab/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>
#include <utility>

#include "birkhoff_tables.hpp"
#include "lindlab/errors.hpp"
#include "lindlab/kernels.hpp"
#include "lindlab/util.hpp"

namespace lindlab {

double normal_cdf(double a) {
  return 0.5 * std::erfc(-a * 0.7071067811865475244008443621048490);
}

double EmpiricalCdf::eval(double a) const {
  if (position.empty()) return 0.0;
  auto it = std::upper_bound(position.begin(), position.end(), a);
  if (it == position.begin()) return 0.0;
  std::size_t i = static_cast<std::size_t>(it - position.begin()) - 1;
  if (!continuous) return cumulative[i];
  if (i + 1 == position.size()) return cumulative.back();
  const double span = position[i + 1] - position[i];
  const double frac = span > 0 ? (a - position[i]) / span : 0.0;
  return cumulative[i] + frac * (cumulative[i + 1] - cumulative[i]);
}

double ks_to_normal(const EmpiricalCdf& cdf) {
  double ks = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < cdf.position.size(); ++i) {
    const double phi = normal_cdf(cdf.position[i]);
    if (!cdf.continuous) ks = std::max(ks, std::abs(prev - phi));
    ks = std::max(ks, std::abs(cdf.cumulative[i] - phi));
    prev = cdf.cumulative[i];
  }
  return ks;
}

double lindeberg_function(std::span<const double> values,
                          std::span<const double> weights, double c) {
  if (values.size() != weights.size() || values.empty())
    fail(ErrorCode::BadConfig, "lindeberg_function: mismatched value/weight arrays");
  if (!(c >= 0)) fail(ErrorCode::BadConfig, "lindeberg_function: threshold must be >= 0");
  const double total = kernels::sum(weights);
  if (!(total > 0)) fail(ErrorCode::BadConfig, "lindeberg_function: zero total mass");
  const double mean = kernels::dot(values, weights) / total;
  return kernels::moment2_tail(values, weights, mean, c);
}

namespace {

using detail::OrbitCumulative;

constexpr double kProbeLo = -6.0;
constexpr double kProbeHi = 6.0;
constexpr int kProbeCount = 481;  // spacing 0.025

double probe_at(int i) {
  return kProbeLo + (kProbeHi - kProbeLo) * i / (kProbeCount - 1);
}

// Parallel fill of disjoint index ranges. Every cell is computed from shared
// read-only inputs and reduced later in fixed order, so results do not
// depend on the worker count.
void run_chunks(std::size_t n, int workers,
                const std::function<void(std::size_t, std::size_t)>& chunk) {
  if (workers <= 1 || n < 2) {
    chunk(0, n);
    return;
  }
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    const std::size_t lo = n * t / w;
    const std::size_t hi = n * (t + 1) / w;
    pool.emplace_back([&chunk, lo, hi] { chunk(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

PiecewiseFn zero_fn(double len) {
  PiecewiseFn g;
  g.brk = {0.0, len};
  g.piece = {Poly::constant(0.0)};
  return g;
}

// Integral of a * b over the shared domain, exact on the merged grid.
double pair_integral(const PiecewiseFn& a, const PiecewiseFn& b) {
  double total = 0.0;
  double t = a.brk.front();
  std::size_t ia = 0, ib = 0;
  while (ia + 1 < a.brk.size() && ib + 1 < b.brk.size()) {
    const double end = std::min(a.brk[ia + 1], b.brk[ib + 1]);
    if (end > t) {
      const Poly pa = a.piece[ia].shifted(t - a.brk[ia]);
      const Poly pb = b.piece[ib].shifted(t - b.brk[ib]);
      total += pa.times(pb).antiderivative().eval(end - t);
      t = end;
    }
    if (a.brk[ia + 1] <= end) ++ia;
    if (b.brk[ib + 1] <= end) ++ib;
  }
  return total;
}

PiecewiseFn fn_difference(const PiecewiseFn& a, PiecewiseFn b) {
  for (auto& p : b.piece) p.negate();
  const std::array<PiecewiseFn, 2> parts{a, std::move(b)};
  return piecewise_sum(parts);
}

// Right-continuous step CDF; exactly equal values merge into one step.
EmpiricalCdf step_cdf(std::span<const double> value,
                      std::span<const double> weight) {
  std::vector<std::size_t> order(value.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (value[x] != value[y]) return value[x] < value[y];
    return x < y;
  });
  const double total = kernels::sum(weight);
  EmpiricalCdf cdf;
  cdf.continuous = false;
  double acc = 0.0;
  for (std::size_t idx : order) {
    acc += weight[idx];
    if (!cdf.position.empty() && cdf.position.back() == value[idx]) {
      cdf.cumulative.back() = acc / total;
    } else {
      cdf.position.push_back(value[idx]);
      cdf.cumulative.push_back(acc / total);
    }
  }
  return cdf;
}

// Deviations scaled by a normalizer into a CLT curve. A nonpositive scale
// with identically zero deviations is the lawful point mass at 0 (single
// atom, exactly constant functional) and keeps a defined curve; nonzero
// deviations without a scale stay undefined.
CltCurve step_curve(const char* label, std::span<const double> dev,
                    std::span<const double> weight, double scale,
                    double mean_scale) {
  CltCurve curve;
  curve.normalizer = label;
  curve.scale = scale;
  if (scale > 0) {
    std::vector<double> v(dev.size());
    for (std::size_t i = 0; i < dev.size(); ++i) v[i] = dev[i] / scale;
    curve.cdf = step_cdf(v, weight);
    curve.ks = ks_to_normal(curve.cdf);
    curve.defined = true;
    return curve;
  }
  double maxdev = 0.0;
  for (double d : dev) maxdev = std::max(maxdev, std::abs(d));
  if (maxdev <= 1e-9 * std::max(1.0, std::abs(mean_scale))) {
    curve.cdf.position = {0.0};
    curve.cdf.cumulative = {1.0};
    curve.ks = ks_to_normal(curve.cdf);
    curve.defined = true;
    curve.degenerate = true;
  }
  return curve;
}

// Cancellation in E[X^2] - (E X)^2 leaves noise of order eps * E[X^2] when
// the distribution is degenerate; such residues must read as exact zeros or
// the zero-variance flags (constant observables, single atoms) never fire.
double snap_variance(double v, double scale) {
  return v <= 1e-11 * scale ? 0.0 : v;
}

struct BaseTables {
  std::vector<OrbitCumulative> cc;  // per base atom, rotated word
  std::vector<double> F;            // F(x_i, T)
  double mean = 0;
  double var = 0;
};

BaseTables base_tables(const RoofFunction& roof, const Observable& f,
                       const DiscreteMeasure& m, double T) {
  if (m.atoms.empty()) fail(ErrorCode::EmptyWindow, "statistics: empty base measure");
  BaseTables bt;
  const std::size_t n = m.atoms.size();
  bt.cc.reserve(n);
  bt.F.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Word w = m.atoms[i].rotated_word();
    bt.cc.push_back(detail::build_orbit_cumulative(roof, f, w));
    bt.F[i] = bt.cc[i].c(T);
  }
  bt.mean = kernels::dot(bt.F, m.weights);
  bt.var = kernels::moment2(bt.F, m.weights, bt.mean);
  bt.var = snap_variance(bt.var, bt.mean * bt.mean + bt.var);
  return bt;
}

long long schedule_q(const ScheduleEntry& entry) {
  try {
    return entry.Q();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonPositiveQ) return 0;  // empty block windows
    throw;
  }
}

void check_entry(const OrbitSegmentMeasure& nu, const ScheduleEntry& entry) {
  const double tol = 1e-9 * std::max(1.0, nu.window_top);
  if (std::abs(entry.T - nu.window_top) > tol ||
      entry.k != nu.tuples.arity || entry.C != nu.loops ||
      std::abs(entry.M - nu.transition_time) > tol)
    fail(ErrorCode::BadConfig,
         "statistics: schedule entry does not match the orbit-segment measure");
}

struct DeviationInputs {
  double kappa = 0;
  double fsup = 0;
  double holder_L = 0;
  double holder_alpha = 1;
  double eta = 0;
  double T = 0;
  double delta = 0;
};

DeviationDiagnostics deviation_shell(const DeviationInputs& in, long long Q) {
  DeviationDiagnostics d;
  const double expo = in.eta * in.holder_alpha / 2.0;
  const double denom = 1.0 - std::exp(-expo);
  d.bound_constant = denom > 0
                         ? in.holder_L * in.kappa / denom
                         : std::numeric_limits<double>::infinity();
  d.delta_bound = 2.0 * (2.0 * d.bound_constant * in.T + in.kappa * in.fsup +
                         2.0 * in.delta * static_cast<double>(Q) * in.fsup);
  return d;
}

struct Engine {
  const SymbolicSystem& sys;
  const RoofFunction& roof;
  const Observable& f;
  const OrbitSegmentMeasure& nu;
  const BlockStatParams& params;
  long long Q;
  const BaseTables& base;

  double T() const { return nu.window_top; }
  std::size_t k() const { return static_cast<std::size_t>(nu.tuples.arity); }
  std::int32_t slot(std::size_t j, std::size_t p) const {
    return nu.tuples.tuple(j)[p];
  }
};

// Shared assembly once per-block moments and per-atom reductions are known.
// All arrays are weight-normalized by the mass of the atom prefix in use.
struct Moments {
  double W = 0;                     // atom prefix mass
  std::vector<double> mean_p;       // E F_p
  std::vector<double> var_p;        // Var F_p
  std::vector<double> seg1;         // per atom: E_t F(., S)
  std::vector<double> seg2;         // per atom: E_t F(., S)^2
  std::vector<double> sum1;         // per atom: E_t (sum_p F_p)
  std::vector<double> sum2;         // per atom: E_t (sum_p F_p)^2
  std::vector<double> var_infl;     // per atom influence of s^2
};

void fill_variances(const Engine& eng, const Moments& mo, VarianceBundle& vb,
                    double& mean_segment, double& mean_blocksum) {
  const std::size_t k = eng.k();
  std::span<const double> w(eng.nu.tuples.weights.data(), mo.seg1.size());
  vb.Q = eng.Q;
  vb.base_variance = eng.base.var;
  vb.per_block = mo.var_p;
  vb.block_variance_sum = kernels::sum(vb.per_block);
  const double eh = kernels::dot(mo.sum1, w) / mo.W;
  const double eh2 = kernels::dot(mo.sum2, w) / mo.W;
  vb.sum_variance = snap_variance(std::max(0.0, eh2 - eh * eh), eh2 + eh * eh);
  mean_segment = kernels::dot(mo.seg1, w) / mo.W;
  const double es2 = kernels::dot(mo.seg2, w) / mo.W;
  vb.segment_variance =
      snap_variance(std::max(0.0, es2 - mean_segment * mean_segment),
                    es2 + mean_segment * mean_segment);
  mean_blocksum = eh;

  vb.zero_variance = !(vb.block_variance_sum > 0);
  vb.zero_base_variance = !(vb.base_variance > 0);
  vb.ratio_defined = eng.Q > 0 && vb.base_variance > 0;
  vb.per_block_ratio.assign(k, 0.0);
  vb.max_ratio_dev = 0.0;
  if (vb.ratio_defined) {
    const double qq = static_cast<double>(eng.Q) * static_cast<double>(eng.Q);
    for (std::size_t p = 0; p < k; ++p) {
      vb.per_block_ratio[p] = mo.var_p[p] / (qq * vb.base_variance);
      vb.max_ratio_dev = std::max(vb.max_ratio_dev,
                                  std::abs(vb.per_block_ratio[p] - 1.0));
    }
  }

  if (!eng.nu.tuples.exact && !mo.seg1.empty()) {
    const std::size_t N = mo.seg1.size();
    std::vector<double> infl(N);
    auto se_of = [&](std::span<const double> d) {
      const double mean_d = kernels::dot(d, w) / mo.W;
      return std::sqrt(std::max(0.0, kernels::moment2(d, w, mean_d) / mo.W) /
                       static_cast<double>(N));
    };
    for (std::size_t j = 0; j < N; ++j) infl[j] = mo.sum2[j] - 2.0 * eh * mo.sum1[j];
    vb.se_sum_variance = se_of(infl);
    for (std::size_t j = 0; j < N; ++j)
      infl[j] = mo.seg2[j] - 2.0 * mean_segment * mo.seg1[j];
    vb.se_segment_variance = se_of(infl);
    vb.se_block_variance_sum = se_of(mo.var_infl);
  }
}

std::vector<LindebergRatio> base_lindeberg(const Engine& eng,
                                           const DiscreteMeasure& m) {
  std::vector<LindebergRatio> out;
  const double sigma = std::sqrt(std::max(0.0, eng.base.var));
  for (double gamma : eng.params.gammas) {
    LindebergRatio r;
    r.gamma = gamma;
    if (sigma > 0) {
      const double c =
          gamma * std::sqrt(static_cast<double>(eng.params.entry.k)) * sigma;
      r.defined = true;
      r.value = c > 2.0 * eng.T() * eng.f.sup_norm
                    ? 0.0
                    : kernels::moment2_tail(eng.base.F, m.weights, eng.base.mean,
                                            c) /
                          eng.base.var;
    }
    out.push_back(r);
  }
  return out;
}

// ---- fast path: per-cycle tables under exact cyclic closure ----

BlockStatistics run_fast(const Engine& eng) {
  const std::size_t n = eng.base.F.size();
  const std::size_t k = eng.k();
  const std::size_t N = eng.nu.tuples.count();
  const double T = eng.T();
  const double QT = static_cast<double>(eng.Q) * T;
  std::span<const double> w(eng.nu.tuples.weights);

  // Per-cycle block-window functionals G_i(t) = F_p(g_t v) when block p
  // carries cycle i; exact because the window never leaves the block.
  std::vector<PiecewiseFn> G(n);
  std::vector<double> ibar(n), isq(n), gmin(n), gmax(n);
  run_chunks(n, eng.params.workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      G[i] = eng.Q > 0 ? detail::window_fn(eng.base.cc[i], 0.0, QT, T)
                       : zero_fn(T);
      ibar[i] = G[i].integrate();
      isq[i] = G[i].integrate_square();
      gmin[i] = G[i].inf();
      gmax[i] = G[i].sup();
    }
  });

  std::vector<double> pair_int(n * n);
  run_chunks(n, eng.params.workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const double v = pair_integral(G[i], G[j]);
        pair_int[i * n + j] = v;
        pair_int[j * n + i] = v;
      }
  });

  // Segment integral of block i plus its bridge toward j: the first C-1
  // loops read cyclically (the next loop is the same word), the last loop
  // reads into the bridge and the next block's word.
  std::vector<double> seg_int(n * n, 0.0);
  run_chunks(eng.nu.pair_index.size(), eng.params.workers,
             [&](std::size_t lo, std::size_t hi) {
               for (std::size_t e = lo; e < hi; ++e) {
                 const auto [a, b] = eng.nu.pair_index[e];
                 const TransitionWord& br = eng.nu.pair_bridge[e];
                 const Cycle& ca = eng.nu.base.atoms[static_cast<std::size_t>(a)];
                 const Cycle& cb = eng.nu.base.atoms[static_cast<std::size_t>(b)];
                 Word center = ca.rotated_word();
                 center.insert(center.end(), br.word.begin(), br.word.end());
                 const FlowPoint y = FlowPoint::eventually_periodic(
                     ca.rotated_word(), center, cb.rotated_word());
                 const double tail = birkhoff_integral(
                     eng.roof, eng.f, y, 0.0, ca.flow_period + br.realized);
                 seg_int[static_cast<std::size_t>(a) * n +
                         static_cast<std::size_t>(b)] =
                     static_cast<double>(eng.nu.loops - 1) *
                         eng.base.cc[static_cast<std::size_t>(a)].loop_integral +
                     tail;
               }
             });

  // Slot marginals; shared writes, so single-threaded by construction.
  std::vector<double> marg(k * n, 0.0);
  for (std::size_t j = 0; j < N; ++j) {
    const auto tup = eng.nu.tuples.tuple(j);
    for (std::size_t p = 0; p < k; ++p)
      marg[p * n + static_cast<std::size_t>(tup[p])] += w[j];
  }
  const double W = kernels::sum(w);

  Moments mo;
  mo.W = W;
  mo.mean_p.resize(k);
  mo.var_p.resize(k);
  for (std::size_t p = 0; p < k; ++p) {
    std::span<const double> row(marg.data() + p * n, n);
    mo.mean_p[p] = kernels::dot(row, ibar) / (T * W);
    const double e2 = kernels::dot(row, isq) / (T * W);
    mo.var_p[p] = snap_variance(std::max(0.0, e2 - mo.mean_p[p] * mo.mean_p[p]),
                                e2 + mo.mean_p[p] * mo.mean_p[p]);
  }

  // Per-atom reductions. Under exact closure F(., S) is constant along each
  // atom (the full loop integral), so segment moments collapse to scalars.
  mo.seg1.resize(N);
  mo.seg2.resize(N);
  mo.sum1.resize(N);
  mo.sum2.resize(N);
  mo.var_infl.resize(N);
  run_chunks(N, eng.params.workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t j = lo; j < hi; ++j) {
      const auto tup = eng.nu.tuples.tuple(j);
      double itot = 0.0, ib = 0.0, infl = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const auto i = static_cast<std::size_t>(tup[p]);
        const auto nx = static_cast<std::size_t>(tup[(p + 1) % k]);
        itot += seg_int[i * n + nx];
        ib += ibar[i];
        infl += (isq[i] - 2.0 * mo.mean_p[p] * ibar[i]) / T;
      }
      double sq = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double* row = pair_int.data() +
                            static_cast<std::size_t>(tup[p]) * n;
        for (std::size_t q = 0; q < k; ++q)
          sq += row[static_cast<std::size_t>(tup[q])];
      }
      mo.seg1[j] = itot;
      mo.seg2[j] = itot * itot;
      mo.sum1[j] = ib / T;
      mo.sum2[j] = sq / T;
      mo.var_infl[j] = infl;
    }
  });

  BlockStatistics out;
  out.fast_path = true;
  out.atoms_used = N;
  out.mean_base = eng.base.mean;
  double mean_blocksum = 0.0;
  fill_variances(eng, mo, out.variances, out.mean_segment, mean_blocksum);
  const VarianceBundle& vb = out.variances;
  const double s = std::sqrt(vb.block_variance_sum);

  // Lindeberg tails per gamma: range prefilter, then exact threshold
  // integrals per (block, cycle) cell.
  for (double gamma : eng.params.gammas) {
    LindebergRatio r;
    r.gamma = gamma;
    if (s > 0) {
      r.defined = true;
      const double c = gamma * s;
      if (c > 2.0 * QT * eng.f.sup_norm) {
        r.value = 0.0;
      } else {
        std::vector<double> per_p(k, 0.0);
        run_chunks(k, eng.params.workers, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t p = lo; p < hi; ++p) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double mass = marg[p * n + i];
              if (mass == 0.0) continue;
              if (gmax[i] - mo.mean_p[p] <= c && mo.mean_p[p] - gmin[i] <= c)
                continue;
              acc += mass *
                     G[i].integrate_square_tail(mo.mean_p[p], c,
                                                eng.params.root_tol);
            }
            per_p[p] = acc;
          }
        });
        r.value = kernels::sum(per_p) / (T * W * vb.block_variance_sum);
      }
    }
    out.lindeberg_nu.push_back(r);
  }
  out.lindeberg_m = base_lindeberg(eng, eng.nu.base);

  // CLT curves share the segment deviations; only the normalizer varies.
  std::vector<double> dev(N);
  for (std::size_t j = 0; j < N; ++j) dev[j] = mo.seg1[j] - out.mean_segment;
  out.cdf_blocksum = step_curve("blocksum", dev, w, s, out.mean_segment);
  out.cdf_sumvar = step_curve("sumvar", dev, w, std::sqrt(vb.sum_variance),
                              out.mean_segment);
  out.cdf_segment = step_curve("segment", dev, w,
                               std::sqrt(vb.segment_variance), out.mean_segment);

  // Lemma diagnostics: tracking deviation sup per block and the A/B mass.
  DeviationInputs din{eng.params.kappa_eps > 0 ? eng.params.kappa_eps
                                               : eng.params.entry.eps,
                      eng.f.sup_norm,
                      eng.f.holder_L,
                      eng.f.holder_alpha,
                      eng.params.entry.eta,
                      T,
                      eng.params.entry.delta};
  DeviationDiagnostics dd = deviation_shell(din, eng.Q);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < n; ++i) {
      if (marg[p * n + i] == 0.0) continue;
      const double shift = mo.mean_p[p] + static_cast<double>(eng.Q) *
                                              (eng.base.F[i] - eng.base.mean);
      dd.sup_delta = std::max(dd.sup_delta,
                              std::max(gmax[i] - shift, shift - gmin[i]));
    }
  dd.bound_ok = dd.sup_delta <= dd.delta_bound;
  dd.ab_threshold = eng.params.ab_threshold;
  if (s > 0) {
    dd.defined = true;
    const std::size_t J = std::min<std::size_t>(N, eng.params.ab_atom_cap);
    const double dmeans = out.mean_segment - mean_blocksum;
    std::vector<double> mass(J, 0.0);
    run_chunks(J, eng.params.workers, [&](std::size_t lo, std::size_t hi) {
      std::vector<PiecewiseFn> parts(k);
      for (std::size_t j = lo; j < hi; ++j) {
        const auto tup = eng.nu.tuples.tuple(j);
        for (std::size_t p = 0; p < k; ++p)
          parts[p] = G[static_cast<std::size_t>(tup[p])];
        const PiecewiseFn H = piecewise_sum(parts);
        const double key = mo.seg1[j] - dmeans;
        const double a = dd.ab_threshold * s;
        mass[j] = (T - H.sublevel_measure(key + a, eng.params.root_tol)) +
                  H.sublevel_measure(key - a, eng.params.root_tol);
      }
    });
    std::span<const double> wj(w.data(), J);
    dd.ab_mass = kernels::dot(mass, wj) / (T * kernels::sum(wj));
    dd.ab_atoms = J;
  }
  out.lemmas.per_block_ratio = vb.per_block_ratio;
  out.lemmas.max_ratio_dev = vb.max_ratio_dev;
  out.lemmas.ratio_defined = vb.ratio_defined;
  out.lemmas.deviations = dd;
  return out;
}

// ---- generic path: realize atoms and integrate their own cumulatives ----

struct AtomFns {
  std::vector<PiecewiseFn> Gp;  // block windows, k entries
  PiecewiseFn Fs;               // t -> F(g_t v, S)
};

AtomFns atom_fns(const Engine& eng, std::size_t j) {
  const GluedPoint g = realize_atom(eng.sys, eng.roof, eng.nu, j);
  const OrbitCumulative oc =
      detail::build_orbit_cumulative(eng.roof, eng.f, g.period_word);
  const double T = eng.T();
  const double QT = static_cast<double>(eng.Q) * T;
  AtomFns fns;
  fns.Gp.resize(eng.k());
  for (std::size_t p = 0; p < eng.k(); ++p) {
    const double tp = g.block_schedule[p];
    fns.Gp[p] = eng.Q > 0 ? detail::window_fn(oc, tp, tp + QT, T) : zero_fn(T);
  }
  fns.Fs = detail::window_fn(oc, 0.0, eng.nu.segment, T);
  return fns;
}

BlockStatistics run_generic(const Engine& eng) {
  const std::size_t k = eng.k();
  const double T = eng.T();
  const std::size_t N =
      std::min<std::size_t>(eng.nu.tuples.count(), eng.params.generic_atom_cap);

  // Pass 1: scalar moments (and window ranges for prefilters) per atom.
  std::vector<double> ibar(k * N), isq(k * N), lo_r(k * N), hi_r(k * N);
  Moments mo;
  mo.seg1.resize(N);
  mo.seg2.resize(N);
  mo.sum1.resize(N);
  mo.sum2.resize(N);
  mo.var_infl.resize(N);
  std::vector<double> seg_lo(N), seg_hi(N);
  run_chunks(N, eng.params.workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t j = lo; j < hi; ++j) {
      const AtomFns fns = atom_fns(eng, j);
      for (std::size_t p = 0; p < k; ++p) {
        ibar[p * N + j] = fns.Gp[p].integrate() / T;
        isq[p * N + j] = fns.Gp[p].integrate_square() / T;
        lo_r[p * N + j] = fns.Gp[p].inf();
        hi_r[p * N + j] = fns.Gp[p].sup();
      }
      const PiecewiseFn H = piecewise_sum(fns.Gp);
      mo.sum1[j] = H.integrate() / T;
      mo.sum2[j] = H.integrate_square() / T;
      mo.seg1[j] = fns.Fs.integrate() / T;
      mo.seg2[j] = fns.Fs.integrate_square() / T;
      seg_lo[j] = fns.Fs.inf();
      seg_hi[j] = fns.Fs.sup();
    }
  });

  std::span<const double> w(eng.nu.tuples.weights.data(), N);
  mo.W = kernels::sum(w);
  mo.mean_p.resize(k);
  mo.var_p.resize(k);
  for (std::size_t p = 0; p < k; ++p) {
    std::span<const double> row_i(ibar.data() + p * N, N);
    std::span<const double> row_q(isq.data() + p * N, N);
    mo.mean_p[p] = kernels::dot(row_i, w) / mo.W;
    const double e2 = kernels::dot(row_q, w) / mo.W;
    mo.var_p[p] = snap_variance(std::max(0.0, e2 - mo.mean_p[p] * mo.mean_p[p]),
                                e2 + mo.mean_p[p] * mo.mean_p[p]);
  }
  for (std::size_t j = 0; j < N; ++j) {
    double infl = 0.0;
    for (std::size_t p = 0; p < k; ++p)
      infl += isq[p * N + j] - 2.0 * mo.mean_p[p] * ibar[p * N + j];
    mo.var_infl[j] = infl;
  }

  BlockStatistics out;
  out.fast_path = false;
  out.atoms_used = N;
  out.mean_base = eng.base.mean;
  double mean_blocksum = 0.0;
  fill_variances(eng, mo, out.variances, out.mean_segment, mean_blocksum);
  const VarianceBundle& vb = out.variances;
  const double s = std::sqrt(vb.block_variance_sum);
  const std::size_t nga = eng.params.gammas.size();

  const std::array<double, 3> scales{s, std::sqrt(vb.sum_variance),
                                     std::sqrt(vb.segment_variance)};

  // Pass 2: threshold integrals. Per-atom cells land in slabs and reduce in
  // fixed order afterwards.
  std::vector<double> tail_slab(nga * k * N, 0.0);
  std::vector<double> probe_slab;  // [curve][probe][atom]
  const bool any_scale = scales[0] > 0 || scales[1] > 0 || scales[2] > 0;
  if (any_scale)
    probe_slab.assign(3 * static_cast<std::size_t>(kProbeCount) * N, 0.0);
  const std::size_t abJ =
      s > 0 ? std::min<std::size_t>(N, eng.params.ab_atom_cap) : 0;
  std::vector<double> ab_mass_j(abJ, 0.0);
  const double dmeans = out.mean_segment - mean_blocksum;
  run_chunks(N, eng.params.workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t j = lo; j < hi; ++j) {
      const AtomFns fns = atom_fns(eng, j);
      for (std::size_t gi = 0; gi < nga; ++gi) {
        if (!(s > 0)) break;
        const double c = eng.params.gammas[gi] * s;
        for (std::size_t p = 0; p < k; ++p) {
          if (hi_r[p * N + j] - mo.mean_p[p] <= c &&
              mo.mean_p[p] - lo_r[p * N + j] <= c)
            continue;
          tail_slab[(gi * k + p) * N + j] =
              fns.Gp[p].integrate_square_tail(mo.mean_p[p], c,
                                              eng.params.root_tol) /
              T;
        }
      }
      if (any_scale) {
        for (std::size_t curve = 0; curve < 3; ++curve) {
          if (!(scales[curve] > 0)) continue;
          for (int pr = 0; pr < kProbeCount; ++pr) {
            const double x = out.mean_segment + probe_at(pr) * scales[curve];
            probe_slab[(curve * kProbeCount + pr) * N + j] =
                fns.Fs.sublevel_measure(x, eng.params.root_tol) / T;
          }
        }
      }
      if (j < abJ) {
        const PiecewiseFn D = fn_difference(fns.Fs, piecewise_sum(fns.Gp));
        const double a = eng.params.ab_threshold * s;
        ab_mass_j[j] =
            ((T - D.sublevel_measure(dmeans + a, eng.params.root_tol)) +
             D.sublevel_measure(dmeans - a, eng.params.root_tol)) /
            T;
      }
    }
  });

  for (std::size_t gi = 0; gi < nga; ++gi) {
    LindebergRatio r;
    r.gamma = eng.params.gammas[gi];
    if (s > 0) {
      r.defined = true;
      double total = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        std::span<const double> cells(tail_slab.data() + (gi * k + p) * N, N);
        total += kernels::dot(cells, w);
      }
      r.value = total / (mo.W * vb.block_variance_sum);
    }
    out.lindeberg_nu.push_back(r);
  }
  out.lindeberg_m = base_lindeberg(eng, eng.nu.base);

  const std::array<const char*, 3> labels{"blocksum", "sumvar", "segment"};
  std::array<CltCurve*, 3> curves{&out.cdf_blocksum, &out.cdf_sumvar,
                                  &out.cdf_segment};
  for (std::size_t curve = 0; curve < 3; ++curve) {
    CltCurve& c = *curves[curve];
    c.normalizer = labels[curve];
    c.scale = scales[curve];
    if (scales[curve] > 0) {
      c.cdf.continuous = true;
      c.cdf.position.resize(kProbeCount);
      c.cdf.cumulative.resize(kProbeCount);
      for (int pr = 0; pr < kProbeCount; ++pr) {
        std::span<const double> cells(
            probe_slab.data() + (curve * kProbeCount + pr) * N, N);
        c.cdf.position[pr] = probe_at(pr);
        c.cdf.cumulative[pr] = kernels::dot(cells, w) / mo.W;
      }
      c.ks = ks_to_normal(c.cdf);
      c.defined = true;
    } else {
      double maxdev = 0.0;
      for (std::size_t j = 0; j < N; ++j)
        maxdev = std::max(maxdev,
                          std::max(std::abs(seg_hi[j] - out.mean_segment),
                                   std::abs(out.mean_segment - seg_lo[j])));
      if (maxdev <= 1e-9 * std::max(1.0, std::abs(out.mean_segment))) {
        c.cdf.position = {0.0};
        c.cdf.cumulative = {1.0};
        c.ks = ks_to_normal(c.cdf);
        c.defined = true;
        c.degenerate = true;
      }
    }
  }

  DeviationInputs din{eng.params.kappa_eps > 0 ? eng.params.kappa_eps
                                               : eng.params.entry.eps,
                      eng.f.sup_norm,
                      eng.f.holder_L,
                      eng.f.holder_alpha,
                      eng.params.entry.eta,
                      T,
                      eng.params.entry.delta};
  DeviationDiagnostics dd = deviation_shell(din, eng.Q);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t p = 0; p < k; ++p) {
      const auto i = static_cast<std::size_t>(eng.slot(j, p));
      const double shift = mo.mean_p[p] + static_cast<double>(eng.Q) *
                                              (eng.base.F[i] - eng.base.mean);
      dd.sup_delta = std::max(dd.sup_delta,
                              std::max(hi_r[p * N + j] - shift,
                                       shift - lo_r[p * N + j]));
    }
  dd.bound_ok = dd.sup_delta <= dd.delta_bound;
  dd.ab_threshold = eng.params.ab_threshold;
  if (s > 0) {
    dd.defined = true;
    std::span<const double> wj(w.data(), abJ);
    std::span<const double> mj(ab_mass_j.data(), abJ);
    dd.ab_mass = kernels::dot(mj, wj) / kernels::sum(wj);
    dd.ab_atoms = abJ;
  }
  out.lemmas.per_block_ratio = vb.per_block_ratio;
  out.lemmas.max_ratio_dev = vb.max_ratio_dev;
  out.lemmas.ratio_defined = vb.ratio_defined;
  out.lemmas.deviations = dd;
  return out;
}

bool fast_path_ok(const Engine& eng) {
  if (!eng.nu.closure_exact) return false;
  if (eng.Q == 0) return true;  // block windows are empty either way
  const double look = (eng.f.depth - 1) * eng.roof.max();
  const double need = static_cast<double>(eng.Q + 1) * eng.T() + look;
  for (const Cycle& c : eng.nu.base.atoms)
    if (need > static_cast<double>(eng.nu.loops) * c.flow_period) return false;
  return true;
}

}  // namespace

BlockStatistics block_statistics(const SymbolicSystem& sys,
                                 const RoofFunction& roof, const Observable& f,
                                 const OrbitSegmentMeasure& nu,
                                 const BlockStatParams& params) {
  check_entry(nu, params.entry);
  for (double g : params.gammas)
    if (!(g >= 0)) fail(ErrorCode::BadConfig, "statistics: gamma must be >= 0");
  const long long Q = schedule_q(params.entry);
  const BaseTables base = base_tables(roof, f, nu.base, nu.window_top);
  Engine eng{sys, roof, f, nu, params, Q, base};
  if (!params.force_generic && fast_path_ok(eng)) return run_fast(eng);
  return run_generic(eng);
}

double sigma_l(const RoofFunction& roof, const Observable& f,
               const DiscreteMeasure& m, double T) {
  if (!(T > 0)) fail(ErrorCode::BadConfig, "sigma_l: window top must be positive");
  return base_tables(roof, f, m, T).var;
}

double block_functional_value(const RoofFunction& roof, const Observable& f,
                              const GluedPoint& g, long long Q, long long p,
                              std::optional<long long> q) {
  const auto k = static_cast<long long>(g.components.size());
  if (Q < 0) fail(ErrorCode::BadConfig, "block_functional_value: negative Q");
  if (p < 0 || p >= k)
    fail(ErrorCode::WindowOutOfRange, "block_functional_value: block index");
  if (q && (*q < 0 || *q >= std::max<long long>(Q, 1)))
    fail(ErrorCode::WindowOutOfRange, "block_functional_value: loop index");
  const double tp = g.block_schedule[static_cast<std::size_t>(p)];
  const double lo = q ? tp + static_cast<double>(*q) * g.window_top : tp;
  const double hi = q ? tp + static_cast<double>(*q + 1) * g.window_top
                      : tp + static_cast<double>(Q) * g.window_top;
  if (hi > g.nominal_period + 1e-9 * std::max(1.0, g.nominal_period))
    fail(ErrorCode::WindowOutOfRange, "block_functional_value: window end");
  if (q && Q == 0)
    fail(ErrorCode::WindowOutOfRange, "block_functional_value: no loops");
  // Differences of one cumulative, so partial windows tile the full block
  // with exact cancellation whenever the cumulative values are exact.
  const double c_hi = birkhoff_integral(roof, f, g.realized_sequence, 0.0, hi);
  const double c_lo = birkhoff_integral(roof, f, g.realized_sequence, 0.0, lo);
  return c_hi - c_lo;
}

VarianceBundle variance_bundle(const SymbolicSystem& sys,
                               const RoofFunction& roof, const Observable& f,
                               const OrbitSegmentMeasure& nu,
                               const ScheduleEntry& entry) {
  BlockStatParams params;
  params.entry = entry;
  params.gammas.clear();
  return block_statistics(sys, roof, f, nu, params).variances;
}

LindebergRatio lindeberg_ratio_m(const RoofFunction& roof, const Observable& f,
                                 const DiscreteMeasure& m, double T,
                                 long long k, double sigma, double gamma) {
  if (k < 1) fail(ErrorCode::BadConfig, "lindeberg_ratio_m: k must be >= 1");
  if (!(gamma >= 0)) fail(ErrorCode::BadConfig, "lindeberg_ratio_m: negative gamma");
  LindebergRatio r;
  r.gamma = gamma;
  if (!(sigma > 0)) return r;
  r.defined = true;
  const double c = gamma * std::sqrt(static_cast<double>(k)) * sigma;
  if (c > 2.0 * T * f.sup_norm) return r;  // deviation set is empty
  const BaseTables bt = base_tables(roof, f, m, T);
  r.value = kernels::moment2_tail(bt.F, m.weights, bt.mean, c) / (sigma * sigma);
  return r;
}

LindebergRatio lindeberg_ratio_nu(const SymbolicSystem& sys,
                                  const RoofFunction& roof, const Observable& f,
                                  const OrbitSegmentMeasure& nu,
                                  const ScheduleEntry& entry, double gamma) {
  BlockStatParams params;
  params.entry = entry;
  params.gammas = {gamma};
  return block_statistics(sys, roof, f, nu, params).lindeberg_nu.at(0);
}

CltCurve clt_cdf(const SymbolicSystem& sys, const RoofFunction& roof,
                 const Observable& f, const OrbitSegmentMeasure& nu,
                 const ScheduleEntry& entry, CltNormalizer normalizer) {
  BlockStatParams params;
  params.entry = entry;
  params.gammas.clear();
  const BlockStatistics bs = block_statistics(sys, roof, f, nu, params);
  switch (normalizer) {
    case CltNormalizer::BlockSum: return bs.cdf_blocksum;
    case CltNormalizer::SumVariance: return bs.cdf_sumvar;
    default: return bs.cdf_segment;
  }
}

CltCurve clt_cdf_mu(const RoofFunction& roof, const Observable& f,
                    const DiscreteMeasure& m, double T, long long k,
                    long long exact_cap, long long samples, std::uint64_t seed,
                    std::uint64_t stream) {
  if (k < 1) fail(ErrorCode::BadConfig, "clt_cdf_mu: k must be >= 1");
  if (!(T > 0)) fail(ErrorCode::BadConfig, "clt_cdf_mu: window top must be positive");
  const BaseTables bt = base_tables(roof, f, m, T);
  CltCurve curve;
  curve.normalizer = "mu";
  const double var = bt.var;
  if (!(var > 0)) return curve;  // zero base variance: flagged, not stepped
  const double scale = std::sqrt(static_cast<double>(k) * var);
  curve.scale = scale;
  curve.defined = true;

  const std::size_t n = m.atoms.size();
  bool exact = true;
  long long total = 1;
  for (long long i = 0; i < k && exact; ++i) {
    if (total > exact_cap / static_cast<long long>(n)) exact = false;
    else total *= static_cast<long long>(n);
  }

  std::vector<double> value, weight;
  if (exact) {
    // k-fold convolution; exactly equal sums merge so symmetric instances
    // produce their true step masses.
    std::vector<std::pair<double, double>> dist;
    for (std::size_t i = 0; i < n; ++i) dist.push_back({bt.F[i], m.weights[i]});
    auto merge_sorted = [](std::vector<std::pair<double, double>>& d) {
      std::sort(d.begin(), d.end(),
                [](const auto& x, const auto& y) { return x.first < y.first; });
      std::size_t out = 0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (out > 0 && d[out - 1].first == d[i].first) d[out - 1].second += d[i].second;
        else d[out++] = d[i];
      }
      d.resize(out);
    };
    merge_sorted(dist);
    for (long long step = 1; step < k; ++step) {
      std::vector<std::pair<double, double>> next;
      next.reserve(dist.size() * n);
      for (const auto& [v, wt] : dist)
        for (std::size_t i = 0; i < n; ++i)
          next.push_back({v + bt.F[i], wt * m.weights[i]});
      merge_sorted(next);
      dist = std::move(next);
    }
    for (const auto& [v, wt] : dist) {
      value.push_back((v - static_cast<double>(k) * bt.mean) / scale);
      weight.push_back(wt);
    }
  } else {
    if (samples < 1) fail(ErrorCode::BadConfig, "clt_cdf_mu: no sample budget");
    std::vector<double> cum(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += m.weights[i];
      cum[i] = acc;
    }
    value.resize(static_cast<std::size_t>(samples));
    weight.assign(static_cast<std::size_t>(samples),
                  1.0 / static_cast<double>(samples));
    for (long long j = 0; j < samples; ++j) {
      auto rng = make_rng(seed, stream, static_cast<std::uint64_t>(j));
      double sum = 0.0;
      for (long long d = 0; d < k; ++d) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        auto it = std::upper_bound(cum.begin(), cum.end(), u * acc);
        std::size_t idx = static_cast<std::size_t>(it - cum.begin());
        if (idx >= n) idx = n - 1;
        sum += bt.F[idx];
      }
      value[static_cast<std::size_t>(j)] =
          (sum - static_cast<double>(k) * bt.mean) / scale;
    }
  }
  curve.cdf = step_cdf(value, weight);
  curve.ks = ks_to_normal(curve.cdf);
  return curve;
}

DynVarianceSeries dyn_variance_series(const RoofFunction& roof,
                                      const Observable& f,
                                      std::span<const DiscreteMeasure> ms,
                                      std::span<const double> T) {
  if (ms.empty() || ms.size() != T.size())
    fail(ErrorCode::BadConfig, "dyn_variance_series: need matching nonempty series");
  DynVarianceSeries out;
  for (std::size_t i = 0; i < ms.size(); ++i)
    out.values.push_back(sigma_l(roof, f, ms[i], T[i]) / T[i]);
  // liminf proxy: minimum over the tail half of the available prefix
  const std::size_t start = out.values.size() / 2;
  out.liminf_estimate = out.values[start];
  for (std::size_t i = start; i < out.values.size(); ++i)
    out.liminf_estimate = std::min(out.liminf_estimate, out.values[i]);
  out.positive = out.liminf_estimate > 0;
  return out;
}

LemmaDiagnostics lemma_diagnostics(const SymbolicSystem& sys,
                                   const RoofFunction& roof,
                                   const Observable& f,
                                   const OrbitSegmentMeasure& nu,
                                   const ScheduleEntry& entry, double kappa_eps,
                                   double ab_threshold) {
  BlockStatParams params;
  params.entry = entry;
  params.gammas.clear();
  params.kappa_eps = kappa_eps;
  params.ab_threshold = ab_threshold;
  return block_statistics(sys, roof, f, nu, params).lemmas;
}

VariationEstimate variation_estimate(const SymbolicSystem& sys,
                                     const RoofFunction& roof,
                                     const RegularityFunction& reg,
                                     const Observable& f, double eta, double T,
                                     double delta0, std::uint64_t pairs,
                                     std::uint64_t seed) {
  if (!(T > 0) || !(delta0 > 0))
    fail(ErrorCode::BadConfig, "variation_estimate: T and delta0 must be positive");
  VariationEstimate est;
  if (pairs == 0) {
    est.no_data = true;
    return est;
  }
  const int alphabet = sys.alphabet();
  const std::size_t span_len =
      static_cast<std::size_t>(std::ceil(T / roof.min())) +
      static_cast<std::size_t>(std::max({roof.depth(), f.depth, 2})) + 4;
  bool any = false;
  for (std::uint64_t i = 0; i < pairs; ++i) {
    auto rng = make_rng(seed, 29, i);
    bool found = false;
    FlowPoint u = FlowPoint::periodic({0});
    for (int attempt = 0; attempt < 64 && !found; ++attempt) {
      // random admissible loop; closure fixed by extending until the wrap
      // transition is allowed
      Word w;
      w.push_back(static_cast<Symbol>(rng() % alphabet));
      while (w.size() < span_len || !sys.loop_admissible(w)) {
        std::vector<Symbol> options;
        for (int b = 0; b < alphabet; ++b) {
          const Symbol cand[2] = {w.back(), static_cast<Symbol>(b)};
          if (sys.word_admissible(cand)) options.push_back(static_cast<Symbol>(b));
        }
        if (options.empty()) break;  // mixing systems always continue
        w.push_back(options[rng() % options.size()]);
        if (w.size() > 4 * span_len) break;
      }
      if (!sys.loop_admissible(w)) continue;
      const FlowPoint cand = FlowPoint::periodic(w);
      if (in_C_eta(reg, roof, cand, T, 0.75 * eta)) {
        u = cand;
        found = true;
      }
    }
    if (!found) continue;
    const double tau =
        delta0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    const double fu = birkhoff_integral(roof, f, u, 0.0, T);
    const double fv = birkhoff_integral(roof, f, u, tau, tau + T);
    est.value = std::max(est.value, std::abs(fu - fv) / T);
    any = true;
  }
  est.no_data = !any;
  return est;
}

}  // namespace lindlab
