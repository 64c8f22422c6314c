#include "lindlab/gluing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "lindlab/errors.hpp"
#include "lindlab/util.hpp"

namespace lindlab {

namespace {

double cyclic_roof(const RoofFunction& roof, const Word& w, std::size_t i) {
  const std::size_t d = static_cast<std::size_t>(roof.depth());
  Word block(d);
  for (std::size_t j = 0; j < d; ++j) block[j] = w[(i + j) % w.size()];
  return roof.table().at(block);
}

// Roof time of the bridge positions; trailing windows read into `next`.
double bridge_flow_time(const RoofFunction& roof, const Word& w,
                        const Word& next) {
  const std::size_t d = static_cast<std::size_t>(roof.depth());
  double s = 0.0;
  Word block(d);
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t idx = i + j;
      block[j] = idx < w.size() ? w[idx] : next[(idx - w.size()) % next.size()];
    }
    s += roof.table().at(block);
  }
  return s;
}

int min_feasible_length(const SymbolicSystem& sys, Symbol a, Symbol b) {
  const int bound = std::max(sys.mixing_time(), 1);
  for (int n = 1; n <= bound; ++n)
    if (sys.path_exists(a, b, n)) return n;
  fail(ErrorCode::NoTransition, "no admissible bridge at any length");
}

// Lexicographically minimal admissible word of exactly n symbols between a
// and b; caller guarantees feasibility.
Word lex_min_bridge(const SymbolicSystem& sys, Symbol a, Symbol b, int n) {
  Word w;
  Symbol cur = a;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int s = 0; s < sys.alphabet() && !placed; ++s) {
      const Symbol sym = static_cast<Symbol>(s);
      if (!sys.allowed(cur, sym)) continue;
      if (!sys.path_exists(sym, b, n - 1 - i)) continue;
      w.push_back(sym);
      cur = sym;
      placed = true;
    }
    if (!placed) fail(ErrorCode::NoTransition, "bridge construction dead end");
  }
  return w;
}

struct BridgeSearch {
  const SymbolicSystem& sys;
  const RoofFunction& roof;
  const Word& next;
  Symbol a, b;
  double target, tol;

  BridgeSearch(const SymbolicSystem& s, const RoofFunction& r, const Word& nx,
               Symbol a_, Symbol b_, double target_, double tol_)
      : sys(s), roof(r), next(nx), a(a_), b(b_), target(target_), tol(tol_) {}

  std::size_t nodes = 0;
  static constexpr std::size_t kNodeBudget = 5'000'000;

  double best_abs = std::numeric_limits<double>::infinity();
  double best_realized = 0;
  Word best_word;

  void consider(const Word& w) {
    const double realized = bridge_flow_time(roof, w, next);
    const double res = std::fabs(realized - target);
    if (res + 1e-18 < best_abs) {
      best_abs = res;
      best_realized = realized;
      best_word = w;
    }
  }

  // DFS in lex order; the first hit at each (length, deviation) level is the
  // lex-min one, so `consider` only replaces on strict improvement.
  bool dfs(Word& w, int n, double placed_sum, int placed_full) {
    if (++nodes > kNodeBudget)
      fail(ErrorCode::BudgetExceeded, "bridge search exceeded node budget");
    const int rem = n - placed_full;
    const double lo = placed_sum + rem * roof.min();
    const double hi = placed_sum + rem * roof.max();
    if (lo - target > best_abs || target - hi > best_abs) return false;
    if (static_cast<int>(w.size()) == n) {
      consider(w);
      return best_abs <= tol;
    }
    const Symbol cur = w.empty() ? a : w.back();
    for (int s = 0; s < sys.alphabet(); ++s) {
      const Symbol sym = static_cast<Symbol>(s);
      if (!sys.allowed(cur, sym)) continue;
      const int left = n - static_cast<int>(w.size()) - 1;
      if (!sys.path_exists(sym, b, left)) continue;
      w.push_back(sym);
      double nsum = placed_sum;
      int nfull = placed_full;
      // Depth-1 roofs let every placed position contribute immediately.
      if (roof.depth() == 1) {
        nsum += roof.table().at(std::span<const Symbol>(&sym, 1));
        nfull += 1;
      }
      if (dfs(w, n, nsum, nfull)) return true;
      w.pop_back();
    }
    return false;
  }
};

std::size_t primitive_root_length(const Word& w) {
  const std::size_t n = w.size();
  for (std::size_t d = 1; d < n; ++d) {
    if (n % d != 0) continue;
    bool repeats = true;
    for (std::size_t i = d; i < n && repeats; ++i) repeats = (w[i] == w[i - d]);
    if (repeats) return d;
  }
  return n;
}

}  // namespace

TransitionWord find_transition_word(const SymbolicSystem& sys,
                                    const RoofFunction& roof, const Cycle& from,
                                    const Cycle& to, double target, double tol) {
  const Word from_word = from.rotated_word();
  const Word to_word = to.rotated_word();
  if (from_word.empty() || to_word.empty())
    fail(ErrorCode::BadConfig, "transition endpoints need nonempty cycles");
  const Symbol a = from_word.back();
  const Symbol b = to_word.front();

  const int n_feas = min_feasible_length(sys, a, b);
  const double min_time = n_feas * roof.min();
  if (target < min_time - tol)
    fail(ErrorCode::NoTransition, "transition time " + fmt17(target) +
                                      " below feasibility; minimal feasible time is " +
                                      fmt17(min_time));

  TransitionWord out;
  out.target = target;

  if (roof.is_constant()) {
    const double r = roof.min();
    const int guess = static_cast<int>(std::llround(target / r));
    int best_n = -1;
    double best_res = std::numeric_limits<double>::infinity();
    const int span = sys.mixing_time() + 2;
    const int lo = std::max({1, n_feas, guess - span});
    const int hi = std::max(guess + span, n_feas);
    for (int n = lo; n <= hi; ++n) {
      if (!sys.path_exists(a, b, n)) continue;
      const double res = std::fabs(n * r - target);
      if (res + 1e-18 < best_res) {
        best_res = res;
        best_n = n;
      }
    }
    if (best_n < 0) fail(ErrorCode::NoTransition, "no admissible bridge length near target");
    out.word = lex_min_bridge(sys, a, b, best_n);
    out.realized = bridge_flow_time(roof, out.word, to_word);
  } else {
    const std::size_t n_hi = std::max<std::size_t>(
        static_cast<std::size_t>(std::ceil((target + tol) / roof.min())) + 1,
        static_cast<std::size_t>(n_feas));
    BridgeSearch search{sys, roof, to_word, a, b, target, tol};
    for (std::size_t n = static_cast<std::size_t>(n_feas); n <= n_hi; ++n) {
      if (!sys.path_exists(a, b, static_cast<int>(n))) continue;
      Word w;
      if (search.dfs(w, static_cast<int>(n), 0.0, 0)) break;
    }
    if (search.best_word.empty())
      fail(ErrorCode::NoTransition, "no admissible bridge found for target " + fmt17(target));
    out.word = search.best_word;
    out.realized = search.best_realized;
  }
  out.residual = out.realized - out.target;
  return out;
}

GluedPoint glue(const SymbolicSystem& sys, const RoofFunction& roof,
                const std::vector<Cycle>& components, int C, double M, double T,
                double tol) {
  if (components.empty()) fail(ErrorCode::BadConfig, "empty component tuple");
  if (C < 1) fail(ErrorCode::BadConfig, "loop count C must be >= 1");
  const std::size_t k = components.size();

  GluedPoint g;
  g.components = components;
  g.loops = C;
  g.transition_time = M;
  if (T <= 0) {
    T = 0;
    for (const Cycle& c : components) T = std::max(T, c.flow_period);
  }
  g.window_top = T;

  for (std::size_t p = 0; p < k; ++p) {
    const Cycle& cur = components[p];
    const Cycle& nxt = components[(p + 1) % k];
    g.block_offsets.push_back(g.period_word.size());
    const Word block = cur.rotated_word();
    for (int c = 0; c < C; ++c)
      g.period_word.insert(g.period_word.end(), block.begin(), block.end());
    const double target = C * (T - cur.flow_period) + M;
    TransitionWord tw = find_transition_word(sys, roof, cur, nxt, target, tol);
    g.period_word.insert(g.period_word.end(), tw.word.begin(), tw.word.end());
    g.transitions.push_back(std::move(tw));
  }

  if (!sys.loop_admissible(g.period_word))
    fail(ErrorCode::BadWord, "internal: glued word is not admissible");

  g.realized_sequence = FlowPoint::periodic(g.period_word);
  g.realized_period = loop_flow_period(roof, g.period_word);
  g.nominal_period = static_cast<double>(k) * (C * T + M);
  for (std::size_t p = 0; p < k; ++p)
    g.block_schedule.push_back(static_cast<double>(p) * (C * T + M));
  return g;
}

TrackingReport verify_tracking(const RoofFunction& roof, const GluedPoint& g,
                               double eps) {
  TrackingReport rep;
  rep.eps = eps;
  if (!(eps > 0)) {
    rep.ok = false;
    rep.worst_distance = std::numeric_limits<double>::infinity();
    return rep;
  }
  rep.margin_symbols = std::max(0, static_cast<int>(std::floor(std::log2(1.0 / eps))) + 1);

  for (std::size_t p = 0; p < g.components.size(); ++p) {
    const Cycle& c = g.components[p];
    const Word wr = c.rotated_word();
    const std::size_t root_len = primitive_root_length(wr);
    const Word root(wr.begin(), wr.begin() + static_cast<std::ptrdiff_t>(root_len));
    const double window = g.loops * loop_flow_period(roof, root);
    const std::size_t total_syms = static_cast<std::size_t>(g.loops) * root_len;

    const FlowPoint y = c.base_point();
    const FlowPoint z = flow(roof, g.realized_sequence, g.block_schedule[p]);

    const std::size_t m = static_cast<std::size_t>(rep.margin_symbols);
    double d;
    if (2 * m < total_syms) {
      double t_a = 0.0, t_b = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        t_a += cyclic_roof(roof, root, i % root_len);
        t_b += cyclic_roof(roof, root, (total_syms - m + i) % root_len);
      }
      d = bowen_distance(roof, flow(roof, z, t_a), flow(roof, y, t_a),
                         window - t_a - t_b);
    } else {
      d = symbolic_distance(flow(roof, z, window / 2), flow(roof, y, window / 2));
    }
    rep.distances.push_back(d);
    rep.worst_distance = std::max(rep.worst_distance, d);
  }
  rep.ok = rep.worst_distance < eps;
  return rep;
}

std::string glued_point_json(const GluedPoint& g, const TrackingReport* tracking) {
  nlohmann::json j;
  auto comps = nlohmann::json::array();
  for (const Cycle& c : g.components) {
    comps.push_back({{"word", word_to_string(c.word)},
                     {"base_rotation", c.base_rotation},
                     {"flow_period", c.flow_period},
                     {"lambda_avg", c.lambda_avg}});
  }
  j["components"] = comps;
  j["loops"] = g.loops;
  j["window_top"] = g.window_top;
  j["transition_time"] = g.transition_time;
  auto bridges = nlohmann::json::array();
  for (const TransitionWord& t : g.transitions) {
    bridges.push_back({{"word", word_to_string(t.word)},
                       {"target", t.target},
                       {"realized", t.realized},
                       {"residual", t.residual}});
  }
  j["transition_words"] = bridges;
  j["block_schedule"] = g.block_schedule;
  j["block_offsets"] = g.block_offsets;
  j["nominal_period"] = g.nominal_period;
  j["realized_period"] = g.realized_period;
  if (tracking) {
    j["tracking"] = {{"ok", tracking->ok},
                     {"eps", tracking->eps},
                     {"margin_symbols", tracking->margin_symbols},
                     {"worst_distance", tracking->worst_distance},
                     {"distances", tracking->distances}};
  }
  return j.dump(2);
}

}  // namespace lindlab
