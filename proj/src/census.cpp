#include "lindlab/census.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "lindlab/errors.hpp"
#include "lindlab/util.hpp"

namespace lindlab {

namespace {

Word rotate_left(const Word& w, std::size_t k) {
  Word out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[(i + k) % w.size()];
  return out;
}

bool is_primitive(const Word& w) {
  const std::size_t n = w.size();
  for (std::size_t d = 1; d < n; ++d) {
    if (n % d != 0) continue;
    bool repeats = true;
    for (std::size_t i = d; i < n && repeats; ++i) repeats = (w[i] == w[i - d]);
    if (repeats) return false;
  }
  return true;
}

// True when w is the lexicographically minimal among its rotations.
bool is_canonical(const Word& w) {
  const std::size_t n = w.size();
  for (std::size_t k = 1; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const Symbol a = w[i];
      const Symbol b = w[(i + k) % n];
      if (b < a) return false;
      if (b > a) break;
    }
  }
  return true;
}

// Depth-d regularity value at rotation k of a loop.
double rotation_lambda(const RegularityFunction& reg, const Word& w,
                       std::size_t k) {
  const std::size_t d = reg.depth();
  Word block(d);
  for (std::size_t i = 0; i < d; ++i) block[i] = w[(k + i) % w.size()];
  return reg.table().at(block);
}

bool rotation_less(const Word& w, std::size_t a, std::size_t b) {
  const std::size_t n = w.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Symbol x = w[(a + i) % n];
    const Symbol y = w[(b + i) % n];
    if (x != y) return x < y;
  }
  return false;
}

}  // namespace

Word Cycle::rotated_word() const {
  return rotate_left(word, static_cast<std::size_t>(base_rotation));
}

FlowPoint Cycle::base_point() const { return FlowPoint::periodic(rotated_word()); }

std::vector<Cycle> enumerate_cycles(const SymbolicSystem& sys,
                                    const RoofFunction& roof,
                                    const RegularityFunction& reg,
                                    std::size_t max_symbol_length,
                                    std::size_t budget) {
  if (max_symbol_length < 1) fail(ErrorCode::BadConfig, "max_symbol_length must be >= 1");
  std::vector<Cycle> out;
  std::size_t nodes = 0;
  Word w;
  const int A = sys.alphabet();

  // DFS over admissible prefixes; a leaf survives when it closes into an
  // admissible loop and is the canonical rotation of a primitive word.
  auto dfs = [&](auto&& self, std::size_t target_len) -> void {
    if (++nodes > budget)
      fail(ErrorCode::BudgetExceeded, "cycle enumeration exceeded node budget");
    if (w.size() == target_len) {
      if (!sys.allowed(w.back(), w.front())) return;
      if (!is_primitive(w) || !is_canonical(w)) return;
      Cycle c;
      c.word = w;
      c.flow_period = loop_flow_period(roof, w);
      c.lambda_avg = cycle_lambda_average(reg, roof, w);
      c.base_rotation = 0;
      out.push_back(std::move(c));
      return;
    }
    for (int s = 0; s < A; ++s) {
      const Symbol sym = static_cast<Symbol>(s);
      if (!w.empty() && !sys.allowed(w.back(), sym)) continue;
      // Canonical words never start above another of their symbols.
      if (!w.empty() && sym < w.front()) continue;
      w.push_back(sym);
      self(self, target_len);
      w.pop_back();
    }
  };

  for (std::size_t n = 1; n <= max_symbol_length; ++n) dfs(dfs, n);
  return out;
}

CensusWindow census_window(const std::vector<Cycle>& cycles,
                           const RegularityFunction& reg, double T,
                           double delta, double eta,
                           std::optional<double> delta_prime) {
  if (!(T > 0)) fail(ErrorCode::BadConfig, "window top T must be positive");
  if (!(delta > 0)) fail(ErrorCode::BadConfig, "window width delta must be positive");
  if (delta >= T)
    fail(ErrorCode::DeltaTooLarge, "delta " + fmt17(delta) + " >= window top " + fmt17(T));
  if (delta_prime && delta >= *delta_prime)
    fail(ErrorCode::DeltaTooLarge,
         "delta " + fmt17(delta) + " >= regularity scale " + fmt17(*delta_prime));

  CensusWindow win;
  win.T = T;
  win.delta = delta;
  win.eta = eta;
  for (const Cycle& c : cycles) {
    if (!(c.flow_period > T - delta && c.flow_period <= T)) continue;
    if (c.lambda_avg >= eta) {
      Cycle m = c;
      // Marked point: lex-min rotation whose depth-d word clears eta.
      std::size_t best = m.word.size();
      for (std::size_t k = 0; k < m.word.size(); ++k) {
        if (rotation_lambda(reg, m.word, k) < eta) continue;
        if (best == m.word.size() || rotation_less(m.word, k, best)) best = k;
      }
      if (best == m.word.size()) best = 0;  // unreachable when lambda_avg >= eta
      m.base_rotation = static_cast<int>(best);
      win.members.push_back(std::move(m));
    } else {
      win.irregular.push_back(c);
    }
  }
  return win;
}

SeparationReport verify_separated(const RoofFunction& roof,
                                  const CensusWindow& window, double scale) {
  SeparationReport rep;
  rep.min_distance = std::numeric_limits<double>::infinity();
  const auto& ms = window.members;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    for (std::size_t j = i + 1; j < ms.size(); ++j) {
      const double d =
          bowen_distance(roof, ms[i].base_point(), ms[j].base_point(), window.T);
      ++rep.pairs_checked;
      rep.min_distance = std::min(rep.min_distance, d);
      if (d < scale && !rep.first_violation) {
        rep.separated = false;
        rep.first_violation = std::make_pair(i, j);
      }
    }
  }
  return rep;
}

GrowthReport growth_report(const SymbolicSystem& sys,
                           const RegularityFunction& reg,
                           const std::vector<CensusWindow>& windows) {
  if (windows.size() < 2) fail(ErrorCode::BadConfig, "growth report needs >= 2 windows");

  GrowthReport rep;
  rep.entropy = sys.entropy();
  rep.singular_entropy = singular_entropy(sys, reg);
  rep.entropy_midpoint = entropy_midpoint(rep.singular_entropy, rep.entropy);

  const double h = rep.entropy;
  std::vector<CensusWindow const*> ordered;
  for (const auto& w : windows) ordered.push_back(&w);
  std::sort(ordered.begin(), ordered.end(),
            [](auto* a, auto* b) { return a->T < b->T; });

  double beta = 1.0;
  bool any_empty = false;
  for (auto* w : ordered) {
    const double ref = std::exp(w->T * h);
    const std::size_t n = w->total_count();
    if (n == 0) {
      any_empty = true;
      continue;
    }
    beta = std::min(beta, static_cast<double>(n) * w->T / ref);
    beta = std::min(beta, ref / static_cast<double>(n));
  }
  if (any_empty) beta = 0.0;
  rep.beta_fit = beta;

  for (auto* w : ordered) {
    GrowthRow row;
    row.T = w->T;
    row.total_count = w->total_count();
    row.regular_count = w->members.size();
    const double eTh = std::exp(w->T * h);
    row.reference = eTh / w->T;
    row.rate = row.total_count == 0
                   ? -std::numeric_limits<double>::infinity()
                   : std::log(static_cast<double>(row.total_count) * w->T) / w->T;
    row.envelope_lo = beta / w->T * eTh;
    row.envelope_hi = beta > 0 ? eTh / beta : std::numeric_limits<double>::infinity();
    row.envelope_ok = row.total_count > 0 &&
                      row.envelope_lo <= static_cast<double>(row.total_count) &&
                      static_cast<double>(row.total_count) <= row.envelope_hi;
    rep.rows.push_back(row);
  }

  // Least grid T from which the regular counts stay above the halved floor.
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    bool ok = true;
    for (std::size_t j = i; j < rep.rows.size() && ok; ++j) {
      const double floor_j = beta / (2.0 * rep.rows[j].T) * std::exp(rep.rows[j].T * h);
      ok = static_cast<double>(rep.rows[j].regular_count) >= floor_j;
    }
    if (ok) {
      rep.t0_empirical = rep.rows[i].T;
      break;
    }
  }
  return rep;
}

std::string census_csv(const CensusWindow& window) {
  std::ostringstream os;
  os << "word,symbol_length,flow_period,lambda_avg,selected_base_point\n";
  auto emit = [&](const Cycle& c, bool selected) {
    os << word_to_string(c.word) << ',' << c.symbol_length() << ','
       << fmt17(c.flow_period) << ',' << fmt17(c.lambda_avg) << ','
       << (selected ? 1 : 0) << '\n';
  };
  for (const Cycle& c : window.members) emit(c, true);
  for (const Cycle& c : window.irregular) emit(c, false);
  return os.str();
}

}  // namespace lindlab
