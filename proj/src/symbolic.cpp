#include "lindlab/symbolic.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

#include "lindlab/util.hpp"

namespace lindlab {

Word word_from_string(const std::string& s) {
  Word w;
  w.reserve(s.size());
  for (char ch : s) {
    if (ch < '0' || ch > '9') fail(ErrorCode::BadWord, "symbol out of range in '" + s + "'");
    w.push_back(static_cast<Symbol>(ch - '0'));
  }
  return w;
}

std::string word_to_string(const Word& w) {
  std::string s;
  s.reserve(w.size());
  for (Symbol a : w) s.push_back(static_cast<char>('0' + a));
  return s;
}

// ---------------------------------------------------------------- system --

SymbolicSystem SymbolicSystem::from_transitions(
    int alphabet, std::span<const std::uint8_t> adj) {
  if (alphabet < 2 || alphabet > 36)
    fail(ErrorCode::BadAlphabet, "alphabet size must be in [2, 36], got " +
                                     std::to_string(alphabet));
  if (adj.size() != static_cast<std::size_t>(alphabet) * alphabet)
    fail(ErrorCode::BadAlphabet, "transition matrix size mismatch");
  SymbolicSystem sys;
  sys.alphabet_ = alphabet;
  sys.adj_.assign(adj.begin(), adj.end());
  for (auto& v : sys.adj_) v = v ? 1 : 0;

  for (int a = 0; a < alphabet; ++a) {
    bool row = false, col = false;
    for (int b = 0; b < alphabet; ++b) {
      row = row || sys.adj_[a * alphabet + b];
      col = col || sys.adj_[b * alphabet + a];
    }
    if (!row)
      fail(ErrorCode::EmptyRow, "symbol " + std::to_string(a) + " has no successor");
    if (!col)
      fail(ErrorCode::EmptyColumn, "symbol " + std::to_string(a) + " has no predecessor");
  }

  // Mixing time: least m with (adj^m) positive. Wielandt: a primitive matrix
  // is positive by power (A-1)^2 + 1.
  const int bound = (alphabet - 1) * (alphabet - 1) + 1;
  std::vector<std::uint8_t> pow = sys.adj_;
  int m = 1;
  auto all_positive = [&](const std::vector<std::uint8_t>& mat) {
    return std::all_of(mat.begin(), mat.end(), [](std::uint8_t v) { return v != 0; });
  };
  while (!all_positive(pow)) {
    if (m >= bound)
      fail(ErrorCode::NonMixing, "no positive power up to Wielandt bound " +
                                     std::to_string(bound));
    std::vector<std::uint8_t> nxt(pow.size(), 0);
    for (int a = 0; a < alphabet; ++a)
      for (int c = 0; c < alphabet; ++c) {
        if (!pow[a * alphabet + c]) continue;
        for (int b = 0; b < alphabet; ++b)
          if (sys.adj_[c * alphabet + b]) nxt[a * alphabet + b] = 1;
      }
    pow.swap(nxt);
    ++m;
  }
  sys.mixing_time_ = m;

  // Perron data by power iteration (right and left vectors, L1-normalized).
  auto iterate = [&](bool left) {
    std::vector<double> v(alphabet, 1.0 / alphabet), nv(alphabet);
    double lambda = 0.0;
    for (int it = 0; it < 200000; ++it) {
      for (int a = 0; a < alphabet; ++a) {
        double acc = 0.0;
        for (int b = 0; b < alphabet; ++b) {
          const bool edge = left ? sys.adj_[b * alphabet + a] != 0
                                 : sys.adj_[a * alphabet + b] != 0;
          if (edge) acc += v[b];
        }
        nv[a] = acc;
      }
      const double norm = std::accumulate(nv.begin(), nv.end(), 0.0);
      for (double& x : nv) x /= norm;
      double delta = 0.0;
      for (int a = 0; a < alphabet; ++a) delta = std::max(delta, std::fabs(nv[a] - v[a]));
      v.swap(nv);
      lambda = norm;
      if (delta < 1e-15) return std::pair{lambda, v};
    }
    fail(ErrorCode::NonConvergence, "power iteration did not converge");
  };
  auto [lr, vr] = iterate(false);
  auto [ll, vl] = iterate(true);
  (void)ll;
  sys.spectral_radius_ = lr;
  sys.entropy_ = std::log(lr);
  sys.perron_right_ = std::move(vr);
  sys.perron_left_ = std::move(vl);
  return sys;
}

SymbolicSystem SymbolicSystem::full_shift(int alphabet) {
  std::vector<std::uint8_t> adj(static_cast<std::size_t>(alphabet) * alphabet, 1);
  return from_transitions(alphabet, adj);
}

bool SymbolicSystem::path_exists(Symbol a, Symbol b, int len) const {
  if (len < 0) return false;
  if (len == 0) return allowed(a, b);
  // reach_[m][a*A+b] == 1 iff a path with m+1 intermediate symbols exists;
  // we need adj^(len+1), i.e. reach_[len - 1] composed once more with adj.
  const int need = len;  // reach_[need-1] = adj^(need+? ) see below
  // reach_[0] = adj^2, reach_[m] = adj^(m+2). Want adj^(len+1): index len-1.
  while (static_cast<int>(reach_.size()) < need) {
    const std::vector<std::uint8_t>& prev =
        reach_.empty() ? adj_ : reach_.back();
    std::vector<std::uint8_t> nxt(adj_.size(), 0);
    for (int i = 0; i < alphabet_; ++i)
      for (int c = 0; c < alphabet_; ++c) {
        if (!prev[i * alphabet_ + c]) continue;
        for (int j = 0; j < alphabet_; ++j)
          if (adj_[c * alphabet_ + j]) nxt[i * alphabet_ + j] = 1;
      }
    reach_.push_back(std::move(nxt));
  }
  return reach_[need - 1][static_cast<std::size_t>(a) * alphabet_ + b] != 0;
}

bool SymbolicSystem::word_admissible(std::span<const Symbol> w) const {
  for (std::size_t i = 0; i + 1 < w.size(); ++i)
    if (!allowed(w[i], w[i + 1])) return false;
  for (Symbol a : w)
    if (a >= alphabet_) return false;
  return true;
}

bool SymbolicSystem::loop_admissible(std::span<const Symbol> w) const {
  if (w.empty()) return false;
  return word_admissible(w) && allowed(w.back(), w.front());
}

std::size_t word_code(std::span<const Symbol> w, int alphabet) {
  std::size_t code = 0;
  for (Symbol a : w) code = code * alphabet + a;
  return code;
}

std::vector<Word> admissible_words(const SymbolicSystem& sys, int depth) {
  std::vector<Word> out;
  Word cur;
  auto rec = [&](auto&& self) -> void {
    if (static_cast<int>(cur.size()) == depth) {
      out.push_back(cur);
      return;
    }
    for (int a = 0; a < sys.alphabet(); ++a) {
      if (!cur.empty() && !sys.allowed(cur.back(), static_cast<Symbol>(a)))
        continue;
      cur.push_back(static_cast<Symbol>(a));
      self(self);
      cur.pop_back();
    }
  };
  rec(rec);
  return out;
}

double WordTable::at(std::span<const Symbol> w) const {
  return at_code(word_code(w, alphabet));
}

double WordTable::at_code(std::size_t code) const {
  if (code >= value.size() || !has[code])
    fail(ErrorCode::MissingWord, "no value for word code " + std::to_string(code));
  return value[code];
}

// ------------------------------------------------------------------ roof --

RoofFunction::RoofFunction(const SymbolicSystem& sys, WordTable table)
    : table_(std::move(table)) {
  const auto words = admissible_words(sys, table_.depth);
  if (words.empty()) fail(ErrorCode::BadConfig, "no admissible words at roof depth");
  min_ = std::numeric_limits<double>::infinity();
  max_ = 0.0;
  for (const Word& w : words) {
    const std::size_t code = word_code(w, table_.alphabet);
    if (code >= table_.has.size() || !table_.has[code])
      fail(ErrorCode::MissingWord, "roof missing word " + word_to_string(w));
    const double v = table_.value[code];
    if (!(v > 0.0))
      fail(ErrorCode::NonPositiveRoof, "roof value for " + word_to_string(w) +
                                           " is " + fmt17(v));
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
  }
  is_constant_ = (min_ == max_);
}

RoofFunction RoofFunction::constant(const SymbolicSystem& sys, double value) {
  WordTable t;
  t.depth = 1;
  t.alphabet = sys.alphabet();
  t.value.assign(sys.alphabet(), value);
  t.has.assign(sys.alphabet(), 1);
  return RoofFunction(sys, std::move(t));
}

// ------------------------------------------------------------ observable --

Observable Observable::from_profiles(const SymbolicSystem& sys,
                                     std::string name, int depth,
                                     const std::vector<Poly>& by_code,
                                     double holder_L, double holder_alpha) {
  Observable f;
  f.name = std::move(name);
  f.depth = depth;
  f.profile = by_code;
  f.holder_L = holder_L;
  f.holder_alpha = holder_alpha;
  const std::size_t want = [&] {
    std::size_t n = 1;
    for (int i = 0; i < depth; ++i) n *= sys.alphabet();
    return n;
  }();
  if (by_code.size() != want)
    fail(ErrorCode::BadConfig, "observable profile table size mismatch");
  f.has.assign(want, 0);
  f.sup_norm = 0.0;
  for (const Word& w : admissible_words(sys, depth)) {
    const std::size_t code = word_code(w, sys.alphabet());
    f.has[code] = 1;
    const Poly& p = by_code[code];
    if (p.degree() > 4)
      fail(ErrorCode::BadConfig, "fiber profile degree exceeds 4");
    double lo, hi;
    poly_range(p, 0.0, 1.0, lo, hi);
    f.sup_norm = std::max({f.sup_norm, std::fabs(lo), std::fabs(hi)});
  }
  return f;
}

// ------------------------------------------------------------- flowpoint --

FlowPoint FlowPoint::periodic(Word w) {
  FlowPoint x;
  if (w.empty()) fail(ErrorCode::BadWord, "empty periodic word");
  x.left_ = w;
  x.right_ = std::move(w);
  return x;
}

FlowPoint FlowPoint::eventually_periodic(Word left, Word center, Word right) {
  FlowPoint x;
  if (left.empty() || right.empty())
    fail(ErrorCode::BadWord, "periodic blocks must be nonempty");
  x.left_ = std::move(left);
  x.center_ = std::move(center);
  x.right_ = std::move(right);
  return x;
}

Symbol FlowPoint::at(std::int64_t i) const {
  if (i < 0) {
    const std::int64_t L = static_cast<std::int64_t>(left_.size());
    return left_[static_cast<std::size_t>(((i % L) + L) % L)];
  }
  const std::int64_t cs = static_cast<std::int64_t>(center_.size());
  if (i < cs) return center_[static_cast<std::size_t>(i)];
  const std::int64_t R = static_cast<std::int64_t>(right_.size());
  return right_[static_cast<std::size_t>((i - cs) % R)];
}

void FlowPoint::read_rel(std::int64_t start, std::span<Symbol> out) const {
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = at(cursor_ + start + static_cast<std::int64_t>(j));
}

bool FlowPoint::purely_periodic() const {
  return center_.empty() && left_ == right_;
}

namespace {

constexpr int kMaxDepthBuf = 16;

double roof_word_value(const RoofFunction& roof, const FlowPoint& x,
                       std::int64_t cursor) {
  Symbol buf[kMaxDepthBuf];
  const int d = roof.depth();
  for (int j = 0; j < d; ++j) buf[j] = x.at(cursor + j);
  return roof.table().at(std::span<const Symbol>(buf, d));
}

}  // namespace

double roof_at(const RoofFunction& roof, const FlowPoint& x) {
  return roof_word_value(roof, x, x.cursor());
}

double observable_at(const RoofFunction& roof, const Observable& f,
                     const FlowPoint& x) {
  Symbol buf[kMaxDepthBuf];
  const int d = f.depth;
  for (int j = 0; j < d; ++j) buf[j] = x.at(x.cursor() + j);
  const std::size_t code =
      word_code(std::span<const Symbol>(buf, d), roof.table().alphabet);
  const double r = roof_at(roof, x);
  return f.profile[code].eval(x.height() / r);
}

double loop_flow_period(const RoofFunction& roof, std::span<const Symbol> w) {
  const int L = static_cast<int>(w.size());
  const int d = roof.depth();
  Symbol buf[kMaxDepthBuf];
  double acc = 0.0;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < d; ++j) buf[j] = w[(i + j) % L];
    acc += roof.table().at(std::span<const Symbol>(buf, d));
  }
  return acc;
}

FlowPoint flow(const RoofFunction& roof, FlowPoint x, double t) {
  if (t == 0.0) return x;
  if (x.purely_periodic()) {
    const double period = loop_flow_period(roof, x.right());
    const double q = std::floor(t / period);
    if (q != 0.0) {
      x.set_cursor(x.cursor() + static_cast<std::int64_t>(q) *
                                    static_cast<std::int64_t>(x.right().size()));
      t -= q * period;
      if (t < 0.0) t = 0.0;  // guard rounding
    }
  }
  double h = x.height() + t;
  if (h >= 0.0) {
    for (;;) {
      const double r = roof_word_value(roof, x, x.cursor());
      if (h < r) break;
      h -= r;
      x.set_cursor(x.cursor() + 1);
    }
  } else {
    while (h < 0.0) {
      x.set_cursor(x.cursor() - 1);
      h += roof_word_value(roof, x, x.cursor());
    }
  }
  x.set_height(h);
  return x;
}

// -------------------------------------------------------------- distance --

namespace {

// Least |n| with x(cursor_x + n) != y(cursor_y + n); -1 means sequences are
// equal (decided via Fine-Wilf agreement bounds for eventually periodic
// sequences). scan_cap bounds the search; reaching it reports cap depth.
std::int64_t first_difference(const FlowPoint& x, const FlowPoint& y,
                              int scan_cap) {
  if (x.at(x.cursor()) != y.at(y.cursor())) return 0;
  // Agreement bound beyond which periodic tails force equality.
  const std::int64_t cx_f = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(x.center().size()) - x.cursor());
  const std::int64_t cy_f = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(y.center().size()) - y.cursor());
  const std::int64_t fwd_bound = std::max(cx_f, cy_f) +
                                 static_cast<std::int64_t>(x.right().size()) +
                                 static_cast<std::int64_t>(y.right().size()) + 2;
  const std::int64_t cx_b = std::max<std::int64_t>(0, x.cursor());
  const std::int64_t cy_b = std::max<std::int64_t>(0, y.cursor());
  const std::int64_t bwd_bound = std::max(cx_b, cy_b) +
                                 static_cast<std::int64_t>(x.left().size()) +
                                 static_cast<std::int64_t>(y.left().size()) + 2;
  const std::int64_t bound =
      std::min<std::int64_t>(std::max(fwd_bound, bwd_bound), scan_cap);
  bool fwd_alive = true, bwd_alive = true;
  for (std::int64_t n = 1; n <= bound; ++n) {
    if (fwd_alive && n <= fwd_bound &&
        x.at(x.cursor() + n) != y.at(y.cursor() + n))
      return n;
    if (n > fwd_bound) fwd_alive = false;
    if (bwd_alive && n <= bwd_bound &&
        x.at(x.cursor() - n) != y.at(y.cursor() - n))
      return n;
    if (n > bwd_bound) bwd_alive = false;
    if (!fwd_alive && !bwd_alive) break;
  }
  if (bound >= std::max(fwd_bound, bwd_bound)) return -1;  // equal
  return bound;  // agreement at least this deep
}

}  // namespace

double symbolic_distance(const FlowPoint& x, const FlowPoint& y,
                         int scan_cap) {
  const std::int64_t n = first_difference(x, y, scan_cap);
  const double dh = std::fabs(x.height() - y.height());
  if (n < 0) return dh;
  return std::max(std::ldexp(1.0, -static_cast<int>(n)), dh);
}

double bowen_distance(const RoofFunction& roof, const FlowPoint& x,
                      const FlowPoint& y, double t, int scan_cap) {
  FlowPoint a = x, b = y;
  double best = symbolic_distance(a, b, scan_cap);
  double s = 0.0;
  while (s < t) {
    const double ra = roof_word_value(roof, a, a.cursor()) - a.height();
    const double rb = roof_word_value(roof, b, b.cursor()) - b.height();
    const double step = std::min({ra, rb, t - s});
    if (step == ra) {
      a.set_cursor(a.cursor() + 1);
      a.set_height(0.0);
    } else {
      a.set_height(a.height() + step);
    }
    if (step == rb) {
      b.set_cursor(b.cursor() + 1);
      b.set_height(0.0);
    } else {
      b.set_height(b.height() + step);
    }
    s += step;
    best = std::max(best, symbolic_distance(a, b, scan_cap));
  }
  return best;
}

double birkhoff_integral(const RoofFunction& roof, const Observable& f,
                         const FlowPoint& x, double s, double t) {
  if (s == t) return 0.0;
  if (s > t) return -birkhoff_integral(roof, f, x, t, s);
  FlowPoint y = flow(roof, x, s);
  double remaining = t - s;
  double acc = 0.0;
  Symbol buf[kMaxDepthBuf];
  const int d = f.depth;
  while (remaining > 0.0) {
    const double r = roof_word_value(roof, y, y.cursor());
    const double h = y.height();
    const double span = std::min(r - h, remaining);
    for (int j = 0; j < d; ++j) buf[j] = y.at(y.cursor() + j);
    const std::size_t code =
        word_code(std::span<const Symbol>(buf, d), roof.table().alphabet);
    const Poly anti = f.profile[code].antiderivative();
    acc += r * (anti.eval((h + span) / r) - anti.eval(h / r));
    if (span == r - h) {
      y.set_cursor(y.cursor() + 1);
      y.set_height(0.0);
    } else {
      y.set_height(h + span);
    }
    remaining -= span;
    if (span <= 0.0) break;  // defensive: zero-length segment
  }
  return acc;
}

// ---------------------------------------------------------- holder audit --

namespace {

// Random admissible loop word of length in [1, max_len]; retries until the
// closure is admissible.
Word random_loop(const SymbolicSystem& sys, std::mt19937_64& rng, int max_len) {
  std::uniform_int_distribution<int> len_dist(1, max_len);
  std::uniform_int_distribution<int> sym_dist(0, sys.alphabet() - 1);
  for (;;) {
    const int len = len_dist(rng);
    Word w;
    w.push_back(static_cast<Symbol>(sym_dist(rng)));
    bool ok = true;
    for (int i = 1; i < len; ++i) {
      // random admissible successor
      int tries = 0;
      for (;;) {
        const Symbol cand = static_cast<Symbol>(sym_dist(rng));
        if (sys.allowed(w.back(), cand)) {
          w.push_back(cand);
          break;
        }
        if (++tries > 64) { ok = false; break; }
      }
      if (!ok) break;
    }
    if (ok && sys.loop_admissible(w)) return w;
  }
}

}  // namespace

HolderAuditReport audit_holder(const SymbolicSystem& sys,
                               const RoofFunction& roof, const Observable& f,
                               std::uint64_t pairs, std::uint64_t seed) {
  HolderAuditReport rep;
  rep.declared_L = f.holder_L;
  rep.pairs = pairs;
  for (std::uint64_t i = 0; i < pairs; ++i) {
    auto rng = make_rng(seed, /*stream=*/7, i);
    const Word loop = random_loop(sys, rng, 6);
    FlowPoint x = FlowPoint::periodic(loop);
    // y agrees with x on a window around the cursor and differs beyond it:
    // graft a different periodic tail after `agree` symbols.
    std::uniform_int_distribution<int> agree_dist(1, 24);
    const int agree = agree_dist(rng);
    Word center;
    for (int j = 0; j < agree; ++j)
      center.push_back(x.at(j));
    Word tail = random_loop(sys, rng, 6);
    // splice admissibly: walk from center.back() into the tail loop
    int guard = 0;
    while (!sys.allowed(center.back(), tail.front())) {
      std::rotate(tail.begin(), tail.begin() + 1, tail.end());
      if (++guard > static_cast<int>(tail.size())) {
        tail.clear();
        break;
      }
    }
    if (tail.empty()) continue;
    FlowPoint y = FlowPoint::eventually_periodic(loop, center, tail);
    // same height, then jitter within the common roof fiber
    const double r = std::min(roof_at(roof, x), roof_at(roof, y));
    std::uniform_real_distribution<double> hdist(0.0, std::nextafter(r, 0.0));
    const double h1 = hdist(rng), h2 = hdist(rng);
    x.set_height(h1);
    y.set_height(rng() % 2 == 0 ? h1 : h2);
    const double dist = symbolic_distance(x, y);
    if (!(dist > 0.0)) continue;
    const double dv = std::fabs(observable_at(roof, f, x) - observable_at(roof, f, y));
    const double ratio = dv / std::pow(dist, f.holder_alpha);
    rep.worst_ratio = std::max(rep.worst_ratio, ratio);
  }
  rep.ok = rep.worst_ratio <= f.holder_L * (1.0 + 1e-12);
  return rep;
}

}  // namespace lindlab
