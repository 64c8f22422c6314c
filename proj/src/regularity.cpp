#include "lindlab/regularity.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lindlab/util.hpp"

namespace lindlab {

RegularityFunction::RegularityFunction(const SymbolicSystem& sys,
                                       WordTable table)
    : table_(std::move(table)) {
  lambda_max_ = 0.0;
  for (const Word& w : admissible_words(sys, table_.depth)) {
    const std::size_t code = word_code(w, table_.alphabet);
    if (code >= table_.has.size() || !table_.has[code])
      fail(ErrorCode::MissingWord, "lambda missing word " + word_to_string(w));
    const double v = table_.value[code];
    if (v < 0.0)
      fail(ErrorCode::BadConfig,
           "lambda value for " + word_to_string(w) + " is negative");
    lambda_max_ = std::max(lambda_max_, v);
  }
  if (lambda_max_ <= 0.0)
    fail(ErrorCode::BadConfig, "lambda vanishes on every admissible word");
}

double RegularityFunction::delta_prime(double eta) const {
  return eta / lambda_max_;
}

double lambda_at(const RegularityFunction& reg, const FlowPoint& x) {
  Symbol buf[16];
  const int d = reg.depth();
  for (int j = 0; j < d; ++j) buf[j] = x.at(x.cursor() + j);
  return reg.table().at(std::span<const Symbol>(buf, d));
}

double lambda_average(const RegularityFunction& reg, const RoofFunction& roof,
                      const FlowPoint& x, double t) {
  if (!(t > 0.0)) fail(ErrorCode::BadConfig, "lambda_average needs t > 0");
  FlowPoint y = x;
  double remaining = t;
  double acc = 0.0;
  while (remaining > 0.0) {
    const double r = roof_at(roof, y);
    const double span = std::min(r - y.height(), remaining);
    acc += lambda_at(reg, y) * span;
    if (span == r - y.height()) {
      y.set_cursor(y.cursor() + 1);
      y.set_height(0.0);
    } else {
      y.set_height(y.height() + span);
    }
    remaining -= span;
    if (span <= 0.0) break;
  }
  return acc / t;
}

double cycle_lambda_average(const RegularityFunction& reg,
                            const RoofFunction& roof,
                            std::span<const Symbol> word) {
  const int L = static_cast<int>(word.size());
  Symbol buf[16];
  double num = 0.0, den = 0.0;
  for (int i = 0; i < L; ++i) {
    const int dr = roof.depth();
    for (int j = 0; j < dr; ++j) buf[j] = word[(i + j) % L];
    const double r = roof.table().at(std::span<const Symbol>(buf, dr));
    const int dl = reg.depth();
    for (int j = 0; j < dl; ++j) buf[j] = word[(i + j) % L];
    const double lam = reg.table().at(std::span<const Symbol>(buf, dl));
    num += lam * r;
    den += r;
  }
  return num / den;
}

bool in_C_eta(const RegularityFunction& reg, const RoofFunction& roof,
              const FlowPoint& x, double t, double eta) {
  if (lambda_at(reg, x) < eta) return false;
  const FlowPoint y = flow(roof, x, t);
  return lambda_at(reg, y) >= eta;
}

bool in_B_eta(const RegularityFunction& reg, const RoofFunction& roof,
              const FlowPoint& x, double t, double eta) {
  return lambda_average(reg, roof, x, t) < eta;
}

std::optional<double> singular_entropy(const SymbolicSystem& sys,
                                       const RegularityFunction& reg) {
  // Nodes: admissible depth-d words with lambda == 0; edges: shift overlap.
  const int d = reg.depth();
  const auto words = admissible_words(sys, d);
  std::vector<Word> nodes;
  for (const Word& w : words)
    if (reg.table().at(w) == 0.0) nodes.push_back(w);
  if (nodes.empty()) return std::nullopt;

  const std::size_t n = nodes.size();
  std::vector<std::vector<std::size_t>> succ(n);
  auto index_of = [&](const Word& w) -> std::ptrdiff_t {
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), w);
    if (it != nodes.end() && *it == w) return it - nodes.begin();
    return -1;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < sys.alphabet(); ++a) {
      if (d == 1) {
        if (!sys.allowed(nodes[i][0], static_cast<Symbol>(a))) continue;
      } else if (!sys.allowed(nodes[i].back(), static_cast<Symbol>(a))) {
        continue;
      }
      Word next(nodes[i].begin() + (d > 1 ? 1 : 0), nodes[i].end());
      if (d == 1) next.clear();
      next.push_back(static_cast<Symbol>(a));
      const std::ptrdiff_t j = index_of(next);
      if (j >= 0) succ[i].push_back(static_cast<std::size_t>(j));
    }
  }

  // Spectral radius of the (possibly reducible) subgraph via power iteration
  // on A + I; the shift removes periodicity, rho(A) = rho(A + I) - 1.
  std::vector<double> v(n, 1.0), nv(n);
  double rho_shift = 0.0;
  for (int it = 0; it < 100000; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = v[i];  // the +I term
      for (std::size_t j : succ[i]) acc += v[j];
      nv[i] = acc;
    }
    double norm = 0.0;
    for (double x : nv) norm = std::max(norm, x);
    for (double& x : nv) x /= norm;
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      delta = std::max(delta, std::fabs(nv[i] - v[i]));
    v.swap(nv);
    rho_shift = norm;
    if (delta < 1e-14) break;
  }
  const double rho = rho_shift - 1.0;
  if (rho <= 1e-12) return std::nullopt;  // loop-free: no singular orbits
  return std::log(rho);
}

std::optional<double> entropy_midpoint(std::optional<double> h_sing,
                                       double h) {
  if (!h_sing) return std::nullopt;
  return 0.5 * (*h_sing + h);
}

}  // namespace lindlab
