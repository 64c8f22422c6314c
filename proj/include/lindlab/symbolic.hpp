#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lindlab/errors.hpp"
#include "lindlab/poly.hpp"

namespace lindlab {

using Symbol = std::uint8_t;
using Word = std::vector<Symbol>;

Word word_from_string(const std::string& s);
std::string word_to_string(const Word& w);

// Mixing subshift of finite type on a finite alphabet, given by a 0/1
// transition matrix. Validation rejects empty rows/columns and computes the
// mixing time (least power with all entries positive) and the topological
// entropy log(spectral radius) by power iteration.
class SymbolicSystem {
public:
  static SymbolicSystem from_transitions(int alphabet,
                                         std::span<const std::uint8_t> adj);
  static SymbolicSystem full_shift(int alphabet);

  int alphabet() const { return alphabet_; }
  bool allowed(Symbol a, Symbol b) const {
    return adj_[static_cast<std::size_t>(a) * alphabet_ + b] != 0;
  }
  int mixing_time() const { return mixing_time_; }
  double spectral_radius() const { return spectral_radius_; }
  double entropy() const { return entropy_; }
  std::span<const double> perron_right() const { return perron_right_; }
  std::span<const double> perron_left() const { return perron_left_; }

  // Admissible word of exactly `len` symbols strictly between a and b
  // (i.e. a path a -> w_0 -> ... -> w_{len-1} -> b).
  bool path_exists(Symbol a, Symbol b, int len) const;

  bool word_admissible(std::span<const Symbol> w) const;
  // Admissibility of w read cyclically (a closed loop).
  bool loop_admissible(std::span<const Symbol> w) const;

private:
  SymbolicSystem() = default;
  int alphabet_ = 0;
  std::vector<std::uint8_t> adj_;
  int mixing_time_ = 0;
  double spectral_radius_ = 0.0;
  double entropy_ = 0.0;
  std::vector<double> perron_right_, perron_left_;
  // reach_[m] = boolean matrix of admissible paths with m intermediate symbols
  mutable std::vector<std::vector<std::uint8_t>> reach_;
};

std::size_t word_code(std::span<const Symbol> w, int alphabet);

// Enumerate admissible depth-d words in lexicographic order.
std::vector<Word> admissible_words(const SymbolicSystem& sys, int depth);

// Values attached to admissible depth-d cylinder words.
struct WordTable {
  int depth = 1;
  int alphabet = 2;
  std::vector<double> value;       // indexed by word_code; size alphabet^depth
  std::vector<std::uint8_t> has;   // 1 if the code is an admissible word

  double at(std::span<const Symbol> w) const;
  double at_code(std::size_t code) const;
};

// Strictly positive cylinder function of finite depth: the suspension roof.
class RoofFunction {
public:
  RoofFunction(const SymbolicSystem& sys, WordTable table);
  static RoofFunction constant(const SymbolicSystem& sys, double value);

  int depth() const { return table_.depth; }
  const WordTable& table() const { return table_; }
  double min() const { return min_; }
  double max() const { return max_; }
  bool is_constant() const { return is_constant_; }

private:
  WordTable table_;
  double min_ = 0.0, max_ = 0.0;
  bool is_constant_ = false;
};

// Observable on the suspension space: depth-d cylinder coefficients times a
// polynomial fiber profile in the normalized height u = h / roof in [0, 1).
struct Observable {
  std::string name;
  int depth = 1;
  std::vector<Poly> profile;      // indexed by word_code of the depth-d word
  std::vector<std::uint8_t> has;  // admissible-word mask
  double holder_L = 0.0;          // declared regularity data
  double holder_alpha = 1.0;
  double sup_norm = 0.0;          // computed on construction

  static Observable from_profiles(const SymbolicSystem& sys, std::string name,
                                  int depth, const std::vector<Poly>& by_code,
                                  double holder_L, double holder_alpha);
};

// Point of the suspension flow over an eventually periodic bi-infinite
// sequence: `left` tiles indices < 0, `center` occupies [0, center.size()),
// `right` tiles indices >= center.size(). The cursor is the absolute index of
// the base symbol; height lies in [0, roof at cursor).
class FlowPoint {
public:
  static FlowPoint periodic(Word w);
  static FlowPoint eventually_periodic(Word left, Word center, Word right);

  Symbol at(std::int64_t index) const;                 // absolute index
  Symbol rel(std::int64_t n) const { return at(cursor_ + n); }
  void read_rel(std::int64_t start, std::span<Symbol> out) const;

  std::int64_t cursor() const { return cursor_; }
  double height() const { return height_; }
  void set_cursor(std::int64_t c) { cursor_ = c; }
  void set_height(double h) { height_ = h; }

  const Word& left() const { return left_; }
  const Word& center() const { return center_; }
  const Word& right() const { return right_; }
  bool purely_periodic() const;

private:
  Word left_, center_, right_;
  std::int64_t cursor_ = 0;
  double height_ = 0.0;
};

double roof_at(const RoofFunction& roof, const FlowPoint& x);
double observable_at(const RoofFunction& roof, const Observable& f,
                     const FlowPoint& x);

// Flow by time t (either sign): advances the fiber height, resolving symbol
// crossings exactly; purely periodic points reduce t modulo the flow period.
FlowPoint flow(const RoofFunction& roof, FlowPoint x, double t);

// Flow period of a purely periodic point (sum of roof values over one loop).
double loop_flow_period(const RoofFunction& roof, std::span<const Symbol> w);

// d(x, y) = max(2^{-n*}, |h_x - h_y|) with n* the least |n| at which the
// sequences differ around the cursors. Equality of eventually periodic
// sequences is decided exactly; agreement deeper than `scan_cap` symbols on
// both sides with inequality still possible reports ldexp(1, -scan_cap).
double symbolic_distance(const FlowPoint& x, const FlowPoint& y,
                         int scan_cap = 256);

// sup over s in [0, t] of d(g_s x, g_s y), exact via crossing events (the
// distance is piecewise constant between events).
double bowen_distance(const RoofFunction& roof, const FlowPoint& x,
                      const FlowPoint& y, double t, int scan_cap = 256);

// F(x, [s, t]) = integral of f along the orbit segment, in closed form
// (piecewise polynomial antiderivatives between crossings).
double birkhoff_integral(const RoofFunction& roof, const Observable& f,
                         const FlowPoint& x, double s, double t);

struct HolderAuditReport {
  bool ok = true;
  double worst_ratio = 0.0;  // max |f(x)-f(y)| / d(x,y)^alpha observed
  double declared_L = 0.0;
  std::uint64_t pairs = 0;
};

// Sampled audit of the declared Holder data: random eventually periodic
// pairs, exact distances and values.
HolderAuditReport audit_holder(const SymbolicSystem& sys,
                               const RoofFunction& roof, const Observable& f,
                               std::uint64_t pairs, std::uint64_t seed);

}  // namespace lindlab
