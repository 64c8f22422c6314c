#include "lindlab/instance_io.hpp"

#include <cmath>
#include <optional>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lindlab/errors.hpp"
#include "lindlab/util.hpp"

namespace lindlab {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// non-blank, non-comment lines with their 1-based numbers
std::vector<std::pair<int, std::string>> logical_lines(const std::string& text) {
  std::vector<std::pair<int, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    out.push_back({no, t});
  }
  return out;
}

[[noreturn]] void bad_line(const std::string& path, int no,
                           const std::string& what) {
  fail(ErrorCode::BadConfig, path + ":" + std::to_string(no) + ": " + what);
}

double parse_double(const std::string& tok, const std::string& path, int no) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    bad_line(path, no, "not a number: '" + tok + "'");
  }
  if (used != tok.size()) bad_line(path, no, "trailing junk in '" + tok + "'");
  return v;
}

long long parse_ll(const std::string& tok, const std::string& path, int no) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(tok, &used);
  } catch (const std::exception&) {
    bad_line(path, no, "not an integer: '" + tok + "'");
  }
  if (used != tok.size()) bad_line(path, no, "trailing junk in '" + tok + "'");
  return v;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// "key = value"; returns false when the line has no '='
bool key_value(const std::string& line, std::string& key, std::string& val) {
  const std::size_t eq = line.find('=');
  if (eq == std::string::npos) return false;
  key = trim(line.substr(0, eq));
  val = trim(line.substr(eq + 1));
  return !key.empty();
}

Word parse_word(const std::string& s, int depth, int alphabet,
                const std::string& path, int no) {
  if (static_cast<int>(s.size()) != depth)
    fail(ErrorCode::BadWord, path + ":" + std::to_string(no) + ": word '" + s +
                                 "' is not depth " + std::to_string(depth));
  Word w;
  for (char c : s) {
    if (c < '0' || c > '9' || c - '0' >= alphabet)
      fail(ErrorCode::BadWord, path + ":" + std::to_string(no) + ": symbol '" +
                                   std::string(1, c) + "' outside alphabet");
    w.push_back(static_cast<Symbol>(c - '0'));
  }
  return w;
}

std::string word_text(std::size_t code, int depth, int alphabet) {
  std::string s(static_cast<std::size_t>(depth), '0');
  for (int i = depth - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] =
        static_cast<char>('0' + static_cast<int>(code % alphabet));
    code /= static_cast<std::size_t>(alphabet);
  }
  return s;
}

struct TableAcc {
  std::string kind;  // "roof", "lambda", or observable name
  int line = 0;
  int depth = -1;
  double holder_L = 1.0;
  double holder_alpha = 1.0;
  bool polys_allowed = false;
  std::vector<std::tuple<int, std::string, std::string>> entries;  // line, word, value
};

WordTable finalize_scalar_table(const SymbolicSystem& sys, const TableAcc& acc,
                                const std::string& path) {
  if (acc.depth < 1)
    bad_line(path, acc.line, "section '" + acc.kind + "' needs depth >= 1");
  WordTable t;
  t.depth = acc.depth;
  t.alphabet = sys.alphabet();
  std::size_t codes = 1;
  for (int i = 0; i < t.depth; ++i) codes *= static_cast<std::size_t>(t.alphabet);
  t.value.assign(codes, 0.0);
  t.has.assign(codes, 0);
  for (const auto& [no, wtext, vtext] : acc.entries) {
    const Word w = parse_word(wtext, t.depth, t.alphabet, path, no);
    if (!sys.word_admissible(w))
      fail(ErrorCode::BadWord,
           path + ":" + std::to_string(no) + ": word '" + wtext +
               "' is not admissible");
    const std::size_t code = word_code(w, t.alphabet);
    if (t.has[code]) bad_line(path, no, "duplicate word '" + wtext + "'");
    t.value[code] = parse_double(vtext, path, no);
    t.has[code] = 1;
  }
  for (std::size_t code = 0; code < codes; ++code) {
    if (t.has[code]) continue;
    const std::string wtext = word_text(code, t.depth, t.alphabet);
    Word w;
    for (char c : wtext) w.push_back(static_cast<Symbol>(c - '0'));
    if (sys.word_admissible(w))
      fail(ErrorCode::MissingWord, path + ": section '" + acc.kind +
                                       "' lacks word '" + wtext + "'");
  }
  return t;
}

Observable finalize_observable(const SymbolicSystem& sys, const TableAcc& acc,
                               const std::string& path) {
  if (acc.depth < 1)
    bad_line(path, acc.line, "observable '" + acc.kind + "' needs depth >= 1");
  const int alphabet = sys.alphabet();
  std::size_t codes = 1;
  for (int i = 0; i < acc.depth; ++i) codes *= static_cast<std::size_t>(alphabet);
  std::vector<Poly> prof(codes, Poly::constant(0.0));
  std::vector<char> has(codes, 0);
  for (const auto& [no, wtext, vtext] : acc.entries) {
    const Word w = parse_word(wtext, acc.depth, alphabet, path, no);
    if (!sys.word_admissible(w))
      fail(ErrorCode::BadWord,
           path + ":" + std::to_string(no) + ": word '" + wtext +
               "' is not admissible");
    const std::size_t code = word_code(w, alphabet);
    if (has[code]) bad_line(path, no, "duplicate word '" + wtext + "'");
    const std::vector<std::string> toks = split_ws(vtext);
    if (toks.empty()) bad_line(path, no, "empty value");
    if (toks[0] == "poly") {
      if (toks.size() < 2) bad_line(path, no, "poly needs coefficients");
      std::vector<double> c;
      for (std::size_t i = 1; i < toks.size(); ++i)
        c.push_back(parse_double(toks[i], path, no));
      prof[code] = Poly::from_coeffs(c);
    } else {
      if (toks.size() != 1) bad_line(path, no, "scalar value expected");
      prof[code] = Poly::constant(parse_double(toks[0], path, no));
    }
    has[code] = 1;
  }
  for (std::size_t code = 0; code < codes; ++code) {
    if (has[code]) continue;
    const std::string wtext = word_text(code, acc.depth, alphabet);
    Word w;
    for (char c : wtext) w.push_back(static_cast<Symbol>(c - '0'));
    if (sys.word_admissible(w))
      fail(ErrorCode::MissingWord, path + ": observable '" + acc.kind +
                                       "' lacks word '" + wtext + "'");
  }
  return Observable::from_profiles(sys, acc.kind, acc.depth, prof,
                                   acc.holder_L, acc.holder_alpha);
}

std::string resolve(const std::string& dir, const std::string& p) {
  std::filesystem::path fp(p);
  if (fp.is_absolute() || dir.empty()) return p;
  return (std::filesystem::path(dir) / fp).string();
}

}  // namespace

const Observable& InstanceSpec::observable(const std::string& want) const {
  for (const Observable& f : observables)
    if (f.name == want) return f;
  fail(ErrorCode::BadConfig, "instance '" + name + "' has no observable '" +
                                 want + "'");
}

InstanceSpec load_instance(const std::string& path) {
  const auto lines = logical_lines(read_file(path));

  std::string name;
  std::vector<Observable> observables;
  std::optional<SymbolicSystem> sys;
  int alphabet = 0;
  std::vector<std::uint8_t> adj;
  std::vector<char> row_seen;

  TableAcc acc;
  bool in_section = false;
  bool roof_done = false, lambda_done = false;
  WordTable roof_table, lambda_table;

  auto build_sys = [&](int no) {
    if (sys) return;
    if (alphabet < 1) bad_line(path, no, "alphabet must come before sections");
    for (int i = 0; i < alphabet; ++i)
      if (!row_seen[static_cast<std::size_t>(i)])
        bad_line(path, no, "missing row " + std::to_string(i));
    sys = SymbolicSystem::from_transitions(alphabet, adj);
  };
  auto close_section = [&] {
    if (!in_section) return;
    if (acc.kind == "roof") {
      roof_table = finalize_scalar_table(*sys, acc, path);
      roof_done = true;
    } else if (acc.kind == "lambda") {
      lambda_table = finalize_scalar_table(*sys, acc, path);
      lambda_done = true;
    } else {
      observables.push_back(finalize_observable(*sys, acc, path));
    }
  };

  for (const auto& [no, line] : lines) {
    if (line.front() == '[') {
      if (line.back() != ']') bad_line(path, no, "unterminated section header");
      build_sys(no);
      close_section();
      const std::string inner = trim(line.substr(1, line.size() - 2));
      acc = TableAcc{};
      acc.line = no;
      if (inner == "roof" || inner == "lambda") {
        if ((inner == "roof" && roof_done) || (inner == "lambda" && lambda_done))
          bad_line(path, no, "duplicate section '" + inner + "'");
        acc.kind = inner;
      } else if (inner.rfind("observable ", 0) == 0) {
        acc.kind = trim(inner.substr(11));
        if (acc.kind.empty()) bad_line(path, no, "observable needs a name");
        for (const Observable& f : observables)
          if (f.name == acc.kind)
            bad_line(path, no, "duplicate observable '" + acc.kind + "'");
        acc.polys_allowed = true;
      } else {
        bad_line(path, no, "unknown section '" + inner + "'");
      }
      in_section = true;
      continue;
    }

    std::string key, val;
    if (!key_value(line, key, val)) bad_line(path, no, "expected key = value");

    if (!in_section) {
      if (key == "name") {
        name = val;
      } else if (key == "alphabet") {
        if (alphabet != 0) bad_line(path, no, "duplicate alphabet");
        alphabet = static_cast<int>(parse_ll(val, path, no));
        if (alphabet < 1) bad_line(path, no, "alphabet must be >= 1");
        adj.assign(static_cast<std::size_t>(alphabet) * alphabet, 0);
        row_seen.assign(static_cast<std::size_t>(alphabet), 0);
      } else if (key.rfind("row ", 0) == 0) {
        if (alphabet < 1) bad_line(path, no, "alphabet must come before rows");
        const long long r = parse_ll(trim(key.substr(4)), path, no);
        if (r < 0 || r >= alphabet) bad_line(path, no, "row index out of range");
        const auto toks = split_ws(val);
        if (static_cast<int>(toks.size()) != alphabet)
          bad_line(path, no, "row needs one flag per symbol");
        for (int c = 0; c < alphabet; ++c) {
          if (toks[static_cast<std::size_t>(c)] != "0" &&
              toks[static_cast<std::size_t>(c)] != "1")
            bad_line(path, no, "row flags must be 0 or 1");
          adj[static_cast<std::size_t>(r) * alphabet + c] =
              toks[static_cast<std::size_t>(c)] == "1" ? 1 : 0;
        }
        row_seen[static_cast<std::size_t>(r)] = 1;
      } else {
        bad_line(path, no, "unknown key '" + key + "'");
      }
      continue;
    }

    if (key == "depth") {
      acc.depth = static_cast<int>(parse_ll(val, path, no));
    } else if (acc.polys_allowed && key == "holder_L") {
      acc.holder_L = parse_double(val, path, no);
    } else if (acc.polys_allowed && key == "holder_alpha") {
      acc.holder_alpha = parse_double(val, path, no);
    } else {
      acc.entries.push_back({no, key, val});
    }
  }
  if (lines.empty()) fail(ErrorCode::BadConfig, path + ": empty instance file");
  build_sys(lines.back().first);
  close_section();

  if (!roof_done) fail(ErrorCode::BadConfig, path + ": missing [roof] section");
  if (!lambda_done)
    fail(ErrorCode::BadConfig, path + ": missing [lambda] section");
  if (name.empty()) name = std::filesystem::path(path).stem().string();
  return InstanceSpec{std::move(name), *sys, RoofFunction(*sys, roof_table),
                      RegularityFunction(*sys, lambda_table),
                      std::move(observables)};
}

std::vector<ScheduleEntry> load_schedule(const std::string& path) {
  const auto text = read_file(path);
  std::istringstream in(text);
  std::string line;
  int no = 0;

  double eps = -1, eta = -1, M = 1, t0 = 1;
  bool header_seen = false, columns_seen = false;
  std::vector<ScheduleEntry> out;

  while (std::getline(in, line)) {
    ++no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      if (header_seen) continue;  // later comments are free-form
      header_seen = true;
      for (const std::string& tok : split_ws(t.substr(1))) {
        std::string key, val;
        if (!key_value(tok, key, val) || val.empty())
          bad_line(path, no, "header token '" + tok + "'");
        if (key == "eps") eps = parse_double(val, path, no);
        else if (key == "eta") eta = parse_double(val, path, no);
        else if (key == "M") M = parse_double(val, path, no);
        else if (key == "t0") t0 = parse_double(val, path, no);
        else bad_line(path, no, "unknown header key '" + key + "'");
      }
      continue;
    }
    if (!columns_seen) {
      if (!header_seen)
        bad_line(path, no, "schedule needs a '# eps=.. eta=..' header first");
      std::string cols;
      for (char c : t)
        if (c != ' ' && c != '\t') cols.push_back(c);
      if (cols != "l,T,k,delta,C")
        bad_line(path, no, "column header must be l,T,k,delta,C");
      columns_seen = true;
      continue;
    }
    std::vector<std::string> f;
    std::string cell;
    std::istringstream row(t);
    while (std::getline(row, cell, ',')) f.push_back(trim(cell));
    if (f.size() != 5) bad_line(path, no, "expected 5 columns");
    ScheduleEntry e;
    e.l = static_cast<int>(parse_ll(f[0], path, no));
    e.T = parse_double(f[1], path, no);
    e.k = parse_ll(f[2], path, no);
    e.delta = parse_double(f[3], path, no);
    e.C = parse_ll(f[4], path, no);
    e.M = M;
    e.eps = eps;
    e.eta = eta;
    e.t0 = t0;
    out.push_back(e);
  }
  if (eps < 0 || eta < 0)
    fail(ErrorCode::BadConfig, path + ": header must set eps and eta");
  if (out.empty()) fail(ErrorCode::BadConfig, path + ": no schedule rows");
  return out;
}

void save_schedule(const std::string& path,
                   const std::vector<ScheduleEntry>& entries) {
  if (entries.empty()) fail(ErrorCode::BadConfig, "empty schedule");
  std::ofstream outf(path, std::ios::binary);
  if (!outf) fail(ErrorCode::IoFailure, "cannot write " + path);
  const ScheduleEntry& h = entries.front();
  outf << "# eps=" << fmt17(h.eps) << " eta=" << fmt17(h.eta) << " M="
       << fmt17(h.M) << " t0=" << fmt17(h.t0) << "\n";
  outf << "l,T,k,delta,C\n";
  for (const ScheduleEntry& e : entries)
    outf << e.l << "," << fmt17(e.T) << "," << e.k << "," << fmt17(e.delta)
         << "," << e.C << "\n";
  if (!outf) fail(ErrorCode::IoFailure, "write failed: " + path);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  ExperimentConfig cfg;
  cfg.dir = std::filesystem::path(path).parent_path().string();
  bool has_instance = false, has_schedule = false;

  for (const auto& [no, line] : logical_lines(read_file(path))) {
    std::string key, val;
    if (!key_value(line, key, val)) bad_line(path, no, "expected key = value");
    if (key == "instance") {
      cfg.instance = resolve(cfg.dir, val);
      has_instance = true;
    } else if (key == "schedule") {
      cfg.schedule = resolve(cfg.dir, val);
      has_schedule = true;
    } else if (key == "observable") {
      cfg.observable = val;
    } else if (key == "mode") {
      if (val != "mme" && val != "equilibrium" && val != "array")
        bad_line(path, no, "mode must be mme, equilibrium, or array");
      cfg.mode = val;
    } else if (key == "potential") {
      cfg.potential = val;
    } else if (key == "array_observables") {
      cfg.array_observables = split_ws(val);
    } else if (key == "reference_observables") {
      cfg.reference_observables = split_ws(val);
    } else if (key == "exact_cap") {
      cfg.exact_cap = parse_ll(val, path, no);
    } else if (key == "samples") {
      cfg.samples = parse_ll(val, path, no);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(parse_ll(val, path, no));
      cfg.has_seed = true;
    } else if (key == "workers") {
      cfg.workers = static_cast<int>(parse_ll(val, path, no));
      if (cfg.workers < 1) bad_line(path, no, "workers must be >= 1");
    } else if (key == "kappa_eps") {
      cfg.kappa_eps = parse_double(val, path, no);
    } else if (key == "ab_threshold") {
      cfg.ab_threshold = parse_double(val, path, no);
    } else if (key == "gammas") {
      cfg.gammas.clear();
      for (const std::string& tok : split_ws(val))
        cfg.gammas.push_back(parse_double(tok, path, no));
    } else if (key == "out") {
      cfg.out = resolve(cfg.dir, val);
    } else if (key == "budget") {
      cfg.budget = static_cast<std::size_t>(parse_ll(val, path, no));
    } else {
      bad_line(path, no, "unknown key '" + key + "'");
    }
  }
  if (!has_instance || !has_schedule)
    fail(ErrorCode::BadConfig, path + ": instance and schedule are required");
  if (cfg.mode == "equilibrium" && cfg.potential.empty())
    fail(ErrorCode::BadConfig, path + ": equilibrium mode needs potential");
  if (cfg.mode == "array" && cfg.array_observables.empty())
    fail(ErrorCode::BadConfig, path + ": array mode needs array_observables");
  if (cfg.mode != "array" && cfg.observable.empty())
    fail(ErrorCode::BadConfig, path + ": observable is required");
  return cfg;
}

std::vector<std::pair<std::string, double>> load_criteria(
    const std::string& path) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [no, line] : logical_lines(read_file(path))) {
    std::string key, val;
    if (!key_value(line, key, val)) bad_line(path, no, "expected key = value");
    for (const auto& [k, v] : out)
      if (k == key) bad_line(path, no, "duplicate criterion '" + key + "'");
    out.push_back({key, parse_double(val, path, no)});
  }
  return out;
}

}  // namespace lindlab
