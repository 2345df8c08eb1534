#pragma once

// Run configuration: an INI-style file with one section per concern.
//
//   schema_version = 1
//   seed = 42
//
//   [problem]   family or expressions, d, m, T, L, domain
//   [problem2]  second problem for couple-test
//   [lyapunov]  polynomial (p, c) or expression (V, rho, form)
//   [solver]    grid and Monte-Carlo budget
//   [check] [estimate] [contraction] [couple] [output]
//
// See docs/config.md for every key.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "sfpe/error.hpp"
#include "sfpe/grid.hpp"
#include "sfpe/lyapunov.hpp"
#include "sfpe/problem.hpp"
#include "sfpe/solver.hpp"

namespace sfpe {

inline constexpr int kSchemaVersion = 1;

struct LyapunovConfig {
  enum class Kind { polynomial, expression };
  Kind kind = Kind::polynomial;
  double p = 2.0;
  std::optional<double> c;
  std::string V;
  std::optional<double> rho;
  std::optional<LyapunovForm> form;
};

struct SolverConfig {
  std::size_t K = 10;
  std::vector<std::size_t> knots;  // per axis; one entry is replicated
  std::vector<double> lo;
  std::vector<double> hi;
  std::optional<double> half_width;
  McConfig mc;
  std::optional<double> lambda;
  double tol = 1e-3;
  std::size_t max_iter = 50;
};

struct CheckConfig {
  std::size_t points = 10000;
  std::vector<std::vector<double>> probes;
  double t = 0.0;
  std::vector<double> x;  // empty: origin
  std::optional<double> s;
  std::size_t paths = 100000;
  std::size_t steps = 100;
  std::optional<double> kappa;
};

struct EstimateConfig {
  double t = 0.0;
  std::vector<double> x;
  std::size_t depth = 1;
  NestedConfig nested;
};

struct CoupleConfig {
  std::vector<double> x0;
  std::size_t paths = 1000;
  std::size_t steps = 1000;
  double radius = 2.0;  // coupling region |x| <= radius
  std::vector<double> freeze_x0;  // a start point where both coefficients vanish
};

struct OutputConfig {
  std::string dir = ".";
  int verbosity = 1;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  ProblemConfig problem;
  std::optional<ProblemConfig> problem2;
  std::optional<LyapunovConfig> lyapunov;
  SolverConfig solver;
  bool residual = true;
  CheckConfig check;
  EstimateConfig estimate;
  std::vector<double> lambdas;
  CoupleConfig couple;
  OutputConfig output;
  std::set<std::string> sections;

  bool has(const std::string& section) const { return sections.count(section) != 0; }
};

namespace config_detail {

using boost::property_tree::ptree;

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

class Section {
 public:
  Section(std::string name, const ptree* tree) : name_(std::move(name)), tree_(tree) {}

  bool present() const { return tree_ != nullptr; }
  const std::string& name() const { return name_; }
  std::string key(const std::string& k) const { return name_.empty() ? k : name_ + "." + k; }

  std::optional<std::string> raw(const std::string& k) const {
    if (!tree_) return std::nullopt;
    auto v = tree_->get_optional<std::string>(ptree::path_type(k, '\0'));
    if (!v) return std::nullopt;
    used_.insert(k);
    return trim(*v);
  }

  std::string required(const std::string& k) const {
    auto v = raw(k);
    if (!v || v->empty()) throw ConfigError("missing key '" + key(k) + "'");
    return *v;
  }

  double number(const std::string& k, const std::string& text) const {
    try {
      std::size_t pos = 0;
      const double x = std::stod(text, &pos);
      if (pos != text.size() || !std::isfinite(x)) throw std::invalid_argument("trailing");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("invalid number '" + text + "' for key '" + key(k) + "'");
    }
  }

  std::optional<double> real(const std::string& k) const {
    auto v = raw(k);
    if (!v) return std::nullopt;
    return number(k, *v);
  }

  double real(const std::string& k, double fallback) const { return real(k).value_or(fallback); }

  std::optional<std::size_t> count(const std::string& k) const {
    auto v = real(k);
    if (!v) return std::nullopt;
    if (*v < 0 || std::floor(*v) != *v || *v > 9.0e15)
      throw ConfigError("key '" + key(k) + "' must be a non-negative integer");
    return static_cast<std::size_t>(*v);
  }

  std::size_t count(const std::string& k, std::size_t fallback) const { return count(k).value_or(fallback); }

  std::vector<double> list(const std::string& k) const {
    auto v = raw(k);
    if (!v || v->empty()) return {};
    std::vector<double> out;
    for (const auto& item : split(*v, ',')) out.push_back(number(k, item));
    return out;
  }

  // Semicolon-separated points, each a comma-separated list.
  std::vector<std::vector<double>> points(const std::string& k) const {
    auto v = raw(k);
    std::vector<std::vector<double>> out;
    if (!v || v->empty()) return out;
    for (const auto& item : split(*v, ';')) {
      std::vector<double> p;
      for (const auto& c : split(item, ',')) p.push_back(number(k, c));
      out.push_back(std::move(p));
    }
    return out;
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [k, child] : *tree_) {
      if (!child.empty()) continue;  // sections are checked on their own
      if (!used_.count(k)) throw ConfigError("unknown key '" + key(k) + "'");
    }
  }

 private:
  std::string name_;
  const ptree* tree_;
  mutable std::set<std::string> used_;
};

inline Section section(const ptree& root, const std::string& name) {
  auto child = root.get_child_optional(ptree::path_type(name, '\0'));
  return Section(name, child ? &*child : nullptr);
}

inline Domain parse_domain(const Section& s, std::size_t d) {
  const std::string kind = s.raw("domain").value_or("full");
  if (kind == "full" || kind == "full-space") return Domain::full_space();
  if (kind != "box") throw ConfigError("key '" + s.key("domain") + "' must be 'full' or 'box'");
  auto lo = s.list("lo"), hi = s.list("hi");
  if (lo.size() == 1) lo.assign(d, lo[0]);
  if (hi.size() == 1) hi.assign(d, hi[0]);
  if (lo.size() != d || hi.size() != d) throw ConfigError("box domain in '" + s.name() + "' needs lo and hi with d entries");
  try {
    return Domain::box(lo, hi);
  } catch (const Error& e) {
    throw ConfigError(std::string(e.what()) + " in section '" + s.name() + "'");
  }
}

inline ProblemConfig parse_problem(const Section& s) {
  ProblemConfig p;
  p.family = s.raw("family").value_or("");
  p.d = s.count("d", 1);
  p.m = s.count("m");
  p.T = s.real("T", 1.0);
  p.L = s.real("L");
  for (const char* k : {"scale", "theta", "drift", "vol", "radius"})
    if (auto v = s.real(k)) p.params[k] = *v;
  if (auto mu = s.raw("mu")) {
    if (p.d != 1) throw ConfigError("key '" + s.key("mu") + "' is only valid for d = 1; use mu1..mud");
    p.drift = {*mu};
  } else if (p.family.empty()) {
    for (std::size_t i = 1; i <= p.d; ++i) p.drift.push_back(s.raw("mu" + std::to_string(i)).value_or("0"));
  }
  const std::size_t m = p.m.value_or(p.d);
  if (auto sig = s.raw("sigma")) {
    p.diffusion = {*sig};
  } else if (p.family.empty()) {
    for (std::size_t i = 1; i <= p.d; ++i)
      for (std::size_t j = 1; j <= m; ++j)
        p.diffusion.push_back(s.raw("sigma" + std::to_string(i) + "_" + std::to_string(j)).value_or("0"));
  }
  if (!p.family.empty() && (!p.drift.empty() || !p.diffusion.empty()))
    throw ConfigError("section '" + s.name() + "' sets both a family and explicit coefficients");
  p.f = s.raw("f").value_or("0");
  p.g = s.raw("g").value_or("0");
  p.domain = parse_domain(s, p.d);
  s.reject_unknown();
  return p;
}

}  // namespace config_detail

inline RunConfig parse_config(std::istream& in) {
  using namespace config_detail;
  ptree root;
  try {
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig cfg;
  Section top("", &root);
  const auto version = top.required("schema_version");
  if (version != std::to_string(kSchemaVersion))
    throw ConfigError("unsupported schema_version '" + version + "' (expected " + std::to_string(kSchemaVersion) + ")");
  const auto seed = top.required("seed");
  try {
    std::size_t pos = 0;
    cfg.seed = std::stoull(seed, &pos);
    if (pos != seed.size()) throw std::invalid_argument("seed");
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + seed + "' for key 'seed'");
  }
  top.reject_unknown();

  static const std::set<std::string> known{"problem", "problem2", "lyapunov", "solver", "check",
                                           "estimate", "contraction", "couple", "output"};
  for (const auto& [name, child] : root) {
    if (child.empty()) continue;
    if (!known.count(name)) throw ConfigError("unknown section '[" + name + "]'");
    cfg.sections.insert(name);
  }

  if (!cfg.has("problem")) throw ConfigError("missing section '[problem]'");
  cfg.problem = parse_problem(section(root, "problem"));
  if (cfg.has("problem2")) cfg.problem2 = parse_problem(section(root, "problem2"));

  if (auto s = section(root, "lyapunov"); s.present()) {
    LyapunovConfig ly;
    const auto kind = s.raw("kind").value_or("polynomial");
    if (kind == "polynomial") {
      ly.kind = LyapunovConfig::Kind::polynomial;
      ly.p = s.real("p", 2.0);
      ly.c = s.real("c");
    } else if (kind == "expression") {
      ly.kind = LyapunovConfig::Kind::expression;
      ly.V = s.required("V");
      ly.rho = s.real("rho");
      if (auto form = s.raw("form")) {
        if (*form == "elliptic")
          ly.form = LyapunovForm::elliptic;
        else if (*form == "space-time")
          ly.form = LyapunovForm::space_time;
        else
          throw ConfigError("key 'lyapunov.form' must be 'elliptic' or 'space-time'");
      }
    } else {
      throw ConfigError("key 'lyapunov.kind' must be 'polynomial' or 'expression'");
    }
    s.reject_unknown();
    cfg.lyapunov = ly;
  }

  if (auto s = section(root, "solver"); s.present()) {
    auto& sv = cfg.solver;
    sv.K = s.count("K", 10);
    for (double k : s.list("knots")) {
      if (k < 2 || std::floor(k) != k) throw ConfigError("key 'solver.knots' needs integers >= 2");
      sv.knots.push_back(static_cast<std::size_t>(k));
    }
    sv.lo = s.list("lo");
    sv.hi = s.list("hi");
    sv.half_width = s.real("half_width");
    sv.mc.paths = s.count("paths", 1000);
    sv.mc.steps = s.count("steps", 50);
    if (auto q = s.raw("quadrature")) {
      if (*q == "left")
        sv.mc.quadrature = Quadrature::left;
      else if (*q == "trapezoid")
        sv.mc.quadrature = Quadrature::trapezoid;
      else
        throw ConfigError("key 'solver.quadrature' must be 'left' or 'trapezoid'");
    }
    if (auto l = s.raw("lambda"); l && *l != "auto") sv.lambda = s.number("lambda", *l);
    sv.tol = s.real("tol", 1e-3);
    sv.max_iter = s.count("max_iter", 50);
    if (auto r = s.raw("residual")) {
      if (*r == "true")
        cfg.residual = true;
      else if (*r == "false")
        cfg.residual = false;
      else
        throw ConfigError("key 'solver.residual' must be 'true' or 'false'");
    }
    s.reject_unknown();
  }

  if (auto s = section(root, "check"); s.present()) {
    auto& c = cfg.check;
    c.points = s.count("points", c.points);
    c.probes = s.points("probes");
    c.t = s.real("t", 0.0);
    c.x = s.list("x");
    c.s = s.real("s");
    c.paths = s.count("paths", c.paths);
    c.steps = s.count("steps", c.steps);
    c.kappa = s.real("kappa");
    s.reject_unknown();
  }

  if (auto s = section(root, "estimate"); s.present()) {
    auto& e = cfg.estimate;
    e.t = s.real("t", 0.0);
    e.x = s.list("x");
    e.depth = s.count("depth", 1);
    if (auto w = s.raw("widths")) {
      e.nested.widths.clear();
      for (const auto& level : split(*w, ';')) {
        const auto pair = split(level, ',');
        if (pair.size() != 2) throw ConfigError("key 'estimate.widths' expects 'Ng,Nf[;Ng,Nf...]'");
        e.nested.widths.emplace_back(static_cast<std::size_t>(s.number("widths", pair[0])),
                                     static_cast<std::size_t>(s.number("widths", pair[1])));
      }
    }
    e.nested.steps = s.count("steps", e.nested.steps);
    if (auto r = s.raw("time_rule")) {
      if (*r == "gauss-legendre")
        e.nested.time_rule = TimeRule::gauss_legendre;
      else if (*r == "uniform")
        e.nested.time_rule = TimeRule::uniform;
      else
        throw ConfigError("key 'estimate.time_rule' must be 'gauss-legendre' or 'uniform'");
    }
    e.nested.time_nodes = s.count("time_nodes", e.nested.time_nodes);
    e.nested.max_work = s.real("max_work", e.nested.max_work);
    s.reject_unknown();
  }

  if (auto s = section(root, "contraction"); s.present()) {
    cfg.lambdas = s.list("lambdas");
    s.reject_unknown();
  }

  if (auto s = section(root, "couple"); s.present()) {
    auto& c = cfg.couple;
    c.x0 = s.list("x0");
    c.paths = s.count("paths", c.paths);
    c.steps = s.count("steps", c.steps);
    c.radius = s.real("radius", c.radius);
    c.freeze_x0 = s.list("freeze_x0");
    s.reject_unknown();
  }

  if (auto s = section(root, "output"); s.present()) {
    cfg.output.dir = s.raw("dir").value_or(".");
    cfg.output.verbosity = static_cast<int>(s.count("verbosity", 1));
    s.reject_unknown();
  }

  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

inline LyapunovSpec make_lyapunov(const LyapunovConfig& ly, const ProblemSpec& p) {
  if (ly.kind == LyapunovConfig::Kind::polynomial) {
    const auto c = ly.c ? ly.c : p.growth_constant;
    if (!c) throw ConfigError("key 'lyapunov.c' is required: the problem has no analytic growth constant");
    return LyapunovSpec::polynomial(ly.p, *c, p.d);
  }
  const auto form = ly.form.value_or(ly.rho ? LyapunovForm::elliptic : LyapunovForm::space_time);
  auto ast = expr::parse(ly.V, expr::Role::lyapunov, p.d);
  if (form == LyapunovForm::elliptic) return LyapunovSpec::elliptic(std::move(ast), ly.rho.value_or(0.0));
  return LyapunovSpec::space_time(std::move(ast));
}

inline GridSpec make_grid(const SolverConfig& sv, const ProblemSpec& p) {
  if (p.d > GridSpec::kMaxDim)
    throw ConfigError("the grid solver supports d <= 3; use the estimate subcommand for d = " + std::to_string(p.d));
  GridSpec g;
  g.T = p.T;
  g.K = sv.K;
  g.n = sv.knots.empty() ? std::vector<std::size_t>(p.d, 41) : sv.knots;
  if (g.n.size() == 1) g.n.assign(p.d, g.n[0]);
  g.lo = sv.lo;
  g.hi = sv.hi;
  if (g.lo.empty() || g.hi.empty()) {
    double half = 0.0;
    if (sv.half_width) {
      half = *sv.half_width;
    } else {
      // six standard deviations of the driving noise over [0, T]
      const auto [mu_sup, sigma_sup] = coefficient_sup_at(p, std::vector<double>(p.d, 0.0));
      half = 6.0 * std::sqrt(p.T) * (sigma_sup > 0.0 ? sigma_sup : 1.0);
    }
    g.lo.assign(p.d, -half);
    g.hi.assign(p.d, half);
  }
  if (g.lo.size() == 1) g.lo.assign(p.d, g.lo[0]);
  if (g.hi.size() == 1) g.hi.assign(p.d, g.hi[0]);
  try {
    g.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid [solver] grid: ") + e.what());
  }
  if (g.n.size() != p.d) throw ConfigError("key 'solver.knots' needs 1 or d entries");
  return g;
}

}  // namespace sfpe
