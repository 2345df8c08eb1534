#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sfpe/error.hpp"
#include "sfpe/expr.hpp"
#include "sfpe/random.hpp"

namespace sfpe {

// Open state domain: all of R^d or an axis-aligned box (lo, hi).
struct Domain {
  enum class Kind { full_space, box };

  Kind kind = Kind::full_space;
  std::vector<double> lo;
  std::vector<double> hi;

  static Domain full_space() { return {}; }

  static Domain box(std::vector<double> lo, std::vector<double> hi) {
    if (lo.empty() || lo.size() != hi.size()) throw Error("box domain needs matching, non-empty bounds");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) throw Error("box domain needs lo < hi in every coordinate");
    return {Kind::box, std::move(lo), std::move(hi)};
  }

  bool is_box() const noexcept { return kind == Kind::box; }

  bool contains(std::span<const double> x) const noexcept {
    if (!is_box()) return true;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] > lo[i] && x[i] < hi[i])) return false;
    return true;
  }

  // Projects onto the closed box; identity for the full space.
  void clamp(std::span<double> x) const noexcept {
    if (!is_box()) return;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
  }
};

// O_r = { x in O : |x| <= r and the open 1/r-ball around x lies in O }.
struct TruncationSet {
  double r = 1.0;
  Domain parent;

  TruncationSet(double radius, Domain domain) : r(radius), parent(std::move(domain)) {
    if (!(r > 0.0)) throw Error("truncation radius must be positive");
  }

  bool contains(std::span<const double> x) const noexcept {
    double n2 = 0.0;
    for (double xi : x) n2 += xi * xi;
    if (std::sqrt(n2) > r) return false;
    if (!parent.is_box()) return true;
    const double ball = 1.0 / r;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] - ball < parent.lo[i] || x[i] + ball > parent.hi[i]) return false;
    return true;
  }
};

inline bool membership(const TruncationSet& ts, std::span<const double> x) { return ts.contains(x); }

// One fully validated SFPE instance. Immutable after `build`.
struct ProblemSpec {
  std::size_t d = 1;
  std::size_t m = 1;
  double T = 1.0;
  std::vector<expr::Ast> drift;      // d entries
  std::vector<expr::Ast> diffusion;  // d x m, row major
  expr::Ast f;
  expr::Ast g;
  double L = 1.0;
  Domain domain;
  std::string family;                      // empty for expression-defined problems
  std::optional<double> growth_constant;  // c with max{<x,mu>, |sigma|_F^2} <= c (1 + |x|^2)

  bool time_dependent() const {
    auto uses_t = [](const expr::Ast& a) { return a.uses_time(); };
    return std::any_of(drift.begin(), drift.end(), uses_t) || std::any_of(diffusion.begin(), diffusion.end(), uses_t);
  }

  const expr::Ast& sigma(std::size_t i, std::size_t j) const { return diffusion[i * m + j]; }
};

// Raw problem description as it arrives from a configuration file.
struct ProblemConfig {
  std::string family;                   // brownian | ou | gbm | double-well | truncated-ou, or empty
  std::map<std::string, double> params;  // family parameters (scale, theta, drift, vol, radius)
  std::size_t d = 1;
  std::optional<std::size_t> m;
  double T = 1.0;
  std::optional<double> L;
  std::vector<std::string> drift;
  std::vector<std::string> diffusion;  // d*m entries, or a single entry meaning entry * Identity
  std::string f = "0";
  std::string g = "0";
  Domain domain;
};

namespace detail {

inline std::string num(double x) { return "(" + expr::detail::format_number(x) + ")"; }

inline double param(const ProblemConfig& cfg, const std::string& key, double fallback) {
  auto it = cfg.params.find(key);
  return it == cfg.params.end() ? fallback : it->second;
}

// Fills drift/diffusion strings and growth constant for a builtin family.
inline std::optional<double> expand_family(ProblemConfig& cfg) {
  const std::size_t d = cfg.d;
  const double dd = static_cast<double>(d);
  if (cfg.m && *cfg.m != d) throw ConfigError("family '" + cfg.family + "' requires m == d");
  cfg.m = d;
  cfg.drift.assign(d, "0");
  cfg.diffusion.assign(d * d, "0");
  const double s = param(cfg, "scale", 1.0);
  auto diag = [&](const std::string& entry) {
    for (std::size_t i = 0; i < d; ++i) cfg.diffusion[i * d + i] = entry;
  };
  auto xi = [](std::size_t i) { return "x" + std::to_string(i + 1); };

  if (cfg.family == "brownian") {
    diag(expr::detail::format_number(s));
    return dd * s * s;
  }
  if (cfg.family == "ou") {
    const double theta = param(cfg, "theta", 1.0);
    for (std::size_t i = 0; i < d; ++i) cfg.drift[i] = "-" + expr::detail::format_number(theta) + "*" + xi(i);
    diag(expr::detail::format_number(s));
    return std::max(dd * s * s, -theta);
  }
  if (cfg.family == "gbm") {
    const double a = param(cfg, "drift", 0.05);
    const double b = param(cfg, "vol", 0.2);
    for (std::size_t i = 0; i < d; ++i) {
      cfg.drift[i] = num(a) + "*" + xi(i);
      cfg.diffusion[i * d + i] = num(b) + "*" + xi(i);
    }
    const double c = std::max(a, b * b);
    return c > 0.0 ? std::optional<double>(c) : std::nullopt;
  }
  if (cfg.family == "double-well") {
    const double theta = param(cfg, "theta", 1.0);
    for (std::size_t i = 0; i < d; ++i) cfg.drift[i] = num(theta) + "*" + xi(i) + "*(1 - norm2)";
    diag(expr::detail::format_number(s));
    // sup_y y(1-y)/(1+y) over y >= 0 is 3 - 2 sqrt(2)
    return std::max({theta * (3.0 - 2.0 * std::sqrt(2.0)), dd * s * s, 0.0});
  }
  if (cfg.family == "truncated-ou") {
    // OU coefficients multiplied by a C^2 cutoff supported in |x| <= radius
    const double theta = param(cfg, "theta", 1.0);
    const double r = param(cfg, "radius", 5.0);
    const std::string cut = "max(0, 1 - norm2/" + num(r * r) + ")^3";
    for (std::size_t i = 0; i < d; ++i) cfg.drift[i] = "-" + num(theta) + "*" + xi(i) + "*" + cut;
    diag(num(s) + "*" + cut);
    return std::max(dd * s * s, -theta);
  }
  throw ConfigError("unknown problem family '" + cfg.family + "'");
}

}  // namespace detail

inline ProblemSpec build(ProblemConfig cfg) {
  if (cfg.d == 0) throw ConfigError("dimension d must be at least 1");
  if (!(cfg.T > 0.0)) throw ConfigError("horizon T must be positive");
  if (!cfg.L) throw ConfigError("missing Lipschitz constant L");
  if (!(*cfg.L > 0.0)) throw ConfigError("Lipschitz constant L must be positive");

  ProblemSpec p;
  if (!cfg.family.empty()) p.growth_constant = detail::expand_family(cfg);
  p.family = cfg.family;
  p.d = cfg.d;
  p.m = cfg.m.value_or(cfg.d);
  if (p.m == 0) throw ConfigError("Brownian dimension m must be at least 1");
  p.T = cfg.T;
  p.L = *cfg.L;

  if (cfg.drift.size() != p.d)
    throw ConfigError("drift has " + std::to_string(cfg.drift.size()) + " components, expected d = " + std::to_string(p.d));
  if (cfg.diffusion.size() == 1 && p.d * p.m != 1) {
    if (p.m != p.d) throw ConfigError("scalar diffusion shorthand requires m == d");
    std::vector<std::string> full(p.d * p.m, "0");
    for (std::size_t i = 0; i < p.d; ++i) full[i * p.m + i] = cfg.diffusion[0];
    cfg.diffusion = std::move(full);
  }
  if (cfg.diffusion.size() != p.d * p.m)
    throw ConfigError("diffusion has " + std::to_string(cfg.diffusion.size()) + " entries, expected d*m = " +
                      std::to_string(p.d * p.m));

  for (const auto& s : cfg.drift) p.drift.push_back(expr::parse(s, expr::Role::drift, p.d));
  for (const auto& s : cfg.diffusion) p.diffusion.push_back(expr::parse(s, expr::Role::diffusion, p.d));
  p.f = expr::parse(cfg.f, expr::Role::nonlinearity, p.d);
  p.g = expr::parse(cfg.g, expr::Role::terminal, p.d);

  if (cfg.domain.is_box() && cfg.domain.lo.size() != p.d) throw ConfigError("box domain bounds must have d entries");
  p.domain = std::move(cfg.domain);
  return p;
}

// Scale-mixture sampler used by the audits: centred Gaussians with standard
// deviation drawn from {1, 4, 16}.
inline void sample_state(PathNoise& rng, std::span<double> x, std::size_t draw) {
  static constexpr double kScales[] = {1.0, 4.0, 16.0};
  const double scale = kScales[draw % 3];
  for (double& xi : x) xi = scale * rng.normal();
}

struct LipschitzAudit {
  double max_ratio = 0.0;
  bool violation = false;
  double t = 0.0;
  std::vector<double> x;
  double v = 0.0;
  double w = 0.0;
};

// Empirical Lipschitz constant of f in its value argument.
inline LipschitzAudit audit_lipschitz(const ProblemSpec& p, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw Error("audit_lipschitz needs at least one sample");
  LipschitzAudit report;
  report.x.assign(p.d, 0.0);
  PathNoise rng(mix64(seed), 0x11F5ull, 0);
  std::vector<double> x(p.d);
  for (std::size_t k = 0; k < n_samples; ++k) {
    const double t = p.T * rng.uniform();
    sample_state(rng, x, k);
    const double spread = (k % 3 == 0) ? 1.0 : (k % 3 == 1 ? 10.0 : 100.0);
    const double v = spread * rng.normal();
    // alternate wide and near-diagonal pairs to catch local slopes
    const double w = (k % 2 == 0) ? spread * rng.normal() : v + 1e-3 * spread * rng.normal();
    if (v == w) continue;
    double fv, fw;
    try {
      fv = p.f(t, x, v);
      fw = p.f(t, x, w);
    } catch (const EvalError& e) {
      std::string where = "t=" + expr::detail::format_number(t) + ", x=(";
      for (std::size_t i = 0; i < x.size(); ++i) where += (i ? "," : "") + expr::detail::format_number(x[i]);
      where += "), v=" + expr::detail::format_number(v);
      throw EvalError(std::string(e.what()) + " at sample " + where, e.subexpression());
    }
    const double ratio = std::abs(fv - fw) / std::abs(v - w);
    if (ratio > report.max_ratio) {
      report.max_ratio = ratio;
      report.t = t;
      report.x = x;
      report.v = v;
      report.w = w;
    }
  }
  report.violation = report.max_ratio > p.L * (1.0 + 1e-9);
  return report;
}

// Sampled sup of max{<x, mu>, |sigma|_F^2} / (1 + |x|^2), the growth constant
// of the polynomial Lyapunov family.
inline double audit_growth_constant(const ProblemSpec& p, std::size_t n_samples, std::uint64_t seed) {
  PathNoise rng(mix64(seed), 0x6C0Dull, 0);
  std::vector<double> x(p.d);
  double worst = 0.0;
  for (std::size_t k = 0; k < n_samples; ++k) {
    const double t = p.T * rng.uniform();
    sample_state(rng, x, k);
    if (!p.domain.contains(x)) continue;
    double inner = 0.0, frob = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < p.d; ++i) {
      inner += x[i] * p.drift[i](t, x);
      n2 += x[i] * x[i];
      for (std::size_t j = 0; j < p.m; ++j) {
        const double s = p.sigma(i, j)(t, x);
        frob += s * s;
      }
    }
    worst = std::max(worst, std::max(inner, frob) / (1.0 + n2));
  }
  return worst;
}

}  // namespace sfpe
