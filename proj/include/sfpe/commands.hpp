#pragma once

// Subcommands behind the sfpe executable. Each takes a parsed RunConfig plus
// command-line overrides and returns the process exit code:
//   0 success, 1 error, 2 solve hit max_iter without converging, 3 check failed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfpe/config.hpp"
#include "sfpe/error.hpp"
#include "sfpe/grid.hpp"
#include "sfpe/lyapunov.hpp"
#include "sfpe/problem.hpp"
#include "sfpe/random.hpp"
#include "sfpe/sde.hpp"
#include "sfpe/solver.hpp"

namespace sfpe::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kError = 1, kNotConverged = 2, kCheckFailed = 3 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  // estimate
  std::optional<double> t;
  std::optional<std::vector<double>> x;
  std::optional<std::size_t> depth;
  std::optional<std::string> widths;
  // verify-contraction
  std::optional<std::vector<double>> lambdas;
};

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

using json = nlohmann::ordered_json;

inline void apply(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output.dir = *o.out;
}

inline std::size_t threads(const Overrides& o) { return o.threads.value_or(0); }

inline void require(const RunConfig& cfg, const std::string& section, const std::string& command) {
  if (!cfg.has(section)) throw ConfigError(command + " needs a [" + section + "] section");
}

inline std::filesystem::path output_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.output.dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  return os;
}

inline std::vector<double> point_or_origin(const std::vector<double>& x, std::size_t d, const std::string& key) {
  if (x.empty()) return std::vector<double>(d, 0.0);
  if (x.size() == 1 && d > 1) return std::vector<double>(d, x[0]);
  if (x.size() != d) throw ConfigError("key '" + key + "' needs " + std::to_string(d) + " coordinates");
  return x;
}

inline json point_json(std::span<const double> x) { return json(std::vector<double>(x.begin(), x.end())); }

}  // namespace detail

inline int solve(RunConfig cfg, const Overrides& o, Streams io = {}) {
  detail::apply(cfg, o);
  detail::require(cfg, "solver", "solve");
  detail::require(cfg, "lyapunov", "solve");
  const ProblemSpec p = build(cfg.problem);
  const LyapunovSpec V = make_lyapunov(*cfg.lyapunov, p);
  const GridSpec grid = make_grid(cfg.solver, p);
  McConfig mc = cfg.solver.mc;
  mc.seed = cfg.seed;
  mc.threads = detail::threads(o);
  PicardOptions opt;
  opt.lambda = cfg.solver.lambda;
  opt.tol = cfg.solver.tol;
  opt.max_iter = cfg.solver.max_iter;
  opt.residual = cfg.residual;
  if (cfg.output.verbosity > 0)
    opt.on_iteration = [&](std::size_t it, const IterationRecord& rec) {
      io.err << "iteration " << it << ": delta " << expr::detail::format_number(rec.delta);
      if (rec.ratio) io.err << ", ratio " << expr::detail::format_number(*rec.ratio);
      io.err << '\n';
    };
  const SolveReport report = picard_solve(p, V, grid, mc, opt);

  const auto dir = detail::output_dir(cfg);
  {
    auto os = detail::open_output(dir / "report.json");
    report.write_json(os);
  }
  {
    auto os = detail::open_output(dir / "solution.csv");
    report.solution.write_csv(os);
  }
  io.out << (report.converged ? "converged" : "not converged") << " after " << report.iterations.size()
         << " iterations; last delta " << expr::detail::format_number(report.iterations.back().delta);
  if (report.residual) io.out << ", residual " << expr::detail::format_number(*report.residual);
  io.out << "\nwrote " << (dir / "report.json").string() << " and " << (dir / "solution.csv").string() << '\n';
  return report.converged ? kOk : kNotConverged;
}

inline std::vector<std::pair<std::size_t, std::size_t>> parse_widths(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::string level;
  std::istringstream is(text);
  while (std::getline(is, level, ';')) {
    const auto pos = level.find(',');
    if (pos == std::string::npos) throw ConfigError("--widths expects 'Ng,Nf[;Ng,Nf...]'");
    try {
      const std::string lhs = level.substr(0, pos), rhs = level.substr(pos + 1);
      std::size_t a = 0, b = 0;
      const auto ng = std::stoull(lhs, &a);
      const auto nf = std::stoull(rhs, &b);
      if (a != lhs.size() || b != rhs.size()) throw std::invalid_argument("widths");
      out.emplace_back(ng, nf);
    } catch (const std::exception&) {
      throw ConfigError("--widths expects positive integers, got '" + level + "'");
    }
  }
  if (out.empty()) throw ConfigError("--widths is empty");
  return out;
}

inline int estimate(RunConfig cfg, const Overrides& o, Streams io = {}) {
  detail::apply(cfg, o);
  const ProblemSpec p = build(cfg.problem);
  EstimateConfig e = cfg.estimate;
  if (o.t) e.t = *o.t;
  if (o.x) e.x = *o.x;
  if (o.depth) e.depth = *o.depth;
  if (o.widths) e.nested.widths = parse_widths(*o.widths);
  const auto x = detail::point_or_origin(e.x, p.d, "estimate.x");
  const NestedResult r = nested_estimate(p, e.t, x, e.depth, e.nested, BrownianDriver{cfg.seed, 3});
  detail::json j;
  j["estimate"] = r.estimate;
  j["work"] = r.work;
  j["depth"] = e.depth;
  j["widths"] = detail::json::array();
  for (std::size_t level = 0; level < e.depth; ++level) {
    const auto& w = e.nested.widths[std::min(level, e.nested.widths.size() - 1)];
    j["widths"].push_back({w.first, w.second});
  }
  io.out << j.dump() << '\n';
  return kOk;
}

inline int check_lyapunov(RunConfig cfg, const Overrides& o, Streams io = {}) {
  detail::apply(cfg, o);
  detail::require(cfg, "lyapunov", "check-lyapunov");
  const ProblemSpec p = build(cfg.problem);
  const LyapunovSpec V = make_lyapunov(*cfg.lyapunov, p);
  const CheckConfig& c = cfg.check;
  const GeneratorCheck gen = check_generator(p, V, c.points, cfg.seed, c.probes);
  const auto x = detail::point_or_origin(c.x, p.d, "check.x");
  const double s = c.s.value_or(p.T);
  const SupermartingaleReport sm =
      supermartingale_test(p, V, c.t, x, s, c.steps, c.paths, BrownianDriver{cfg.seed, 1}, c.kappa, detail::threads(o));

  detail::json j;
  j["generator"] = {{"points", gen.points},
                    {"max_value", gen.max_value},
                    {"worst_t", gen.worst_t},
                    {"worst_x", detail::point_json(gen.worst_x)},
                    {"violation", gen.violation}};
  if (gen.violation) {
    j["generator"]["violating_t"] = *gen.violating_t;
    j["generator"]["violating_x"] = detail::point_json(gen.violating_x);
    j["generator"]["violating_value"] = gen.violating_value;
  }
  j["supermartingale"] = {{"t", c.t},
                          {"x", detail::point_json(x)},
                          {"s", s},
                          {"start_value", sm.start_value},
                          {"mean", sm.mean},
                          {"standard_error", sm.standard_error},
                          {"allowance", sm.allowance},
                          {"margin", sm.margin},
                          {"escaped", sm.escaped},
                          {"pass", sm.pass}};
  const bool pass = !gen.violation && sm.pass;
  j["pass"] = pass;
  io.out << j.dump(2) << '\n';
  if (!pass) io.err << "check-lyapunov: FAIL\n";
  return pass ? kOk : kCheckFailed;
}

// Measured |Phi(v) - Phi(w)|_lambda / |v - w|_lambda against L / lambda.
// The pair is v = Phi(0) from independent streams (v = 1 if that vanishes)
// and w = 0. A row fails if measured > 1.1 bound + 0.005.
inline int verify_contraction(RunConfig cfg, const Overrides& o, Streams io = {}) {
  detail::apply(cfg, o);
  detail::require(cfg, "solver", "verify-contraction");
  detail::require(cfg, "lyapunov", "verify-contraction");
  const ProblemSpec p = build(cfg.problem);
  const LyapunovSpec V = make_lyapunov(*cfg.lyapunov, p);
  const GridSpec grid = make_grid(cfg.solver, p);
  McConfig mc = cfg.solver.mc;
  mc.seed = cfg.seed;
  mc.threads = detail::threads(o);

  std::vector<double> lambdas = o.lambdas.value_or(cfg.lambdas);
  if (lambdas.empty()) {
    if (!(p.L > 0.0)) throw ConfigError("verify-contraction needs [contraction] lambdas when L = 0");
    lambdas = {2.0 * p.L, 20.0 * p.L};
  }
  for (double l : lambdas)
    if (!(l > 0.0)) throw ConfigError("contraction sweep values must be positive");

  GridFunction v = apply_phi(p, GridFunction(grid), mc, nullptr, 2);
  if (std::all_of(v.values().begin(), v.values().end(), [](double a) { return a == 0.0; })) v = GridFunction(grid, 1.0);
  const GridFunction w(grid);
  const GridFunction weights = lyapunov_on(grid, V);

  const auto dir = detail::output_dir(cfg);
  auto csv = detail::open_output(dir / "contraction.csv");
  bool pass = true;
  io.out << "lambda,measured,bound\n";
  csv << "lambda,measured,bound\n";
  const auto measured = contraction_ratios(p, v, w, weights, lambdas, mc);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const double lambda = lambdas[i];
    const auto& m = measured[i];
    const double bound = p.L / lambda;
    const std::string row = expr::detail::format_number(lambda) + "," + expr::detail::format_number(m.ratio) + "," +
                            expr::detail::format_number(bound) + "\n";
    io.out << row;
    csv << row;
    if (m.ratio > 1.1 * bound + 0.005) {
      pass = false;
      io.err << "verify-contraction: measured " << expr::detail::format_number(m.ratio) << " exceeds bound "
             << expr::detail::format_number(bound) << " at lambda " << expr::detail::format_number(lambda) << '\n';
    }
  }
  return pass ? kOk : kCheckFailed;
}

// Shared-increment coupling of [problem] and [problem2] (or [problem] with
// itself), plus the freeze checks: paths frozen at a domain exit stay put, and
// a path started where the coefficients vanish never moves.
inline int couple_test(RunConfig cfg, const Overrides& o, Streams io = {}) {
  detail::apply(cfg, o);
  const ProblemSpec p1 = build(cfg.problem);
  const ProblemSpec p2 = cfg.problem2 ? build(*cfg.problem2) : p1;
  const CoupleConfig& c = cfg.couple;
  const auto x0 = detail::point_or_origin(c.x0, p1.d, "couple.x0");
  const BrownianDriver drv{cfg.seed, 2};
  const std::size_t threads = detail::threads(o);

  const auto [a, b] = simulate_coupled(p1, p2, 0.0, x0, c.steps, c.paths, drv, threads);
  const double r2 = c.radius * c.radius;
  const auto coupling = check_coupling(a, b, [&](std::span<const double> x) {
    double n2 = 0.0;
    for (double xi : x) n2 += xi * xi;
    return n2 <= r2;
  });
  const FreezeCheck tail_a = check_frozen_tail(a), tail_b = check_frozen_tail(b);

  detail::json j;
  j["coupling"] = {{"exact", coupling.exact},
                   {"max_diff", coupling.max_diff},
                   {"checked_states", coupling.checked_states},
                   {"first_divergence_path", coupling.first_divergence_path ? detail::json(*coupling.first_divergence_path)
                                                                             : detail::json(nullptr)},
                   {"first_divergence_step", coupling.first_divergence_step ? detail::json(*coupling.first_divergence_step)
                                                                             : detail::json(nullptr)}};
  j["frozen_tail"] = {{"exact", tail_a.at_rest && tail_b.at_rest},
                      {"moving_paths", tail_a.moving_paths + tail_b.moving_paths},
                      {"max_displacement", std::max(tail_a.max_displacement, tail_b.max_displacement)}};
  bool pass = coupling.exact && tail_a.at_rest && tail_b.at_rest;
  if (!c.freeze_x0.empty()) {
    const auto y0 = detail::point_or_origin(c.freeze_x0, p1.d, "couple.freeze_x0");
    const PathBatch rest = simulate(p1, 0.0, y0, c.steps, c.paths, drv.substream(1), threads);
    const FreezeCheck f = check_at_rest(rest);
    j["at_rest"] = {{"x0", detail::point_json(y0)},
                    {"exact", f.at_rest},
                    {"moving_paths", f.moving_paths},
                    {"max_displacement", f.max_displacement}};
    pass = pass && f.at_rest;
  }
  j["pass"] = pass;
  io.out << j.dump(2) << '\n';
  if (!coupling.exact)
    io.err << "couple-test: paths diverge inside |x| <= " << expr::detail::format_number(c.radius) << " on path "
           << *coupling.first_divergence_path << " at step " << *coupling.first_divergence_step << '\n';
  return pass ? kOk : kCheckFailed;
}

inline int version(Streams io = {}) {
  io.out << "sfpe " << kVersion << " (config schema " << kSchemaVersion << ")\n";
  return kOk;
}

// Runs fn, mapping library errors to exit code 1 with a one-line message.
inline int guarded(const std::function<int()>& fn, std::ostream& err = std::cerr) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return kError;
}

inline int run(const std::string& command, const std::string& config_path, const Overrides& o, Streams io = {}) {
  return guarded(
      [&]() -> int {
        if (command == "version") return version(io);
        RunConfig cfg = load_config(config_path);
        if (command == "solve") return solve(cfg, o, io);
        if (command == "estimate") return estimate(cfg, o, io);
        if (command == "check-lyapunov") return check_lyapunov(cfg, o, io);
        if (command == "verify-contraction") return verify_contraction(cfg, o, io);
        if (command == "couple-test") return couple_test(cfg, o, io);
        throw ConfigError("unknown subcommand '" + command + "'");
      },
      io.err);
}

}  // namespace sfpe::cli
