// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sfpe/sfpe.hpp"

using namespace sfpe;

namespace {

int failures = 0;

void line(int id, const std::string& name, bool pass, const std::string& detail, double seconds) {
  std::printf("%s %d %s: %s [%.1fs]\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double x) { return expr::detail::format_number(x); }

void criterion(int id, const std::string& name, const std::function<bool(std::string&)>& body) {
  const auto start = std::chrono::steady_clock::now();
  std::string detail;
  bool pass = false;
  try {
    pass = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("error: ") + e.what();
  }
  while (!detail.empty() && (detail.back() == ' ' || detail.back() == ';')) detail.pop_back();
  line(id, name, pass, detail, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
}

RunConfig config(const std::string& name) { return load_config(std::string(SFPE_SOURCE_DIR) + "/configs/" + name); }

struct Run {
  RunConfig cfg;
  ProblemSpec p;
  LyapunovSpec V;
  GridSpec grid;
  McConfig mc;
  PicardOptions opt;
};

Run prepare(const std::string& name, std::size_t threads = 0) {
  Run r;
  r.cfg = config(name);
  r.p = build(r.cfg.problem);
  r.V = make_lyapunov(*r.cfg.lyapunov, r.p);
  r.grid = make_grid(r.cfg.solver, r.p);
  r.mc = r.cfg.solver.mc;
  r.mc.seed = r.cfg.seed;
  r.mc.threads = threads;
  r.opt.lambda = r.cfg.solver.lambda;
  r.opt.tol = r.cfg.solver.tol;
  r.opt.max_iter = r.cfg.solver.max_iter;
  r.opt.residual = false;  // not part of any criterion
  return r;
}

std::string csv(const GridFunction& u) {
  std::ostringstream os;
  u.write_csv(os);
  return os.str();
}

// Worst |u - exact| / (1 + |x|^2) over the grid for the heat oracle.
double heat_error(const GridFunction& u) {
  const GridSpec& g = u.spec();
  std::vector<double> x(g.d());
  double worst = 0.0;
  for (std::size_t k = 0; k <= g.K; ++k)
    for (std::size_t j = 0; j < g.spatial_size(); ++j) {
      g.point(j, x);
      double n2 = 0.0;
      for (double xi : x) n2 += xi * xi;
      worst = std::max(worst, std::abs(u.at(k, j) - oracle::heat_quadratic(g.time(k), x, g.T)) / (1.0 + n2));
    }
  return worst;
}

ProblemSpec expressions(std::vector<std::string> mu, std::vector<std::string> sigma, std::string f, std::string g,
                        Domain domain = {}) {
  ProblemConfig c;
  c.d = mu.size();
  c.L = 1.0;
  c.drift = std::move(mu);
  c.diffusion = std::move(sigma);
  c.f = std::move(f);
  c.g = std::move(g);
  c.domain = std::move(domain);
  return build(c);
}

ProblemSpec family(const std::string& name, std::size_t d, std::map<std::string, double> params = {}) {
  ProblemConfig c;
  c.family = name;
  c.d = d;
  c.L = 1.0;
  c.params = std::move(params);
  return build(c);
}

}  // namespace

int main() {
  std::string heat1_csv;  // reused by criterion 8

  criterion(1, "heat oracle", [&](std::string& detail) {
    bool pass = true;
    for (const char* name : {"heat-1d.ini", "heat-2d.ini"}) {
      const auto start = std::chrono::steady_clock::now();
      Run r = prepare(name, 1);
      const SolveReport rep = picard_solve(r.p, r.V, r.grid, r.mc, r.opt);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const double err = heat_error(rep.solution);
      if (r.p.d == 1) heat1_csv = csv(rep.solution);
      pass = pass && rep.converged && err <= 0.05 && secs <= 120.0;
      detail += "d=" + std::to_string(r.p.d) + " max |u-u*|/(1+|x|^2) = " + fmt(err) + " (<= 0.05) in " +
                fmt(std::round(secs)) + "s (<= 120); ";
    }
    return pass;
  });

  criterion(2, "linear-f Duhamel oracle", [&](std::string& detail) {
    Run r = prepare("linear-f.ini");
    const SolveReport rep = picard_solve(r.p, r.V, r.grid, r.mc, r.opt);
    const std::vector<double> origin{0.0};
    const double u00 = rep.solution(0.0, origin);
    const double err = std::abs(u00 - std::exp(1.0));
    detail = "u(0,0) = " + fmt(u00) + ", |u(0,0) - e| = " + fmt(err) + " (<= 0.08), " +
             std::to_string(rep.iterations.size()) + " iterations (<= 14), converged " +
             (rep.converged ? "yes" : "no");
    return rep.converged && err <= 0.08 && rep.iterations.size() <= 14;
  });

  criterion(3, "contraction at lambda = 2L and 20L", [&](std::string& detail) {
    Run r = prepare("linear-f.ini");
    r.mc.paths = 10000;
    // direction v = |x|^2 + T - t (the heat solution), w = 0
    const GridFunction v = GridFunction::sample(r.grid, [&](double t, std::span<const double> x) {
      return oracle::heat_quadratic(t, x, r.p.T);
    });
    const GridFunction w(r.grid);
    const GridFunction weights = lyapunov_on(r.grid, r.V);
    const std::vector<double> lambdas{2.0 * r.p.L, 20.0 * r.p.L};
    double worst2 = 0.0, worst20 = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      r.mc.seed = seed;
      const auto m = contraction_ratios(r.p, v, w, weights, lambdas, r.mc);
      worst2 = std::max(worst2, m[0].ratio);
      worst20 = std::max(worst20, m[1].ratio);
    }

    // deterministic sub-case: no noise, V = 1, v = 1, w = 0
    const ProblemSpec det = expressions({"0"}, {"0"}, "v", "norm2");
    McConfig one;
    one.paths = 1;
    one.steps = r.mc.steps;
    const GridFunction ones(r.grid, 1.0);
    const auto unit = LyapunovSpec::space_time(expr::parse("1", expr::Role::lyapunov, 1));
    const double det_ratio = contraction_ratio(det, ones, w, unit, 2.0, one).ratio;

    detail = "max over 5 seeds: " + fmt(worst2) + " at 2L (<= 0.55), " + fmt(worst20) +
             " at 20L (<= 0.06); deterministic " + fmt(det_ratio) + " (<= 0.5)";
    return worst2 <= 0.55 && worst20 <= 0.06 && det_ratio <= 0.5;
  });

  criterion(4, "Lyapunov generator and supermartingale chain", [&](std::string& detail) {
    bool pass = true;
    std::size_t checks = 0;
    double min_margin = HUGE_VAL;
    for (const char* name : {"brownian", "ou"})
      for (double pp : {0.5, 1.0, 2.0, 4.0}) {
        // c = 1 is the growth constant of both families in d = 1
        const ProblemSpec p = family(name, 1);
        const LyapunovSpec V = polynomial_lyapunov(pp, 1.0, p.d);
        const GeneratorCheck gen = check_generator(p, V, 10000, 17);
        if (gen.violation) {
          pass = false;
          detail += std::string(name) + " p=" + fmt(pp) + " generator violation " + fmt(gen.violating_value) + "; ";
        }
        const std::vector<std::pair<double, std::vector<double>>> starts{
            {0.0, {0.0}}, {0.0, {2.0}}, {0.5, {0.0}}};
        std::uint64_t stream = 0;
        for (const auto& [t, x] : starts) {
          const auto sm = supermartingale_test(p, V, t, x, 1.0, 100, 100000, BrownianDriver{4, ++stream});
          ++checks;
          min_margin = std::min(min_margin, sm.margin);
          if (!sm.pass) {
            pass = false;
            detail += std::string(name) + " p=" + fmt(pp) + " supermartingale fails at t=" + fmt(t) + "; ";
          }
        }
      }
    detail += "8 generator checks of 1e4 points, " + std::to_string(checks) +
              " supermartingale tests, smallest margin " + fmt(min_margin);
    return pass;
  });

  criterion(5, "exact locality: freeze at rest and coupling", [&](std::string& detail) {
    const std::size_t n = 1000, M = 1000;
    // coefficients vanish outside |x| <= 5, so a path started at 6 never moves
    const ProblemSpec trunc = family("truncated-ou", 1, {{"radius", 5.0}});
    const std::vector<double> far{6.0};
    const FreezeCheck rest = check_at_rest(simulate(trunc, 0.0, far, M, n, BrownianDriver{5, 0}));

    // absorbed paths repeat the exit state
    const ProblemSpec box = expressions({"0"}, {"1"}, "0", "0", Domain::box({-1.0}, {1.0}));
    const std::vector<double> origin{0.0};
    const PathBatch absorbed = simulate(box, 0.0, origin, M, n, BrownianDriver{5, 1});
    const FreezeCheck tail = check_frozen_tail(absorbed);
    std::size_t exits = 0;
    for (const auto& f : absorbed.frozen_from) exits += f ? 1 : 0;

    // same coefficients on |x| <= 2 (bitwise: the extra terms are exactly 0 there), different outside
    const std::string mu = trunc.drift[0].to_string(), sigma = trunc.diffusion[0].to_string();
    const ProblemSpec other = expressions({mu + " + max(0, abs(x1) - 2)^2"}, {sigma + " + max(0, abs(x1) - 2)"}, "0", "0");
    const auto [a, b] = simulate_coupled(trunc, other, 0.0, origin, M, n, BrownianDriver{5, 2});
    const CouplingCheck couple = check_coupling(a, b, [](std::span<const double> x) { return std::abs(x[0]) <= 2.0; });
    std::size_t diverged = 0;
    for (std::size_t i = 0; i < n; ++i) diverged += a.state(i, M)[0] != b.state(i, M)[0] ? 1 : 0;

    detail = "at rest: " + std::to_string(rest.moving_paths) + " moving paths; frozen tails: " +
             std::to_string(tail.moving_paths) + " moving of " + std::to_string(exits) + " absorbed; coupling: " +
             (couple.exact ? "bitwise equal" : "DIVERGED") + " on " + std::to_string(couple.checked_states) +
             " states before exit (" + std::to_string(diverged) + " paths differ after leaving |x| <= 2)";
    return rest.at_rest && tail.at_rest && exits > 0 && couple.exact && diverged > 0;
  });

  criterion(6, "stability bound", [&](std::string& detail) {
    const ProblemSpec p = family("truncated-ou", 1, {{"radius", 5.0}});
    const double L = coefficient_lipschitz(p, 6.0, 20000, 23);
    const std::vector<double> x{0.0};
    const std::vector<std::pair<double, std::vector<double>>> others{{0.0, {0.1}}, {0.05, {0.0}}};
    bool pass = true;
    std::uint64_t stream = 0;
    detail = "measured L = " + fmt(L);
    for (const auto& [t2, x2] : others)
      for (double s : {0.5, 1.0}) {
        // M = 1000 steps over [0, s]; t' = 0.05 lies on that grid for both horizons
        const auto gap = stability_gap(p, 0.0, x, t2, x2, s, 1000, 100000, BrownianDriver{6, ++stream}, L);
        pass = pass && gap.estimate <= gap.bound;
        detail += "; (t',x')=(" + fmt(t2) + "," + fmt(x2[0]) + ") s=" + fmt(s) + ": " + fmt(gap.estimate) +
                  " <= " + fmt(gap.bound);
      }
    return pass;
  });

  criterion(7, "nested estimator on deterministic dynamics", [&](std::string& detail) {
    const ProblemSpec p = expressions({"0"}, {"0"}, "v", "1");
    NestedConfig cfg;
    cfg.steps = 1;
    const std::vector<double> origin{0.0};
    const double d4 = nested_estimate(p, 0.0, origin, 4, cfg, BrownianDriver{1, 3}).estimate;
    const double d4b = nested_estimate(p, 0.0, origin, 4, cfg, BrownianDriver{2, 3}).estimate;
    const double d5 = nested_estimate(p, 0.0, origin, 5, cfg, BrownianDriver{1, 3}).estimate;
    const double target = 65.0 / 24.0;
    detail = "depth 4 = " + fmt(d4) + " (target 2.708333, seed-stable " + (d4 == d4b ? "yes" : "no") +
             "); depth 5 = " + fmt(d5) + "; U_0 = 0 puts 2.708333 = 65/24 at depth 5";
    return std::abs(d4 - target) <= 1e-6 && d4 == d4b;
  });

  criterion(8, "determinism across thread counts", [&](std::string& detail) {
    Run r = prepare("heat-1d.ini", 4);
    const SolveReport rep = picard_solve(r.p, r.V, r.grid, r.mc, r.opt);
    const std::string four = csv(rep.solution);
    if (heat1_csv.empty()) {
      Run r1 = prepare("heat-1d.ini", 1);
      heat1_csv = csv(picard_solve(r1.p, r1.V, r1.grid, r1.mc, r1.opt).solution);
    }
    detail = "heat d=1 solution.csv with 1 and 4 threads: " +
             std::string(four == heat1_csv ? "bitwise identical" : "DIFFERENT") + " (" +
             std::to_string(four.size()) + " bytes)";
    return four == heat1_csv;
  });

  criterion(9, "norm family inequalities", [&](std::string& detail) {
    PathNoise rng(mix64(9), 0, 0);
    std::size_t violations = 0;
    const double slack = 1e-12;
    for (int trial = 0; trial < 1000; ++trial) {
      GridSpec g;
      g.T = 0.5 + 1.5 * rng.uniform();
      g.K = 2 + trial % 9;
      const std::size_t d = 1 + static_cast<std::size_t>(trial % 3);
      g.n.assign(d, 2 + static_cast<std::size_t>(trial % 5));
      g.lo.assign(d, -3.0);
      g.hi.assign(d, 3.0);
      GridFunction v(g), w(g);
      for (double& a : v.values()) a = rng.normal() * std::exp(3.0 * rng.normal());
      for (double& a : w.values()) a = std::exp(2.0 * rng.normal());
      double nu = 5.0 * rng.uniform(), lambda = 5.0 * rng.uniform();
      if (nu > lambda) std::swap(nu, lambda);
      const double n_nu = weighted_norm(v, w, nu), n_lambda = weighted_norm(v, w, lambda);
      if (n_nu > n_lambda * (1.0 + slack)) ++violations;
      if (n_lambda > std::exp((lambda - nu) * g.T) * n_nu * (1.0 + slack)) ++violations;
    }
    detail = std::to_string(violations) + " violations over 1000 random grid functions";
    return violations == 0;
  });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
