#pragma once

// Monte-Carlo Picard iteration for the stochastic fixed point equation
//
//   u(t, x) = E[ g(X^{t,x}_T) + int_t^T f(s, X^{t,x}_s, u(s, X^{t,x}_s)) ds ]
//
// on a tensor grid, measured in the weighted norms
//
//   |v|_lambda = sup_{t, x} exp(lambda t) |v(t, x)| / V(t, x).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sfpe/error.hpp"
#include "sfpe/grid.hpp"
#include "sfpe/lyapunov.hpp"
#include "sfpe/parallel.hpp"
#include "sfpe/problem.hpp"
#include "sfpe/random.hpp"
#include "sfpe/sde.hpp"

namespace sfpe {

enum class Quadrature { left, trapezoid };

struct McConfig {
  std::size_t paths = 1000;  // per grid node
  std::size_t steps = 50;    // Euler steps from the node time to T
  std::uint64_t seed = 0;
  Quadrature quadrature = Quadrature::left;
  std::size_t threads = 0;
};

// V evaluated on every node of the grid.
inline GridFunction lyapunov_on(const GridSpec& grid, const LyapunovSpec& V) {
  return GridFunction::sample(grid, [&](double t, std::span<const double> x) { return V(t, x); });
}

inline double weighted_norm(const GridFunction& v, const GridFunction& weights, double lambda) {
  const GridSpec& spec = v.spec();
  const bool log_space = std::abs(lambda * spec.T) > 30.0;
  double norm = 0.0;
  for (std::size_t k = 0; k <= spec.K; ++k) {
    const double tau = spec.time(k);
    const double scale = log_space ? 0.0 : std::exp(lambda * tau);
    for (std::size_t j = 0; j < spec.spatial_size(); ++j) {
      const double w = weights.at(k, j);
      if (!(w > 0.0)) throw LyapunovError("Lyapunov weight is not positive at a grid node");
      const double a = std::abs(v.at(k, j));
      if (a == 0.0) continue;
      const double r = log_space ? std::exp(lambda * tau + std::log(a) - std::log(w)) : scale * a / w;
      norm = std::max(norm, r);
    }
  }
  return norm;
}

inline double weighted_norm(const GridFunction& v, const LyapunovSpec& V, double lambda) {
  return weighted_norm(v, lyapunov_on(v.spec(), V), lambda);
}

namespace detail {

// Euler time i of M on [tau, T]; the last one is T itself.
inline double step_time(double tau, double dt, std::size_t i, std::size_t M, double T) {
  return i == M ? T : tau + static_cast<double>(i) * dt;
}

struct PhiBatch {
  std::vector<GridFunction> values;
  std::vector<GridFunction> standard_errors;
};

// Phi applied to several inputs with the same noise for every (node, path).
// `round` selects an independent family of node streams.
inline PhiBatch phi_batch(const ProblemSpec& p, std::span<const GridFunction* const> inputs, const McConfig& mc,
                          std::uint64_t round) {
  if (inputs.empty()) throw Error("apply_phi needs an input");
  const GridSpec& grid = inputs[0]->spec();
  if (grid.d() != p.d) throw Error("grid dimension does not match the problem");
  if (std::abs(grid.T - p.T) > 1e-12 * p.T) throw Error("grid horizon does not match the problem");
  if (mc.paths == 0 || mc.steps == 0) throw Error("McConfig needs paths >= 1 and steps >= 1");

  const std::size_t q = inputs.size();
  PhiBatch out;
  for (std::size_t i = 0; i < q; ++i) {
    out.values.emplace_back(grid);
    out.standard_errors.emplace_back(grid);
  }
  const Dynamics dyn(p);
  const bool integrate = !p.f.is_zero();
  const bool needs_value = p.f.uses_value();
  const bool trapezoid = mc.quadrature == Quadrature::trapezoid;
  // Only X_T is needed when f vanishes. With constant coefficients on the
  // whole space the M-step Euler endpoint x + mu (T - tau) + sigma sum(dW) has
  // exactly the law of a single step of length T - tau, so take one step.
  const bool single_step = !integrate && dyn.constant() && !p.domain.is_box();
  const std::size_t S = grid.spatial_size();
  const BrownianDriver base = BrownianDriver{mc.seed, 0}.substream(round);

  parallel_for(grid.size(), mc.threads, [&](std::size_t node) {
    const std::size_t k = node / S, j = node % S;
    std::vector<double> x0(p.d);
    grid.point(j, x0);
    if (!p.domain.contains(x0)) throw Error("grid node " + describe_point(x0) + " lies outside the problem domain");
    const double tau = grid.time(k);
    if (k == grid.K) {
      const double gx = p.g(p.T, x0);
      for (std::size_t i = 0; i < q; ++i) out.values[i].at(k, j) = gx;
      return;
    }
    const BrownianDriver drv = base.substream(node);
    const std::size_t M = single_step ? 1 : mc.steps;
    const double dt = (p.T - tau) / static_cast<double>(M);
    const double sqrt_dt = std::sqrt(dt);
    std::vector<double> dw(p.m), acc(q), sum(q, 0.0), sum2(q, 0.0);
    PathWalker walker(dyn, x0);
    // interpolation slots of the Euler times, shared by all paths of the node
    std::vector<GridFunction::TimeSlot> slots;
    if (needs_value)
      for (std::size_t i = 0; i <= M; ++i) slots.push_back(inputs[0]->time_slot(step_time(tau, dt, i, M, p.T)));

    auto add_f = [&](std::size_t step, std::span<const double> x, double weight) {
      const double t = step_time(tau, dt, step, M, p.T);
      for (std::size_t i = 0; i < q; ++i) {
        const double v = needs_value ? (*inputs[i])(slots[step], x) : 0.0;
        acc[i] += weight * p.f(t, x, v);
      }
    };

    for (std::size_t path = 0; path < mc.paths; ++path) {
      walker.reset(x0);
      PathNoise noise = drv.path(path);
      std::fill(acc.begin(), acc.end(), 0.0);
      try {
        for (std::size_t i = 0; i < M; ++i) {
          if (integrate) add_f(i, walker.state(), (trapezoid && i == 0) ? 0.5 * dt : dt);
          noise.increments(dw, sqrt_dt);
          walker.step(step_time(tau, dt, i, M, p.T), dt, dw);
        }
        if (integrate && trapezoid) add_f(M, walker.state(), 0.5 * dt);
        const double gx = p.g(p.T, walker.state());
        for (double& a : acc) a += gx;
      } catch (const EvalError& e) {
        throw SimulationError(std::string(e.what()) + " on path " + std::to_string(path) + " from grid node t=" +
                              expr::detail::format_number(tau) + ", x=" + describe_point(x0));
      }
      if (walker.escaped())
        throw SimulationError("path explosion from grid node t=" + expr::detail::format_number(tau) +
                              ", x=" + describe_point(x0) + " (path " + std::to_string(path) + ")");
      for (std::size_t i = 0; i < q; ++i) {
        sum[i] += acc[i];
        sum2[i] += acc[i] * acc[i];
      }
    }
    const double n = static_cast<double>(mc.paths);
    for (std::size_t i = 0; i < q; ++i) {
      const double mean = sum[i] / n;
      if (!std::isfinite(mean)) throw SolverError("non-finite estimate at grid node x=" + describe_point(x0));
      out.values[i].at(k, j) = mean;
      out.standard_errors[i].at(k, j) =
          mc.paths > 1 ? std::sqrt(std::max(0.0, sum2[i] / n - mean * mean) / (n - 1.0)) : 0.0;
    }
  });
  return out;
}

}  // namespace detail

// One Monte-Carlo application of the Picard map on every grid node. Node
// (k, j) simulates from (tau_k, x_j) to T with its own keyed stream; the time
// integral uses left-point or trapezoid weights on the Euler grid.
inline GridFunction apply_phi(const ProblemSpec& p, const GridFunction& v, const McConfig& mc,
                              GridFunction* standard_error = nullptr, std::uint64_t round = 0) {
  const GridFunction* in[] = {&v};
  auto batch = detail::phi_batch(p, in, mc, round);
  if (standard_error) *standard_error = std::move(batch.standard_errors[0]);
  return std::move(batch.values[0]);
}

struct ContractionMeasurement {
  double ratio = 0.0;
  double numerator = 0.0;    // |Phi(v) - Phi(w)|_lambda
  double denominator = 0.0;  // |v - w|_lambda
};

// |Phi(v) - Phi(w)|_lambda / |v - w|_lambda with common random numbers, for
// several lambda from one pair of Phi evaluations.
inline std::vector<ContractionMeasurement> contraction_ratios(const ProblemSpec& p, const GridFunction& v,
                                                              const GridFunction& w, const GridFunction& weights,
                                                              std::span<const double> lambdas, const McConfig& mc) {
  const GridFunction diff = v - w;
  std::vector<ContractionMeasurement> out(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    out[i].denominator = weighted_norm(diff, weights, lambdas[i]);
    if (out[i].denominator == 0.0) throw SolverError("contraction ratio needs v != w on at least one node");
  }
  const GridFunction* in[] = {&v, &w};
  auto batch = detail::phi_batch(p, in, mc, 0);
  const GridFunction image = batch.values[0] - batch.values[1];
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    out[i].numerator = weighted_norm(image, weights, lambdas[i]);
    out[i].ratio = out[i].numerator / out[i].denominator;
  }
  return out;
}

inline ContractionMeasurement contraction_ratio(const ProblemSpec& p, const GridFunction& v, const GridFunction& w,
                                                const GridFunction& weights, double lambda, const McConfig& mc) {
  return contraction_ratios(p, v, w, weights, std::span<const double>(&lambda, 1), mc)[0];
}

inline ContractionMeasurement contraction_ratio(const ProblemSpec& p, const GridFunction& v, const GridFunction& w,
                                                const LyapunovSpec& V, double lambda, const McConfig& mc) {
  return contraction_ratio(p, v, w, lyapunov_on(v.spec(), V), lambda, mc);
}

struct IterationRecord {
  double delta = 0.0;  // |u_{k+1} - u_k|_lambda
  std::optional<double> ratio;
  double seconds = 0.0;
};

struct SolveReport {
  std::vector<IterationRecord> iterations;
  std::optional<double> residual;     // |u - Phi(u)|_lambda with fresh streams
  std::optional<double> residual_se;  // sup_nodes exp(lambda t) SE / V of that fresh estimate
  double lambda = 0.0;
  double tolerance = 0.0;
  bool converged = false;
  GridFunction solution;
  double max_standard_error = 0.0;  // largest per-node SE of the last iterate

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["converged"] = converged;
    j["lambda"] = lambda;
    j["tolerance"] = tolerance;
    j["iterations"] = nlohmann::ordered_json::array();
    for (const auto& it : iterations) {
      nlohmann::ordered_json row;
      row["delta"] = it.delta;
      row["ratio"] = it.ratio ? nlohmann::ordered_json(*it.ratio) : nlohmann::ordered_json(nullptr);
      j["iterations"].push_back(row);
    }
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
    j["residual"] = opt(residual);
    j["residual_se"] = opt(residual_se);
    j["max_standard_error"] = max_standard_error;
    const auto& spec = solution.spec();
    j["grid"] = {{"T", spec.T}, {"K", spec.K}, {"n", spec.n}, {"lo", spec.lo}, {"hi", spec.hi}};
    return j;
  }

  // Wall-clock data is confined to the first line so that reruns differ in
  // that line only.
  void write_json(std::ostream& os) const {
    nlohmann::ordered_json timing;
    timing["seconds"] = nlohmann::ordered_json::array();
    for (const auto& it : iterations) timing["seconds"].push_back(it.seconds);
    std::string body = to_json().dump(2);
    os << "{\"timing\": " << timing.dump() << ",\n" << body.substr(2) << '\n';
  }
};

struct PicardOptions {
  std::optional<double> lambda;  // default 2 L
  double tol = 1e-3;
  std::size_t max_iter = 50;
  bool residual = true;  // re-apply Phi to the result with fresh streams
  std::function<void(std::size_t, const IterationRecord&)> on_iteration;
};

// u_0 = 0, u_{k+1} = Phi(u_k) with the same node streams in every iteration,
// stopping once |u_{k+1} - u_k|_lambda <= tol. Aborts if the delta grows in
// three consecutive iterations. When f does not read v the map is constant
// (bitwise, under common random numbers), so the first iterate is the fixed
// point and the second pass is recorded with delta 0 without recomputation.
inline SolveReport picard_solve(const ProblemSpec& p, const LyapunovSpec& V, const GridSpec& grid, const McConfig& mc,
                                const PicardOptions& opt) {
  if (!(opt.tol > 0.0)) throw Error("tolerance must be positive");
  if (opt.max_iter == 0) throw Error("max_iter must be at least 1");
  SolveReport report;
  report.lambda = opt.lambda.value_or(2.0 * p.L);
  report.tolerance = opt.tol;
  const GridFunction weights = lyapunov_on(grid, V);
  GridFunction u(grid);
  GridFunction se;
  std::size_t growth = 0;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    const auto start = std::chrono::steady_clock::now();
    GridFunction next = apply_phi(p, u, mc, &se);
    IterationRecord rec;
    rec.delta = weighted_norm(next - u, weights, report.lambda);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!report.iterations.empty()) {
      const double prev = report.iterations.back().delta;
      if (prev > 0.0) rec.ratio = rec.delta / prev;
      growth = rec.delta > prev ? growth + 1 : 0;
    }
    report.iterations.push_back(rec);
    if (opt.on_iteration) opt.on_iteration(it + 1, rec);
    u = std::move(next);
    if (!p.f.uses_value() && rec.delta > opt.tol && it + 1 < opt.max_iter) {
      IterationRecord fixed;
      fixed.delta = 0.0;
      if (rec.delta > 0.0) fixed.ratio = 0.0;
      report.iterations.push_back(fixed);
      if (opt.on_iteration) opt.on_iteration(it + 2, fixed);
      report.converged = true;
      break;
    }
    if (growth >= 3)
      throw SolverError("Picard iteration diverges: delta grew in 3 consecutive iterations (last delta " +
                        expr::detail::format_number(rec.delta) + ", lambda " +
                        expr::detail::format_number(report.lambda) + ")");
    if (rec.delta <= opt.tol) {
      report.converged = true;
      break;
    }
  }
  report.max_standard_error = *std::max_element(se.values().begin(), se.values().end());

  if (opt.residual) {
    GridFunction fresh_se;
    const GridFunction fresh = apply_phi(p, u, mc, &fresh_se, 1);
    report.residual = weighted_norm(u - fresh, weights, report.lambda);
    report.residual_se = weighted_norm(fresh_se, weights, report.lambda);
  }
  report.solution = std::move(u);
  return report;
}

enum class TimeRule { gauss_legendre, uniform };

struct NestedConfig {
  // (N_g, N_f) per recursion level, top level first; the last entry repeats.
  std::vector<std::pair<std::size_t, std::size_t>> widths{{1, 1}};
  std::size_t steps = 50;
  TimeRule time_rule = TimeRule::gauss_legendre;
  std::size_t time_nodes = 3;  // Gauss-Legendre nodes per level
  double max_work = 1e9;       // cap on simulated Euler steps
};

struct NestedResult {
  double estimate = 0.0;
  double work = 0.0;  // simulated Euler steps
};

// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(std::size_t n) {
  if (n == 0) throw Error("Gauss-Legendre rule needs at least one node");
  std::vector<double> x(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (std::size_t k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * static_cast<double>(k) - 1.0) * z * p1 - (static_cast<double>(k) - 1.0) * p2) / static_cast<double>(k);
      }
      dp = static_cast<double>(n) * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[n - 1 - i] = z;
    w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

namespace detail {

class NestedEstimator {
 public:
  NestedEstimator(const ProblemSpec& p, const NestedConfig& cfg) : p_(p), dyn_(p), cfg_(cfg) {
    if (cfg.widths.empty()) throw Error("nested estimator needs widths");
    if (cfg.steps == 0) throw Error("nested estimator needs at least one Euler step");
    for (const auto& [ng, nf] : cfg.widths)
      if (ng == 0 || nf == 0) throw Error("nested estimator widths must be positive");
    std::tie(nodes_, weights_) = gauss_legendre(cfg.time_rule == TimeRule::gauss_legendre ? cfg.time_nodes : 1);
  }

  std::pair<std::size_t, std::size_t> widths(std::size_t level_from_top) const {
    return cfg_.widths[std::min(level_from_top, cfg_.widths.size() - 1)];
  }

  std::size_t time_samples() const { return cfg_.time_rule == TimeRule::gauss_legendre ? nodes_.size() : 1; }

  double predicted_work(std::size_t depth) const {
    double below = 0.0;
    for (std::size_t level = 1; level <= depth; ++level) {
      const auto [ng, nf] = widths(depth - level);
      const double steps = static_cast<double>(cfg_.steps);
      double w = static_cast<double>(ng) * steps;
      if (!p_.f.is_zero()) w += static_cast<double>(time_samples() * nf) * (steps + (p_.f.uses_value() ? below : 0.0));
      below = w;
    }
    return below;
  }

  double run(std::size_t depth, std::size_t level, double t, std::span<const double> x, const BrownianDriver& drv) {
    if (level == 0) return 0.0;
    const auto [ng, nf] = widths(depth - level);
    std::vector<double> y(p_.d);

    double g_sum = 0.0;
    for (std::size_t i = 0; i < ng; ++i) {
      PathNoise noise = drv.path(i);
      propagate(t, p_.T, x, noise, y);
      g_sum += p_.g(p_.T, y);
    }
    double estimate = g_sum / static_cast<double>(ng);
    if (p_.f.is_zero()) return estimate;

    const double span = p_.T - t;
    const BrownianDriver samples = drv.substream(1);
    double f_part = 0.0;
    std::size_t r = 0;
    for (std::size_t q = 0; q < time_samples(); ++q) {
      double f_sum = 0.0;
      for (std::size_t j = 0; j < nf; ++j, ++r) {
        PathNoise noise = samples.path(r);
        const double s = cfg_.time_rule == TimeRule::gauss_legendre ? t + 0.5 * span * (1.0 + nodes_[q])
                                                                     : t + span * noise.uniform();
        propagate(t, s, x, noise, y);
        const double inner = p_.f.uses_value() ? run(depth, level - 1, s, y, drv.substream(2 + r)) : 0.0;
        f_sum += p_.f(s, y, inner);
      }
      const double weight = cfg_.time_rule == TimeRule::gauss_legendre ? 0.5 * span * weights_[q] : span;
      f_part += weight * f_sum / static_cast<double>(nf);
    }
    return estimate + f_part;
  }

  double work() const noexcept { return work_; }

 private:
  void propagate(double t, double s, std::span<const double> x, PathNoise& noise, std::vector<double>& out) {
    PathWalker walker(dyn_, x);
    const std::size_t M = cfg_.steps;
    const double dt = (s - t) / static_cast<double>(M);
    const double sqrt_dt = std::sqrt(dt);
    std::vector<double> dw(p_.m);
    for (std::size_t k = 0; k < M; ++k) {
      noise.increments(dw, sqrt_dt);
      walker.step(t + static_cast<double>(k) * dt, dt, dw);
    }
    work_ += static_cast<double>(M);
    if (walker.escaped()) throw SimulationError("path explosion in nested estimator from " + describe_point(x));
    out.assign(walker.state().begin(), walker.state().end());
  }

  const ProblemSpec& p_;
  Dynamics dyn_;
  const NestedConfig& cfg_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  double work_ = 0.0;
};

}  // namespace detail

// Pointwise nested Monte-Carlo realisation of the Picard iterates:
//   U_0 = 0,
//   U_n(t, x) = mean_i g(X^i_T) + int_t^T mean_j f(s, X^j_s, U_{n-1}(s, X^j_s)) ds,
// where the time integral uses Gauss-Legendre nodes (default) or a uniform
// random time, and every recursive call draws on its own sub-stream.
inline NestedResult nested_estimate(const ProblemSpec& p, double t, std::span<const double> x, std::size_t depth,
                                    const NestedConfig& cfg, const BrownianDriver& drv) {
  if (!(t >= 0.0 && t <= p.T)) throw Error("estimate time must lie in [0, T]");
  if (x.size() != p.d) throw Error("estimate point has wrong dimension");
  detail::NestedEstimator est(p, cfg);
  const double predicted = est.predicted_work(depth);
  if (predicted > cfg.max_work)
    throw ResourceError("nested estimator work " + expr::detail::format_number(predicted) +
                        " Euler steps exceeds the cap of " + expr::detail::format_number(cfg.max_work));
  NestedResult out;
  out.estimate = est.run(depth, depth, t, x, drv);
  out.work = est.work();
  return out;
}

struct ShellRow {
  double r_lo = 0.0;  // exclusive (the first shell includes the origin)
  double r_hi = 0.0;
  double sup_ratio = 0.0;  // sup |u| / V over nodes with |x| in (r_lo, r_hi]
  std::size_t nodes = 0;
};

inline std::vector<ShellRow> decay_diagnostic(const GridFunction& u, const LyapunovSpec& V,
                                              const std::vector<double>& shells) {
  for (std::size_t i = 1; i < shells.size(); ++i)
    if (!(shells[i] > shells[i - 1])) throw Error("shell radii must be increasing");
  std::vector<ShellRow> rows(shells.size());
  for (std::size_t i = 0; i < shells.size(); ++i) {
    rows[i].r_lo = i == 0 ? 0.0 : shells[i - 1];
    rows[i].r_hi = shells[i];
  }
  const GridSpec& spec = u.spec();
  std::vector<double> x(spec.d());
  for (std::size_t k = 0; k <= spec.K; ++k)
    for (std::size_t j = 0; j < spec.spatial_size(); ++j) {
      spec.point(j, x);
      double n2 = 0.0;
      for (double xi : x) n2 += xi * xi;
      const double r = std::sqrt(n2);
      auto it = std::lower_bound(shells.begin(), shells.end(), r);
      if (it == shells.end()) continue;
      ShellRow& row = rows[static_cast<std::size_t>(it - shells.begin())];
      row.sup_ratio = std::max(row.sup_ratio, std::abs(u.at(k, j)) / V(spec.time(k), x));
      ++row.nodes;
    }
  return rows;
}

}  // namespace sfpe
