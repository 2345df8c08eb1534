#pragma once

// Euler-Maruyama simulation of dX = mu(t, X) dt + sigma(t, X) dW with
// counter-keyed noise, shared-increment coupling and freeze-on-exit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfpe/error.hpp"
#include "sfpe/expr.hpp"
#include "sfpe/parallel.hpp"
#include "sfpe/problem.hpp"
#include "sfpe/random.hpp"

namespace sfpe {

// Coordinates beyond this magnitude mark a numerically exploding path.
inline constexpr double kEscapeGuard = 1e12;

// Coefficient evaluator with constant entries resolved once.
class Dynamics {
 public:
  explicit Dynamics(const ProblemSpec& p) : p_(&p) {
    for (const auto& a : p.drift) drift_const_.push_back(a.constant_value());
    for (const auto& a : p.diffusion) diffusion_const_.push_back(a.constant_value());
    drift_zero_ = std::all_of(p.drift.begin(), p.drift.end(), [](const expr::Ast& a) { return a.is_zero(); });
    if (constant()) {
      for (const auto& c : drift_const_) drift_fixed_.push_back(*c);
      for (const auto& c : diffusion_const_) diffusion_fixed_.push_back(*c);
    }
  }

  const ProblemSpec& problem() const noexcept { return *p_; }
  std::size_t d() const noexcept { return p_->d; }
  std::size_t m() const noexcept { return p_->m; }
  bool drift_zero() const noexcept { return drift_zero_; }
  // Coefficient values when every entry is constant, otherwise empty.
  std::span<const double> fixed_drift() const noexcept { return drift_fixed_; }
  std::span<const double> fixed_diffusion() const noexcept { return diffusion_fixed_; }

  bool constant() const noexcept {
    auto known = [](const std::optional<double>& c) { return c.has_value(); };
    return std::all_of(drift_const_.begin(), drift_const_.end(), known) &&
           std::all_of(diffusion_const_.begin(), diffusion_const_.end(), known);
  }

  void drift(double t, std::span<const double> x, std::span<double> out) const {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = drift_const_[i] ? *drift_const_[i] : p_->drift[i](t, x);
  }

  void diffusion(double t, std::span<const double> x, std::span<double> out) const {
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = diffusion_const_[k] ? *diffusion_const_[k] : p_->diffusion[k](t, x);
  }

 private:
  const ProblemSpec* p_;
  std::vector<std::optional<double>> drift_const_;
  std::vector<std::optional<double>> diffusion_const_;
  std::vector<double> drift_fixed_;
  std::vector<double> diffusion_fixed_;
  bool drift_zero_ = false;
};

// State of a single simulated path. A frozen path is held constant.
class PathWalker {
 public:
  PathWalker(const Dynamics& dyn, std::span<const double> x0)
      : dyn_(&dyn), x_(x0.begin(), x0.end()), mu_(dyn.d()), sigma_(dyn.d() * dyn.m()), next_(dyn.d()) {}

  std::span<const double> state() const noexcept { return x_; }
  bool frozen() const noexcept { return frozen_; }
  bool escaped() const noexcept { return escaped_; }
  bool exited() const noexcept { return exited_; }

  void reset(std::span<const double> x0) {
    std::copy(x0.begin(), x0.end(), x_.begin());
    frozen_ = exited_ = escaped_ = false;
  }

  // One Euler step on [t, t + dt] driven by the Brownian increment dw.
  // Returns true if the path froze during this step.
  bool step(double t, double dt, std::span<const double> dw) {
    if (frozen_) return false;
    const std::size_t d = dyn_->d(), m = dyn_->m();
    const bool fixed = !dyn_->fixed_diffusion().empty();
    const bool drift = !dyn_->drift_zero();
    if (!fixed) {
      if (drift) dyn_->drift(t, x_, mu_);
      dyn_->diffusion(t, x_, sigma_);
    }
    const double* mu = fixed ? dyn_->fixed_drift().data() : mu_.data();
    const double* sigma = fixed ? dyn_->fixed_diffusion().data() : sigma_.data();
    bool blown = false;
    for (std::size_t i = 0; i < d; ++i) {
      double xi = x_[i];
      if (drift) xi += mu[i] * dt;
      for (std::size_t j = 0; j < m; ++j) xi += sigma[i * m + j] * dw[j];
      next_[i] = xi;
      if (!(std::abs(xi) <= kEscapeGuard)) blown = true;
    }
    if (blown) {
      // hold the last finite state
      escaped_ = frozen_ = true;
      return true;
    }
    const Domain& dom = dyn_->problem().domain;
    if (!dom.contains(next_)) {
      dom.clamp(next_);
      std::swap(x_, next_);
      exited_ = frozen_ = true;
      return true;
    }
    std::swap(x_, next_);
    return false;
  }

 private:
  const Dynamics* dyn_;
  std::vector<double> x_;
  std::vector<double> mu_;
  std::vector<double> sigma_;
  std::vector<double> next_;
  bool frozen_ = false;
  bool exited_ = false;
  bool escaped_ = false;
};

inline std::string describe_point(std::span<const double> x) {
  std::string s = "(";
  for (std::size_t i = 0; i < x.size(); ++i) s += (i ? "," : "") + expr::detail::format_number(x[i]);
  return s + ")";
}

// n_paths x (M + 1) x d states on the uniform grid t_k = t0 + k dt.
struct PathBatch {
  std::size_t n_paths = 0;
  std::size_t steps = 0;
  std::size_t d = 0;
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<double> states;
  std::vector<std::optional<std::size_t>> frozen_from;
  std::vector<char> exited;
  std::vector<char> escaped;

  double time(std::size_t k) const noexcept { return t0 + static_cast<double>(k) * dt; }

  std::span<const double> state(std::size_t path, std::size_t k) const {
    return {states.data() + (path * (steps + 1) + k) * d, d};
  }
  std::span<double> state(std::size_t path, std::size_t k) { return {states.data() + (path * (steps + 1) + k) * d, d}; }

  bool any_escaped() const { return std::any_of(escaped.begin(), escaped.end(), [](char c) { return c != 0; }); }
};

namespace detail {

inline void check_start(const ProblemSpec& p, double t0, std::span<const double> x0, std::size_t M, std::size_t n) {
  if (!(t0 >= 0.0 && t0 <= p.T)) throw Error("start time must lie in [0, T]");
  if (x0.size() != p.d) throw Error("start point has wrong dimension");
  if (!p.domain.contains(x0)) throw Error("start point " + describe_point(x0) + " is outside the domain");
  if (M == 0) throw Error("need at least one Euler step");
  if (n == 0) throw Error("need at least one path");
}

inline PathBatch make_batch(const ProblemSpec& p, double t0, double t_end, std::span<const double> x0, std::size_t M,
                            std::size_t n) {
  PathBatch b;
  b.n_paths = n;
  b.steps = M;
  b.d = p.d;
  b.t0 = t0;
  b.dt = (t_end - t0) / static_cast<double>(M);
  b.states.resize(n * (M + 1) * p.d);
  b.frozen_from.assign(n, std::nullopt);
  b.exited.assign(n, 0);
  b.escaped.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) std::copy(x0.begin(), x0.end(), b.state(i, 0).begin());
  return b;
}

[[noreturn]] inline void rethrow_at(const EvalError& e, std::size_t path, std::size_t step, std::span<const double> x) {
  throw SimulationError(std::string(e.what()) + " at path " + std::to_string(path) + ", step " + std::to_string(step) +
                        ", state " + describe_point(x));
}

inline void record(PathBatch& b, std::size_t path, std::size_t k, const PathWalker& w, bool froze) {
  std::copy(w.state().begin(), w.state().end(), b.state(path, k).begin());
  if (froze) {
    b.frozen_from[path] = k;
    b.exited[path] = w.exited();
    b.escaped[path] = w.escaped();
  }
}

}  // namespace detail

// Simulates n paths of X^{t0,x0} on [t0, T] with M uniform Euler steps.
inline PathBatch simulate(const ProblemSpec& p, double t0, std::span<const double> x0, std::size_t M, std::size_t n,
                          const BrownianDriver& drv, std::size_t threads = 0) {
  detail::check_start(p, t0, x0, M, n);
  PathBatch batch = detail::make_batch(p, t0, p.T, x0, M, n);
  const Dynamics dyn(p);
  const double dt = batch.dt, sqrt_dt = std::sqrt(dt);
  parallel_for(n, threads, [&](std::size_t path) {
    PathWalker walker(dyn, x0);
    PathNoise noise = drv.path(path);
    std::vector<double> dw(p.m);
    for (std::size_t k = 0; k < M; ++k) {
      noise.increments(dw, sqrt_dt);
      bool froze = false;
      try {
        froze = walker.step(batch.time(k), dt, dw);
      } catch (const EvalError& e) {
        detail::rethrow_at(e, path, k, walker.state());
      }
      detail::record(batch, path, k + 1, walker, froze);
    }
  });
  return batch;
}

inline bool same_shape(const ProblemSpec& a, const ProblemSpec& b) {
  return a.d == b.d && a.m == b.m && a.T == b.T && a.domain.kind == b.domain.kind && a.domain.lo == b.domain.lo &&
         a.domain.hi == b.domain.hi;
}

// Both batches consume the same Brownian increment for every (path, step).
inline std::pair<PathBatch, PathBatch> simulate_coupled(const ProblemSpec& p1, const ProblemSpec& p2, double t0,
                                                        std::span<const double> x0, std::size_t M, std::size_t n,
                                                        const BrownianDriver& drv, std::size_t threads = 0) {
  if (!same_shape(p1, p2)) throw Error("coupled problems must share d, m, T and domain");
  detail::check_start(p1, t0, x0, M, n);
  PathBatch b1 = detail::make_batch(p1, t0, p1.T, x0, M, n);
  PathBatch b2 = detail::make_batch(p2, t0, p2.T, x0, M, n);
  const Dynamics dyn1(p1), dyn2(p2);
  const double dt = b1.dt, sqrt_dt = std::sqrt(dt);
  parallel_for(n, threads, [&](std::size_t path) {
    PathWalker w1(dyn1, x0), w2(dyn2, x0);
    PathNoise noise = drv.path(path);
    std::vector<double> dw(p1.m);
    for (std::size_t k = 0; k < M; ++k) {
      noise.increments(dw, sqrt_dt);
      try {
        detail::record(b1, path, k + 1, w1, w1.step(b1.time(k), dt, dw));
        detail::record(b2, path, k + 1, w2, w2.step(b2.time(k), dt, dw));
      } catch (const EvalError& e) {
        detail::rethrow_at(e, path, k, w1.state());
      }
    }
  });
  return {std::move(b1), std::move(b2)};
}

struct CouplingCheck {
  bool exact = true;              // bitwise agreement wherever required
  double max_diff = 0.0;          // largest |difference| where agreement is required
  std::size_t checked_states = 0;
  std::optional<std::size_t> first_divergence_path;
  std::optional<std::size_t> first_divergence_step;
};

// Paths must agree bitwise up to and including the first grid index at which
// either leaves the region. `inside` is a predicate on states.
template <typename Region>
CouplingCheck check_coupling(const PathBatch& a, const PathBatch& b, Region&& inside) {
  CouplingCheck out;
  for (std::size_t path = 0; path < a.n_paths; ++path) {
    for (std::size_t k = 0; k <= a.steps; ++k) {
      const auto xa = a.state(path, k), xb = b.state(path, k);
      bool equal = true;
      for (std::size_t i = 0; i < a.d; ++i) {
        out.max_diff = std::max(out.max_diff, std::abs(xa[i] - xb[i]));
        if (xa[i] != xb[i]) equal = false;
      }
      ++out.checked_states;
      if (!equal) {
        if (!out.first_divergence_path) {
          out.first_divergence_path = path;
          out.first_divergence_step = k;
        }
        out.exact = false;
        break;
      }
      if (!inside(xa) || !inside(xb)) break;
    }
  }
  return out;
}

struct FreezeCheck {
  bool at_rest = true;
  std::size_t moving_paths = 0;
  double max_displacement = 0.0;
};

// Every state of every path must equal the start point bitwise.
inline FreezeCheck check_at_rest(const PathBatch& b) {
  FreezeCheck out;
  for (std::size_t path = 0; path < b.n_paths; ++path) {
    const auto x0 = b.state(path, 0);
    bool moved = false;
    for (std::size_t k = 1; k <= b.steps; ++k) {
      const auto xk = b.state(path, k);
      for (std::size_t i = 0; i < b.d; ++i) {
        out.max_displacement = std::max(out.max_displacement, std::abs(xk[i] - x0[i]));
        if (xk[i] != x0[i]) moved = true;
      }
    }
    if (moved) ++out.moving_paths;
  }
  out.at_rest = out.moving_paths == 0;
  return out;
}

// After a path freezes (domain exit or escape) every later state must repeat
// the frozen state bitwise.
inline FreezeCheck check_frozen_tail(const PathBatch& b) {
  FreezeCheck out;
  for (std::size_t path = 0; path < b.n_paths; ++path) {
    if (!b.frozen_from[path]) continue;
    const std::size_t k0 = *b.frozen_from[path];
    const auto x0 = b.state(path, k0);
    bool moved = false;
    for (std::size_t k = k0 + 1; k <= b.steps; ++k) {
      const auto xk = b.state(path, k);
      for (std::size_t i = 0; i < b.d; ++i) {
        out.max_displacement = std::max(out.max_displacement, std::abs(xk[i] - x0[i]));
        if (xk[i] != x0[i]) moved = true;
      }
    }
    if (moved) ++out.moving_paths;
  }
  out.at_rest = out.moving_paths == 0;
  return out;
}

// sup over a time grid of |mu(r, x)| and |sigma(r, x)|_F.
inline std::pair<double, double> coefficient_sup_at(const ProblemSpec& p, std::span<const double> x,
                                                    std::size_t time_points = 201) {
  const Dynamics dyn(p);
  std::vector<double> mu(p.d), sigma(p.d * p.m);
  double mu_sup = 0.0, sigma_sup = 0.0;
  const std::size_t n = p.time_dependent() ? time_points : 1;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = n == 1 ? 0.0 : p.T * static_cast<double>(k) / static_cast<double>(n - 1);
    dyn.drift(r, x, mu);
    dyn.diffusion(r, x, sigma);
    double a = 0.0, b = 0.0;
    for (double v : mu) a += v * v;
    for (double v : sigma) b += v * v;
    mu_sup = std::max(mu_sup, std::sqrt(a));
    sigma_sup = std::max(sigma_sup, std::sqrt(b));
  }
  return {mu_sup, sigma_sup};
}

// Right-hand side of the mean-square stability estimate for exact solutions:
// 9 (|x - x'| + |t - t'|^(1/2))^2 (1 + sqrt(T) sup|mu(r,x')| + sup|sigma(r,x')|_F)^2 exp(6 L^2 T (T + 1)).
inline double stability_bound(const ProblemSpec& p, double t, std::span<const double> x, double t2,
                              std::span<const double> x2, double lipschitz) {
  double dist2 = 0.0;
  for (std::size_t i = 0; i < p.d; ++i) dist2 += (x[i] - x2[i]) * (x[i] - x2[i]);
  const auto [mu_sup, sigma_sup] = coefficient_sup_at(p, x2);
  const double lead = std::sqrt(dist2) + std::sqrt(std::abs(t - t2));
  const double growth = 1.0 + std::sqrt(p.T) * mu_sup + sigma_sup;
  return 9.0 * lead * lead * growth * growth * std::exp(6.0 * lipschitz * lipschitz * p.T * (p.T + 1.0));
}

// Empirical Lipschitz constant L with |mu(t,x)-mu(t,y)| + |sigma(t,x)-sigma(t,y)|_F <= L |x-y|,
// from finite-difference Jacobians and close-pair quotients sampled in the
// ball of the given radius.
inline double coefficient_lipschitz(const ProblemSpec& p, double radius, std::size_t n_samples, std::uint64_t seed) {
  const Dynamics dyn(p);
  PathNoise rng(mix64(seed), 0x5CA1Eull, 0);
  const std::size_t d = p.d, dm = p.d * p.m;
  std::vector<double> x(d), y(d), mu_a(d), mu_b(d), s_a(dm), s_b(dm);
  double jac_mu = 0.0, jac_sigma = 0.0, pairs = 0.0;
  for (std::size_t k = 0; k < n_samples; ++k) {
    // uniform in the ball: Gaussian direction, radius ~ U^(1/d)
    double n2 = 0.0;
    for (double& xi : x) {
      xi = rng.normal();
      n2 += xi * xi;
    }
    const double rr = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d)) / std::sqrt(n2);
    for (double& xi : x) xi *= rr;
    if (!p.domain.contains(x)) continue;
    const double t = p.T * rng.uniform();

    double fro_mu = 0.0, fro_sigma = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = expr::fd_step(expr::kGradStep, x[j]);
      y = x;
      y[j] = x[j] + h;
      dyn.drift(t, y, mu_a);
      dyn.diffusion(t, y, s_a);
      y[j] = x[j] - h;
      dyn.drift(t, y, mu_b);
      dyn.diffusion(t, y, s_b);
      for (std::size_t i = 0; i < d; ++i) fro_mu += std::pow((mu_a[i] - mu_b[i]) / (2 * h), 2);
      for (std::size_t i = 0; i < dm; ++i) fro_sigma += std::pow((s_a[i] - s_b[i]) / (2 * h), 2);
    }
    jac_mu = std::max(jac_mu, std::sqrt(fro_mu));
    jac_sigma = std::max(jac_sigma, std::sqrt(fro_sigma));

    double dist2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = x[i] + 1e-2 * rng.normal();
      dist2 += (y[i] - x[i]) * (y[i] - x[i]);
    }
    dyn.drift(t, x, mu_a);
    dyn.diffusion(t, x, s_a);
    dyn.drift(t, y, mu_b);
    dyn.diffusion(t, y, s_b);
    double dmu = 0.0, ds = 0.0;
    for (std::size_t i = 0; i < d; ++i) dmu += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
    for (std::size_t i = 0; i < dm; ++i) ds += (s_a[i] - s_b[i]) * (s_a[i] - s_b[i]);
    if (dist2 > 0.0) pairs = std::max(pairs, (std::sqrt(dmu) + std::sqrt(ds)) / std::sqrt(dist2));
  }
  return std::max(jac_mu + jac_sigma, pairs);
}

struct StabilityGap {
  double estimate = 0.0;        // MC mean of |X^{t,x}_s - X^{t',x'}_s|^2
  double standard_error = 0.0;
  double bound = 0.0;
  double lipschitz = 0.0;
};

// Mean-square gap between the solutions started at (t, x) and (t2, x2),
// t <= t2 <= s, sharing Brownian increments on [t2, s]. The uniform grid on
// [t, s] has M steps and t2 must fall on it.
inline StabilityGap stability_gap(const ProblemSpec& p, double t, std::span<const double> x, double t2,
                                  std::span<const double> x2, double s, std::size_t M, std::size_t n,
                                  const BrownianDriver& drv, double lipschitz, std::size_t threads = 0) {
  if (!(t <= t2 && t2 <= s && s <= p.T)) throw Error("stability_gap needs t <= t' <= s <= T");
  detail::check_start(p, t, x, M, n);
  detail::check_start(p, t2, x2, M, n);
  StabilityGap out;
  out.lipschitz = lipschitz;
  out.bound = stability_bound(p, t, x, t2, x2, lipschitz);

  const double dt = (s - t) / static_cast<double>(M);
  std::size_t offset = 0;
  if (t2 > t) {
    const double k = (t2 - t) / dt;
    if (std::abs(k - std::round(k)) > 1e-6) throw Error("t' must lie on the Euler grid of [t, s]");
    offset = static_cast<std::size_t>(std::llround(k));
  }
  const Dynamics dyn(p);
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> gaps(n);
  parallel_for(n, threads, [&](std::size_t path) {
    PathWalker a(dyn, x), b(dyn, x2);
    PathNoise noise = drv.path(path);
    std::vector<double> dw(p.m);
    for (std::size_t k = 0; k < M; ++k) {
      noise.increments(dw, sqrt_dt);
      const double tk = t + static_cast<double>(k) * dt;
      try {
        a.step(tk, dt, dw);
        if (k >= offset) b.step(tk, dt, dw);
      } catch (const EvalError& e) {
        detail::rethrow_at(e, path, k, a.state());
      }
    }
    if (a.escaped() || b.escaped()) throw SimulationError("path " + std::to_string(path) + " exploded");
    double g = 0.0;
    for (std::size_t i = 0; i < p.d; ++i) g += std::pow(a.state()[i] - b.state()[i], 2);
    gaps[path] = g;
  });
  double sum = 0.0, sum2 = 0.0;
  for (double g : gaps) {
    sum += g;
    sum2 += g * g;
  }
  const double nn = static_cast<double>(n);
  out.estimate = sum / nn;
  out.standard_error = n > 1 ? std::sqrt(std::max(0.0, sum2 / nn - out.estimate * out.estimate) / (nn - 1.0)) : 0.0;
  return out;
}

}  // namespace sfpe
