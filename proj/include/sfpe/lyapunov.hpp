#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfpe/error.hpp"
#include "sfpe/expr.hpp"
#include "sfpe/parallel.hpp"
#include "sfpe/problem.hpp"
#include "sfpe/random.hpp"
#include "sfpe/sde.hpp"

namespace sfpe {

enum class LyapunovForm { space_time, elliptic };

// Positive weight function. In elliptic form the stored expression is V(x)
// and the effective space-time function is exp(-rho t) V(x).
class LyapunovSpec {
 public:
  LyapunovSpec() = default;

  static LyapunovSpec space_time(expr::Ast v) {
    LyapunovSpec s;
    s.v_ = std::move(v);
    s.form_ = LyapunovForm::space_time;
    return s;
  }

  static LyapunovSpec elliptic(expr::Ast v, double rho) {
    if (v.uses_time()) throw LyapunovError("elliptic Lyapunov function must not depend on t");
    LyapunovSpec s;
    s.v_ = std::move(v);
    s.rho_ = rho;
    s.form_ = LyapunovForm::elliptic;
    return s;
  }

  // V(x) = (1 + |x|^2)^(p/2) with rho = (p c / 2) max{p + 1, 3}.
  static LyapunovSpec polynomial(double p, double c, std::size_t d) {
    if (!(p > 0.0) || !(c > 0.0)) throw LyapunovError("polynomial Lyapunov family needs p > 0 and c > 0");
    LyapunovSpec s = elliptic(expr::parse("(1 + norm2)^" + expr::detail::format_number(p / 2.0), expr::Role::lyapunov, d),
                              polynomial_rho(p, c));
    s.poly_exponent_ = p;
    return s;
  }

  static double polynomial_rho(double p, double c) { return p * c / 2.0 * std::max(p + 1.0, 3.0); }

  LyapunovForm form() const noexcept { return form_; }
  double rho() const noexcept { return rho_; }
  const expr::Ast& expression() const noexcept { return v_; }
  bool analytic() const noexcept { return poly_exponent_.has_value(); }
  std::optional<double> exponent() const noexcept { return poly_exponent_; }

  // Spatial part: V(x) for elliptic form, V(t, x) otherwise.
  double base(double t, std::span<const double> x) const {
    if (analytic()) {
      double n2 = 0.0;
      for (double xi : x) n2 += xi * xi;
      return std::pow(1.0 + n2, *poly_exponent_ / 2.0);
    }
    return v_(t, x);
  }

  // Effective space-time value; throws on a non-positive value.
  double operator()(double t, std::span<const double> x) const {
    double b = base(t, x);
    if (!(b > 0.0)) throw LyapunovError("Lyapunov function is not positive at t=" + expr::detail::format_number(t) +
                                        ", x=" + describe_point(x));
    return form_ == LyapunovForm::elliptic ? std::exp(-rho_ * t) * b : b;
  }

  // Gradient of the spatial part.
  std::vector<double> gradient(double t, std::span<const double> x) const {
    if (!analytic()) return expr::grad_fd(v_, expr::Env{t, x, 0.0});
    const double p = *poly_exponent_;
    double n2 = 0.0;
    for (double xi : x) n2 += xi * xi;
    const double v = std::pow(1.0 + n2, p / 2.0);
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = p * v * x[i] / (1.0 + n2);
    return g;
  }

  // Row-major Hessian of the spatial part:
  // p V(x) [ (p - 2) x_i x_j / (1 + |x|^2)^2 + delta_ij / (1 + |x|^2) ] for the polynomial family.
  std::vector<double> hessian(double t, std::span<const double> x) const {
    if (!analytic()) return expr::hess_fd(v_, expr::Env{t, x, 0.0});
    const double p = *poly_exponent_;
    const std::size_t d = x.size();
    double n2 = 0.0;
    for (double xi : x) n2 += xi * xi;
    const double q = 1.0 + n2;
    const double v = std::pow(q, p / 2.0);
    std::vector<double> h(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        h[i * d + j] = p * v * ((p - 2.0) * x[i] * x[j] / (q * q) + (i == j ? 1.0 / q : 0.0));
    return h;
  }

  double time_derivative(double t, std::span<const double> x) const {
    if (form_ == LyapunovForm::elliptic) return -rho_ * (*this)(t, x);
    return expr::time_derivative_fd(v_, expr::Env{t, x, 0.0});
  }

 private:
  expr::Ast v_;
  double rho_ = 0.0;
  LyapunovForm form_ = LyapunovForm::space_time;
  std::optional<double> poly_exponent_;
};

inline LyapunovSpec polynomial_lyapunov(double p, double c, std::size_t d) { return LyapunovSpec::polynomial(p, c, d); }

// 1/2 Trace(sigma sigma^* H) + <mu, grad> of the spatial part at (t, x).
inline double elliptic_part(const ProblemSpec& p, const LyapunovSpec& V, double t, std::span<const double> x) {
  const Dynamics dyn(p);
  const std::size_t d = p.d, m = p.m;
  std::vector<double> mu(d), sigma(d * m);
  dyn.drift(t, x, mu);
  dyn.diffusion(t, x, sigma);
  const auto grad = V.gradient(t, x);
  const auto hess = V.hessian(t, x);
  double drift_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) drift_term += mu[i] * grad[i];
  // Trace(sigma sigma^* H) = sum_{i,j} (sigma sigma^*)_{ij} H_{ji}
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double a = 0.0;
      for (std::size_t k = 0; k < m; ++k) a += sigma[i * m + k] * sigma[j * m + k];
      trace += a * hess[j * d + i];
    }
  return 0.5 * trace + drift_term;
}

// dV/dt + 1/2 Trace(sigma sigma^* Hess_x V) + <mu, grad_x V> of the effective
// space-time function.
inline double generator_value(const ProblemSpec& p, const LyapunovSpec& V, double t, std::span<const double> x) {
  if (V.form() == LyapunovForm::elliptic) {
    const double base = V.base(t, x);
    if (!(base > 0.0)) throw LyapunovError("Lyapunov function is not positive at x=" + describe_point(x));
    return std::exp(-V.rho() * t) * (-V.rho() * base + elliptic_part(p, V, t, x));
  }
  (void)V(t, x);  // positivity
  return V.time_derivative(t, x) + elliptic_part(p, V, t, x);
}

struct GeneratorCheck {
  std::size_t points = 0;
  double max_value = -HUGE_VAL;  // max of generator_value over the sample
  double worst_t = 0.0;
  std::vector<double> worst_x;
  bool violation = false;
  std::optional<double> violating_t;
  std::vector<double> violating_x;
  double violating_value = 0.0;
};

// Samples (t, x) with t ~ U[0, T], x ~ N(0, s^2 I), s in {1, 4, 16}, plus the
// given probe points (evaluated at every t in {0, T/2, T}). A point violates
// the inequality if the generator exceeds 1e-7 (1 + |V(t, x)|).
inline GeneratorCheck check_generator(const ProblemSpec& p, const LyapunovSpec& V, std::size_t n_points,
                                      std::uint64_t seed, const std::vector<std::vector<double>>& probes = {}) {
  if (n_points == 0) throw Error("check_generator needs at least one point");
  GeneratorCheck out;
  auto visit = [&](double t, std::span<const double> x) {
    if (!p.domain.contains(x)) return;
    const double g = generator_value(p, V, t, x);
    const double v = V(t, x);
    ++out.points;
    if (g > out.max_value) {
      out.max_value = g;
      out.worst_t = t;
      out.worst_x.assign(x.begin(), x.end());
    }
    if (g > 1e-7 * (1.0 + std::abs(v)) && (!out.violation || g > out.violating_value)) {
      out.violation = true;
      out.violating_t = t;
      out.violating_x.assign(x.begin(), x.end());
      out.violating_value = g;
    }
  };
  PathNoise rng(mix64(seed), 0x6E7Eull, 0);
  std::vector<double> x(p.d);
  for (std::size_t k = 0; k < n_points; ++k) {
    const double t = p.T * rng.uniform();
    sample_state(rng, x, k);
    if (p.domain.is_box() && !p.domain.contains(x))
      for (std::size_t i = 0; i < p.d; ++i) x[i] = p.domain.lo[i] + (p.domain.hi[i] - p.domain.lo[i]) * rng.uniform();
    visit(t, x);
  }
  for (const auto& probe : probes) {
    if (probe.size() != p.d) throw Error("probe point has wrong dimension");
    for (double t : {0.0, p.T / 2.0, p.T}) visit(t, probe);
  }
  return out;
}

struct SupermartingaleReport {
  double start_value = 0.0;  // V(t, x)
  double mean = 0.0;         // sample mean of V(s, X_s)
  double standard_error = 0.0;
  double allowance = 0.0;  // 3 SE + kappa dt
  double margin = 0.0;     // start_value + allowance - mean
  bool pass = false;
  std::size_t escaped = 0;
};

// Monte-Carlo check of E[V(s, X^{t,x}_s)] <= V(t, x) with M Euler steps on [t, s].
// PASS iff mean <= V(t, x) + 3 SE + kappa dt, kappa defaulting to V(t, x).
inline SupermartingaleReport supermartingale_test(const ProblemSpec& p, const LyapunovSpec& V, double t,
                                                  std::span<const double> x, double s, std::size_t M, std::size_t n,
                                                  const BrownianDriver& drv, std::optional<double> kappa = std::nullopt,
                                                  std::size_t threads = 0) {
  if (!(t <= s && s <= p.T)) throw Error("supermartingale_test needs t <= s <= T");
  detail::check_start(p, t, x, M, n);
  SupermartingaleReport out;
  out.start_value = V(t, x);
  const Dynamics dyn(p);
  const double dt = (s - t) / static_cast<double>(M);
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> values(n);
  std::vector<char> escaped(n, 0);
  parallel_for(n, threads, [&](std::size_t path) {
    PathWalker w(dyn, x);
    PathNoise noise = drv.path(path);
    std::vector<double> dw(p.m);
    for (std::size_t k = 0; k < M; ++k) {
      noise.increments(dw, sqrt_dt);
      try {
        w.step(t + static_cast<double>(k) * dt, dt, dw);
      } catch (const EvalError& e) {
        detail::rethrow_at(e, path, k, w.state());
      }
    }
    escaped[path] = w.escaped();
    values[path] = V(s, w.state());
  });
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.escaped += escaped[i] ? 1 : 0;
    sum += values[i];
    sum2 += values[i] * values[i];
  }
  const double nn = static_cast<double>(n);
  out.mean = sum / nn;
  out.standard_error = n > 1 ? std::sqrt(std::max(0.0, sum2 / nn - out.mean * out.mean) / (nn - 1.0)) : 0.0;
  out.allowance = 3.0 * out.standard_error + kappa.value_or(out.start_value) * dt;
  out.margin = out.start_value + out.allowance - out.mean;
  out.pass = out.escaped == 0 && out.mean <= out.start_value + out.allowance;
  return out;
}

}  // namespace sfpe
